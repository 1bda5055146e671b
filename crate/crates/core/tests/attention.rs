use racdnn::attention::{normalized_coord, st, st_inverse, st_tensor, AffineAttention};
use racdnn::tensor::{Graph, Tensor};

fn ramp(c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..c * h * w).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
    Tensor::from_vec(&[c, h, w], data).unwrap()
}

fn params(a: &AffineAttention) -> Tensor {
    Tensor::from_vec(&[1, 3], a.to_array().to_vec()).unwrap()
}

#[test]
fn identity_window_reproduces_the_image() {
    let img = ramp(2, 9, 7);
    let out = st_tensor(&img, &AffineAttention::IDENTITY, 9, 7).unwrap();
    let worst = out
        .data()
        .iter()
        .zip(img.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12);
}

#[test]
fn attended_patch_matches_direct_interpolation() {
    let (h, w) = (10, 12);
    let img = ramp(1, h, w);
    let a = AffineAttention::new(0.4, 0.3, -0.2).unwrap();
    let out = st_tensor(&img, &a, 5, 6).unwrap();
    for i in 0..5 {
        for j in 0..6 {
            let x = a.scale * normalized_coord(j, 6) + a.tx;
            let y = a.scale * normalized_coord(i, 5) + a.ty;
            let (px, py) = ((x + 1.0) / 2.0 * (w - 1) as f64, (y + 1.0) / 2.0 * (h - 1) as f64);
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            let (fx, fy) = (px - x0 as f64, py - y0 as f64);
            let at = |r: usize, c: usize| img.data()[r.min(h - 1) * w + c.min(w - 1)];
            let want = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            assert!((out.data()[i * 6 + j] - want).abs() < 1e-12, "({i}, {j})");
        }
    }
}

#[test]
fn inverse_writes_only_inside_the_window() {
    let m = 16;
    let a = AffineAttention::new(0.5, -0.25, 0.3).unwrap();
    let mut g = Graph::no_grad();
    let patch = g.constant(Tensor::from_vec(&[1, 1, 8, 8], vec![1.0; 64]).unwrap());
    let p = g.constant(params(&a));
    let canvas = st_inverse(&mut g, patch, p, m, m).unwrap();
    let c = g.value(canvas);
    for y in 0..m {
        for x in 0..m {
            let v = c.data()[y * m + x];
            if a.covers(normalized_coord(x, m), normalized_coord(y, m)) {
                assert!((v - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}

#[test]
fn attend_then_write_back_round_trips_inside_the_window() {
    let n = 17;
    let img = ramp(1, n, n);
    let a = AffineAttention::new(0.5, 0.5, -0.5).unwrap();
    let mut g = Graph::no_grad();
    let x = g.constant(img.clone().reshape(&[1, 1, n, n]).unwrap());
    let p = g.constant(params(&a));
    let patch = st(&mut g, x, p, 9, 9).unwrap();
    let back = st_inverse(&mut g, patch, p, n, n).unwrap();
    let b = g.value(back);
    let mut inside = 0;
    for y in 0..n {
        for x in 0..n {
            if a.covers(normalized_coord(x, n), normalized_coord(y, n)) {
                inside += 1;
                assert!((b.data()[y * n + x] - img.data()[y * n + x]).abs() < 1e-9);
            }
        }
    }
    assert_eq!(inside, 81);
}

#[test]
fn non_positive_scales_are_rejected() {
    assert!(AffineAttention::new(0.0, 0.0, 0.0).is_err());
    assert!(AffineAttention::new(-0.5, 0.0, 0.0).is_err());
    let mut g = Graph::no_grad();
    let x = g.constant(ramp(1, 4, 4).reshape(&[1, 1, 4, 4]).unwrap());
    let p = g.constant(Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap());
    assert!(st(&mut g, x, p, 2, 2).is_err());
}
