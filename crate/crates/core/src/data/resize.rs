use crate::tensor::Tensor;
use crate::{Error, Result};

/// Source index pair and weight for output index `i` when resampling an axis
/// of `n_in` pixels to `n_out`, with half-pixel centers.
fn taps(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, src - i0 as f64)
}

fn planes(map: &Tensor) -> Result<(usize, usize, usize)> {
    match *map.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(format!("resize expects [H, W] or [C, H, W], got {s:?}"))),
    }
}

fn with_spatial(map: &Tensor, h: usize, w: usize) -> Vec<usize> {
    if map.rank() == 2 {
        vec![h, w]
    } else {
        vec![map.shape()[0], h, w]
    }
}

/// Separable bilinear resize of `[H, W]` or `[C, H, W]` maps with
/// half-pixel-center alignment. Outputs stay within the source value range.
pub fn resize_bilinear(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be at least 1×1"));
    }
    let (c, h, w) = planes(map)?;
    if (h, w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let xt: Vec<_> = (0..out_w).map(|j| taps(j, w, out_w)).collect();
    let yt: Vec<_> = (0..out_h).map(|i| taps(i, h, out_h)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut rows = vec![0.0; h * out_w];
    for p in 0..c {
        let src = &map.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (j, &(x0, x1, wx)) in xt.iter().enumerate() {
                rows[y * out_w + j] = (1.0 - wx) * src[y * w + x0] + wx * src[y * w + x1];
            }
        }
        for &(y0, y1, wy) in &yt {
            for j in 0..out_w {
                out.push((1.0 - wy) * rows[y0 * out_w + j] + wy * rows[y1 * out_w + j]);
            }
        }
    }
    Tensor::from_vec(&with_spatial(map, out_h, out_w), out)
}

/// Nearest-neighbour resize; keeps binary masks binary.
pub fn resize_nearest(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize target must be at least 1×1"));
    }
    let (c, h, w) = planes(map)?;
    let pick = |i: usize, n_in: usize, n_out: usize| {
        (((i as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
    };
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for p in 0..c {
        let src = &map.data()[p * h * w..(p + 1) * h * w];
        for i in 0..out_h {
            let y = pick(i, h, out_h);
            for j in 0..out_w {
                out.push(src[y * w + pick(j, w, out_w)]);
            }
        }
    }
    Tensor::from_vec(&with_spatial(map, out_h, out_w), out)
}
