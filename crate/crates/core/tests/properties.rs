use proptest::prelude::*;
use racdnn::attention::{compose, invert_transform, make_transform, AffineAttention, IDENTITY};
use racdnn::cli::{Checkpoint, RunConfig};
use racdnn::data::{resize_bilinear, resize_nearest};
use racdnn::metrics::{pr_curve, quantize};
use racdnn::nn::{conv_output_size, ParamStore};
use racdnn::tensor::Tensor;

fn map(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #[test]
    fn quantize_is_monotone(a in -0.5f64..1.5, b in -0.5f64..1.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo) <= quantize(hi));
    }

    #[test]
    fn recall_falls_as_threshold_rises(pred in map(36), bits in prop::collection::vec(any::<bool>(), 36)) {
        let p = Tensor::from_vec(&[6, 6], pred).unwrap();
        let g = Tensor::from_vec(&[6, 6], bits.iter().map(|&b| f64::from(u8::from(b))).collect()).unwrap();
        let curve = pr_curve(&p, &g).unwrap();
        prop_assert_eq!(curve.len(), 256);
        for w in curve.windows(2) {
            prop_assert!(w[1].recall <= w[0].recall);
        }
        prop_assert!(curve.iter().all(|c| (0.0..=1.0).contains(&c.precision)));
        if bits.iter().any(|&b| b) {
            prop_assert_eq!(curve[0].recall, 1.0);
        }
    }

    #[test]
    fn constrained_windows_stay_inside(u in -30.0f64..30.0, x in -30.0f64..30.0, y in -30.0f64..30.0) {
        let a = AffineAttention::from_raw([u, x, y]);
        prop_assert!(a.is_inside_image());
        let m = compose(&make_transform(&a).unwrap(), &invert_transform(&a).unwrap());
        for (row, id) in m.iter().zip(&IDENTITY) {
            for (v, w) in row.iter().zip(id) {
                prop_assert!((v - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn resizing_preserves_constants(v in 0.0f64..=1.0, h in 1usize..9, w in 1usize..9, oh in 1usize..12, ow in 1usize..12) {
        let t = Tensor::from_vec(&[h, w], vec![v; h * w]).unwrap();
        for r in [resize_bilinear(&t, oh, ow).unwrap(), resize_nearest(&t, oh, ow).unwrap()] {
            prop_assert_eq!(r.shape(), &[oh, ow]);
            prop_assert!(r.data().iter().all(|x| (x - v).abs() <= 1e-12));
        }
    }

    #[test]
    fn conv_sizes_follow_the_formula(n in 1usize..64, k in 1usize..6, s in 1usize..4, p in 0usize..3) {
        match conv_output_size(n, k, s, p) {
            Ok(o) => prop_assert_eq!(o, (n + 2 * p - k) / s + 1),
            Err(_) => prop_assert!(n + 2 * p < k),
        }
    }

    #[test]
    fn checkpoints_round_trip(values in prop::collection::vec(any::<f64>(), 1..20), seed in any::<u64>()) {
        let mut store = ParamStore::new();
        store.insert_param("w", Tensor::from_vec(&[values.len()], values.clone()).unwrap());
        store.insert_buffer("b.running_mean", Tensor::from_vec(&[1], vec![values[0]]).unwrap());
        let c = Checkpoint { store, optimizer: None, config: RunConfig { seed, ..RunConfig::default() } };
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.to_bytes(), &bytes);
        prop_assert_eq!(back.config.seed, seed);
        for cut in [1, bytes.len() / 2, bytes.len() - 1] {
            prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
    }
}
