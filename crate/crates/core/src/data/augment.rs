use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::resize::{resize_bilinear, resize_nearest};
use super::Sample;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MIN_CROP_AREA: f64 = 0.8;
pub const JITTER_RANGE: (f64, f64) = (0.8, 1.2);
/// Largest translation as a fraction of the image side.
pub const MAX_SHIFT: f64 = 0.125;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Crop window `(x0, y0, w, h)` in pixels.
    pub crop: (usize, usize, usize, usize),
    /// Translation `(dx, dy)` in pixels; positive moves content right/down.
    pub shift: (i64, i64),
    pub jitter: [f64; 3],
}

impl AugmentParams {
    pub fn identity(h: usize, w: usize) -> Self {
        AugmentParams {
            crop: (0, 0, w, h),
            shift: (0, 0),
            jitter: [1.0; 3],
        }
    }

    pub fn sample(h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = rng.random_range(MIN_CROP_AREA..=1.0f64).sqrt();
        let cw = ((w as f64 * side).ceil() as usize).clamp(1, w);
        let ch = ((h as f64 * side).ceil() as usize).clamp(1, h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        let mx = (w as f64 * MAX_SHIFT) as i64;
        let my = (h as f64 * MAX_SHIFT) as i64;
        AugmentParams {
            crop: (x0, y0, cw, ch),
            shift: (rng.random_range(-mx..=mx), rng.random_range(-my..=my)),
            jitter: std::array::from_fn(|_| rng.random_range(JITTER_RANGE.0..=JITTER_RANGE.1)),
        }
    }
}

fn crop(t: &Tensor, (x0, y0, cw, ch): (usize, usize, usize, usize)) -> Result<Tensor> {
    let (c, h, w) = match *t.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::shape(format!("cannot crop shape {s:?}"))),
    };
    if x0 + cw > w || y0 + ch > h || cw == 0 || ch == 0 {
        return Err(Error::InvalidArgument(format!("crop window exceeds {h}×{w} image")));
    }
    let mut out = Vec::with_capacity(c * ch * cw);
    for p in 0..c {
        for y in y0..y0 + ch {
            let row = p * h * w + y * w;
            out.extend_from_slice(&t.data()[row + x0..row + x0 + cw]);
        }
    }
    let shape = if t.rank() == 2 { vec![ch, cw] } else { vec![c, ch, cw] };
    Tensor::from_vec(&shape, out)
}

/// Reflects an out-of-range index back into `0..n` (edge pixel not repeated).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn translate(t: &Tensor, (dx, dy): (i64, i64)) -> Tensor {
    if (dx, dy) == (0, 0) {
        return t.clone();
    }
    let (h, w) = (t.shape()[t.rank() - 2], t.shape()[t.rank() - 1]);
    let planes = t.len() / (h * w);
    let mut out = vec![0.0; t.len()];
    for p in 0..planes {
        for y in 0..h {
            let sy = reflect(y as i64 - dy, h);
            for x in 0..w {
                let sx = reflect(x as i64 - dx, w);
                out[p * h * w + y * w + x] = t.data()[p * h * w + sy * w + sx];
            }
        }
    }
    Tensor::from_vec(t.shape(), out).expect("same shape")
}

/// Applies crop→resize, translation and (image only) colour jitter.
pub fn apply(s: &Sample, p: &AugmentParams) -> Result<Sample> {
    let (h, w) = (s.mask.shape()[0], s.mask.shape()[1]);
    let image = resize_bilinear(&crop(&s.image, p.crop)?, h, w)?;
    let mask = resize_nearest(&crop(&s.mask, p.crop)?, h, w)?;
    let mut image = translate(&image, p.shift);
    let mask = translate(&mask, p.shift);
    let plane = h * w;
    for (c, chunk) in image.data_mut().chunks_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v * p.jitter[c]).clamp(0.0, 1.0);
        }
    }
    Ok(Sample {
        id: s.id.clone(),
        image,
        mask,
    })
}

pub fn augment(s: &Sample, seed: u64) -> Result<Sample> {
    let (h, w) = (s.mask.shape()[0], s.mask.shape()[1]);
    apply(s, &AugmentParams::sample(h, w, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate, DatasetSpec};

    #[test]
    fn identity_params_leave_sample_unchanged() {
        let s = &generate(&DatasetSpec::new(3, 1, 24)).unwrap()[0];
        assert_eq!(&apply(s, &AugmentParams::identity(24, 24)).unwrap(), s);
    }

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn outputs_stay_valid() {
        let s = &generate(&DatasetSpec::new(4, 1, 24)).unwrap()[0];
        for seed in 0..20 {
            let a = augment(s, seed).unwrap();
            assert!(a.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(a, augment(s, seed).unwrap());
        }
    }
}
