//! Spatial transformer restricted to isotropic scale plus translation.
//!
//! Coordinates are normalized to `[-1, 1]` per axis with pixel-center
//! alignment: `-1` is the center of the first pixel, `+1` the center of the
//! last. A transform maps output-grid coordinates to source sampling
//! coordinates.

mod sampler;

pub use sampler::{attention_grid, bilinear_sample, constrain_attention, st, st_inverse, GridDirection};

use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

/// Lower bound of the attention scale produced by [`AffineAttention::from_raw`].
pub const S_MIN: f64 = 0.2;
/// Upper bound of the attention scale produced by [`AffineAttention::from_raw`].
pub const S_MAX: f64 = 1.0;

/// 2×3 affine matrix; the homogeneous row `[0, 0, 1]` is implicit.
pub type Transform = [[f64; 3]; 2];

pub const IDENTITY: Transform = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

/// Isotropic scale `scale` with translation `(tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineAttention {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineAttention {
    pub const IDENTITY: AffineAttention = AffineAttention {
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(scale: f64, tx: f64, ty: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidScale(scale));
        }
        if !tx.is_finite() || !ty.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "attention translation ({tx}, {ty}) is not finite"
            )));
        }
        Ok(AffineAttention { scale, tx, ty })
    }

    /// Maps an unconstrained regressor output `(u_s, u_x, u_y)` to a window
    /// that always lies inside the image:
    /// `scale = S_MIN + (S_MAX - S_MIN)·σ(u_s)`, `t = (1 - scale)·tanh(u)`.
    pub fn from_raw(raw: [f64; 3]) -> Self {
        let (scale, tx, ty) = constrain(raw, S_MIN, S_MAX);
        AffineAttention { scale, tx, ty }
    }

    /// Whether the attended window stays within the image.
    pub fn is_inside_image(&self) -> bool {
        const TOL: f64 = 1e-12;
        self.scale > 0.0 && self.tx.abs() + self.scale <= 1.0 + TOL && self.ty.abs() + self.scale <= 1.0 + TOL
    }

    /// Whether the normalized source point `(x, y)` is covered by the window.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let inv = 1.0 / self.scale;
        (inv * x + -self.tx * inv).abs() <= 1.0 && (inv * y + -self.ty * inv).abs() <= 1.0
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.scale, self.tx, self.ty]
    }
}

pub(crate) fn constrain(raw: [f64; 3], s_min: f64, s_max: f64) -> (f64, f64, f64) {
    let scale = s_min + (s_max - s_min) * crate::tensor::sigmoid_value(raw[0]);
    let free = 1.0 - scale;
    (scale, free * raw[1].tanh(), free * raw[2].tanh())
}

/// The forward attention matrix `[[s, 0, tx], [0, s, ty]]`.
pub fn make_transform(p: &AffineAttention) -> Result<Transform> {
    if !(p.scale > 0.0) {
        return Err(Error::InvalidScale(p.scale));
    }
    Ok([[p.scale, 0.0, p.tx], [0.0, p.scale, p.ty]])
}

/// The inverse attention matrix `[[1/s, 0, -tx/s], [0, 1/s, -ty/s]]`.
pub fn invert_transform(p: &AffineAttention) -> Result<Transform> {
    if !(p.scale > 0.0) {
        return Err(Error::InvalidScale(p.scale));
    }
    let inv = 1.0 / p.scale;
    Ok([[inv, 0.0, -p.tx * inv], [0.0, inv, -p.ty * inv]])
}

/// Homogeneous product `a · b` of two affine matrices.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    let mut out = [[0.0; 3]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
        row[2] += a[r][2];
    }
    out
}

/// Normalized coordinate of pixel `i` along an axis of `n` pixels.
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Normalized source sampling coordinates, `[H', W', 2]` holding `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    pub coords: Tensor,
}

impl SamplingGrid {
    pub fn height(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let k = (i * self.width() + j) * 2;
        (self.coords.data()[k], self.coords.data()[k + 1])
    }
}

/// Applies `t` to the regular coordinate lattice of an `out_h × out_w` output.
pub fn generate_grid(t: &Transform, out_h: usize, out_w: usize) -> Result<SamplingGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("grid size must be >= 1"));
    }
    let mut coords = Vec::with_capacity(out_h * out_w * 2);
    for i in 0..out_h {
        let cy = normalized_coord(i, out_h);
        for j in 0..out_w {
            let cx = normalized_coord(j, out_w);
            coords.push(t[0][0] * cx + t[0][1] * cy + t[0][2]);
            coords.push(t[1][0] * cx + t[1][1] * cy + t[1][2]);
        }
    }
    Ok(SamplingGrid {
        coords: Tensor::from_vec(&[out_h, out_w, 2], coords)?,
    })
}

/// Samples `source` (`[C, H, W]`) at `grid` without recording gradients.
pub fn sample(source: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let mut g = Graph::no_grad();
    let s = g.constant(source.clone());
    let gr = g.constant(grid.coords.clone());
    let out = bilinear_sample(&mut g, s, gr)?;
    Ok(g.value(out).clone())
}

/// Attended `out_h × out_w` patch of `image` (`[C, H, W]`).
pub fn st_tensor(image: &Tensor, p: &AffineAttention, out_h: usize, out_w: usize) -> Result<Tensor> {
    sample(image, &generate_grid(&make_transform(p)?, out_h, out_w)?)
}

/// Writes `patch` (`[C, h, w]`) back onto an `out_h × out_w` canvas over the
/// window of `p`; canvas pixels outside the window are exactly zero.
pub fn st_inverse_tensor(patch: &Tensor, p: &AffineAttention, out_h: usize, out_w: usize) -> Result<Tensor> {
    sample(patch, &generate_grid(&invert_transform(p)?, out_h, out_w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matrix_by_substitution() {
        let p = AffineAttention::new(0.5, 0.2, -0.1).unwrap();
        assert_eq!(make_transform(&p).unwrap(), [[0.5, 0.0, 0.2], [0.0, 0.5, -0.1]]);
        assert_eq!(make_transform(&AffineAttention::IDENTITY).unwrap(), IDENTITY);
    }

    #[test]
    fn scale_only_maps_corner() {
        let t = make_transform(&AffineAttention::new(0.5, 0.0, 0.0).unwrap()).unwrap();
        let x = -t[0][0] - t[0][1] + t[0][2];
        let y = -t[1][0] - t[1][1] + t[1][2];
        assert_eq!((x, y), (-0.5, -0.5));
    }

    #[test]
    fn inverse_matrix_values() {
        let p = AffineAttention::new(0.5, 0.2, -0.1).unwrap();
        let inv = invert_transform(&p).unwrap();
        let want = [[2.0, 0.0, -0.4], [0.0, 2.0, 0.2]];
        for r in 0..2 {
            for c in 0..3 {
                assert!((inv[r][c] - want[r][c]).abs() < 1e-15);
            }
        }
        assert_eq!(invert_transform(&AffineAttention::IDENTITY).unwrap(), IDENTITY);
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        assert!(matches!(
            AffineAttention::new(0.0, 0.0, 0.0),
            Err(Error::InvalidScale(_))
        ));
        let bad = AffineAttention {
            scale: -1.0,
            tx: 0.0,
            ty: 0.0,
        };
        assert!(matches!(make_transform(&bad), Err(Error::InvalidScale(_))));
        assert!(matches!(invert_transform(&bad), Err(Error::InvalidScale(_))));
    }

    #[test]
    fn constraint_mapping_at_zero() {
        let p = AffineAttention::from_raw([0.0, 0.0, 0.0]);
        assert!((p.scale - 0.6).abs() < 1e-15);
        assert_eq!((p.tx, p.ty), (0.0, 0.0));
    }

    #[test]
    fn extreme_raw_values_stay_inside() {
        for raw in [
            [1e6, 1e6, -1e6],
            [-1e6, -1e6, 1e6],
            [50.0, 3.0, -7.0],
            [0.0, 1e300, 0.0],
        ] {
            let p = AffineAttention::from_raw(raw);
            assert!(p.is_inside_image(), "{raw:?} -> {p:?}");
            assert!((S_MIN..=S_MAX).contains(&p.scale));
        }
    }

    #[test]
    fn identity_grid_is_regular_lattice() {
        let g = generate_grid(&IDENTITY, 3, 5).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert_eq!(g.point(i, j), (normalized_coord(j, 5), normalized_coord(i, 3)));
            }
        }
    }

    #[test]
    fn half_scale_grid_is_bounded() {
        let t = make_transform(&AffineAttention::new(0.5, 0.0, 0.0).unwrap()).unwrap();
        let g = generate_grid(&t, 9, 9).unwrap();
        assert!(g.coords.data().iter().all(|v| (-0.5..=0.5).contains(v)));
    }

    #[test]
    fn bottom_right_quadrant_grid() {
        let t = make_transform(&AffineAttention::new(0.5, 0.5, 0.5).unwrap()).unwrap();
        let g = generate_grid(&t, 4, 4).unwrap();
        assert_eq!(g.point(0, 0), (0.0, 0.0));
        assert_eq!(g.point(3, 3), (1.0, 1.0));
        assert!(g.coords.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn window_coverage() {
        let p = AffineAttention::new(0.5, -0.5, -0.5).unwrap();
        assert!(p.covers(-1.0, -1.0));
        assert!(p.covers(0.0, 0.0));
        assert!(!p.covers(0.01, -0.5));
    }
}
