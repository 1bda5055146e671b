use super::normalized_coord;
use crate::tensor::{sigmoid_value, Backward, Graph, Tensor, Var};
use crate::{Error, Result};

/// Lower interpolation index, upper index and fractional weight of a
/// normalized coordinate along an axis of `n` pixels. Caller guarantees
/// `coord ∈ [-1, 1]`.
#[inline]
fn axis(coord: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let p = (coord + 1.0) * 0.5 * (n - 1) as f64;
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f64)
}

#[inline]
fn in_bounds(x: f64, y: f64) -> bool {
    (-1.0..=1.0).contains(&x) && (-1.0..=1.0).contains(&y)
}

#[derive(Clone, Copy)]
struct SampleDims {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

struct SampleOp {
    dims: SampleDims,
}

impl Backward for SampleOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let d = self.dims;
        let src = inputs[0].data();
        let grid = inputs[1].data();
        let mut dsrc = wanted[0].then(|| vec![0.0; src.len()]);
        let mut dgrid = wanted[1].then(|| vec![0.0; grid.len()]);
        let (sx, sy) = ((d.w.max(2) - 1) as f64 * 0.5, (d.h.max(2) - 1) as f64 * 0.5);
        let plane = d.h * d.w;
        let out_plane = d.oh * d.ow;
        for b in 0..d.batch {
            for q in 0..out_plane {
                let gi = (b * out_plane + q) * 2;
                let (gx, gy) = (grid[gi], grid[gi + 1]);
                if !in_bounds(gx, gy) {
                    continue;
                }
                let (x0, x1, wx) = axis(gx, d.w);
                let (y0, y1, wy) = axis(gy, d.h);
                let (mut dgx, mut dgy) = (0.0, 0.0);
                for c in 0..d.channels {
                    let go = grad[(b * d.channels + c) * out_plane + q];
                    if go == 0.0 {
                        continue;
                    }
                    let base = (b * d.channels + c) * plane;
                    let i00 = base + y0 * d.w + x0;
                    let i01 = base + y0 * d.w + x1;
                    let i10 = base + y1 * d.w + x0;
                    let i11 = base + y1 * d.w + x1;
                    if let Some(ds) = dsrc.as_mut() {
                        ds[i00] += go * (1.0 - wy) * (1.0 - wx);
                        ds[i01] += go * (1.0 - wy) * wx;
                        ds[i10] += go * wy * (1.0 - wx);
                        ds[i11] += go * wy * wx;
                    }
                    if dgrid.is_some() {
                        let (v00, v01, v10, v11) = (src[i00], src[i01], src[i10], src[i11]);
                        if d.w > 1 {
                            dgx += go * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                        }
                        if d.h > 1 {
                            dgy += go * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                        }
                    }
                }
                if let Some(dg) = dgrid.as_mut() {
                    dg[gi] += dgx * sx;
                    dg[gi + 1] += dgy * sy;
                }
            }
        }
        vec![dsrc, dgrid]
    }
}

/// Bilinear sampling of `source` (`[C, H, W]` or `[B, C, H, W]`) at the
/// normalized points of `grid` (`[H', W', 2]` or `[B, H', W', 2]`).
///
/// Points outside `[-1, 1]²` produce exactly zero. Differentiable with
/// respect to both the source values and the grid coordinates (except on
/// pixel-cell boundaries, where the sampler is only sub-differentiable).
pub fn bilinear_sample(g: &mut Graph, source: Var, grid: Var) -> Result<Var> {
    let ss = g.try_value(source)?.shape().to_vec();
    let gs = g.try_value(grid)?.shape().to_vec();
    let (batched, batch, channels, h, w) = match ss[..] {
        [c, h, w] => (false, 1, c, h, w),
        [b, c, h, w] => (true, b, c, h, w),
        _ => return Err(Error::shape(format!("sampler source must be rank 3 or 4, got {ss:?}"))),
    };
    let (oh, ow) = match (batched, &gs[..]) {
        (false, &[oh, ow, 2]) => (oh, ow),
        (true, &[gb, oh, ow, 2]) if gb == batch => (oh, ow),
        _ => {
            return Err(Error::shape(format!(
                "sampling grid {gs:?} does not match source {ss:?}"
            )))
        }
    };
    let dims = SampleDims {
        batch,
        channels,
        h,
        w,
        oh,
        ow,
    };
    let src = g.value(source).data();
    let gd = g.value(grid).data();
    let plane = h * w;
    let out_plane = oh * ow;
    let mut out = vec![0.0; batch * channels * out_plane];
    for b in 0..batch {
        for q in 0..out_plane {
            let gi = (b * out_plane + q) * 2;
            let (gx, gy) = (gd[gi], gd[gi + 1]);
            if !in_bounds(gx, gy) {
                continue;
            }
            let (x0, x1, wx) = axis(gx, w);
            let (y0, y1, wy) = axis(gy, h);
            for c in 0..channels {
                let s = &src[(b * channels + c) * plane..];
                let top = (1.0 - wx) * s[y0 * w + x0] + wx * s[y0 * w + x1];
                let bottom = (1.0 - wx) * s[y1 * w + x0] + wx * s[y1 * w + x1];
                out[(b * channels + c) * out_plane + q] = (1.0 - wy) * top + wy * bottom;
            }
        }
    }
    let shape = if batched {
        vec![batch, channels, oh, ow]
    } else {
        vec![channels, oh, ow]
    };
    let out = Tensor::from_vec(&shape, out)?;
    g.record(out, &[source, grid], SampleOp { dims })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridDirection {
    /// Output lattice → window in the source (attending).
    Forward,
    /// Output lattice → patch coordinates (writing a patch back).
    Inverse,
}

struct GridOp {
    h: usize,
    w: usize,
    direction: GridDirection,
}

impl Backward for GridOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let params = inputs[0].data();
        let batch = params.len() / 3;
        let mut dp = vec![0.0; params.len()];
        let n = self.h * self.w;
        for b in 0..batch {
            // Per-axis affine map X = a·c + offset.
            let (mut da, mut dox, mut doy) = (0.0, 0.0, 0.0);
            for i in 0..self.h {
                let cy = normalized_coord(i, self.h);
                for j in 0..self.w {
                    let cx = normalized_coord(j, self.w);
                    let k = (b * n + i * self.w + j) * 2;
                    da += grad[k] * cx + grad[k + 1] * cy;
                    dox += grad[k];
                    doy += grad[k + 1];
                }
            }
            let (s, tx, ty) = (params[3 * b], params[3 * b + 1], params[3 * b + 2]);
            let dst = &mut dp[3 * b..3 * b + 3];
            match self.direction {
                GridDirection::Forward => {
                    dst[0] = da;
                    dst[1] = dox;
                    dst[2] = doy;
                }
                GridDirection::Inverse => {
                    // a = 1/s, offset = -t/s
                    let inv2 = 1.0 / (s * s);
                    dst[0] = -da * inv2 + (dox * tx + doy * ty) * inv2;
                    dst[1] = -dox / s;
                    dst[2] = -doy / s;
                }
            }
        }
        vec![Some(dp)]
    }
}

/// Sampling grids `[B, out_h, out_w, 2]` for per-sample attention parameters
/// `params: [B, 3]` holding `(scale, tx, ty)`.
pub fn attention_grid(g: &mut Graph, params: Var, out_h: usize, out_w: usize, direction: GridDirection) -> Result<Var> {
    let pv = g.try_value(params)?;
    let &[batch, 3] = pv.shape() else {
        return Err(Error::shape(format!(
            "attention parameters must be [B, 3], got {:?}",
            pv.shape()
        )));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("grid size must be >= 1"));
    }
    let pd = pv.data();
    let mut out = Vec::with_capacity(batch * out_h * out_w * 2);
    for b in 0..batch {
        let (s, tx, ty) = (pd[3 * b], pd[3 * b + 1], pd[3 * b + 2]);
        if !(s > 0.0) {
            return Err(Error::InvalidScale(s));
        }
        let (a, ox, oy) = match direction {
            GridDirection::Forward => (s, tx, ty),
            GridDirection::Inverse => {
                let inv = 1.0 / s;
                (inv, -tx * inv, -ty * inv)
            }
        };
        for i in 0..out_h {
            let cy = normalized_coord(i, out_h);
            for j in 0..out_w {
                let cx = normalized_coord(j, out_w);
                out.push(a * cx + 0.0 * cy + ox);
                out.push(0.0 * cx + a * cy + oy);
            }
        }
    }
    let out = Tensor::from_vec(&[batch, out_h, out_w, 2], out)?;
    g.record(
        out,
        &[params],
        GridOp {
            h: out_h,
            w: out_w,
            direction,
        },
    )
}

struct ConstrainOp {
    s_min: f64,
    s_max: f64,
}

impl Backward for ConstrainOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let raw = inputs[0].data();
        let o = out.data();
        let mut d = vec![0.0; raw.len()];
        for b in 0..raw.len() / 3 {
            let sig = sigmoid_value(raw[3 * b]);
            let ds = (self.s_max - self.s_min) * sig * (1.0 - sig);
            let free = 1.0 - o[3 * b];
            let (thx, thy) = (raw[3 * b + 1].tanh(), raw[3 * b + 2].tanh());
            let (gs, gx, gy) = (grad[3 * b], grad[3 * b + 1], grad[3 * b + 2]);
            d[3 * b] = ds * (gs - gx * thx - gy * thy);
            d[3 * b + 1] = gx * free * (1.0 - thx * thx);
            d[3 * b + 2] = gy * free * (1.0 - thy * thy);
        }
        vec![Some(d)]
    }
}

/// Maps raw regressor outputs `[B, 3]` to valid attention parameters
/// `(scale, tx, ty)` whose windows lie inside the image.
pub fn constrain_attention(g: &mut Graph, raw: Var, s_min: f64, s_max: f64) -> Result<Var> {
    let rv = g.try_value(raw)?;
    if rv.rank() != 2 || rv.shape()[1] != 3 {
        return Err(Error::shape(format!(
            "raw attention must be [B, 3], got {:?}",
            rv.shape()
        )));
    }
    if !(0.0 < s_min && s_min <= s_max && s_max <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale bounds [{s_min}, {s_max}] must satisfy 0 < min <= max <= 1"
        )));
    }
    let mut out = Vec::with_capacity(rv.len());
    for r in rv.data().chunks(3) {
        let (s, tx, ty) = super::constrain([r[0], r[1], r[2]], s_min, s_max);
        out.extend([s, tx, ty]);
    }
    let out = Tensor::from_vec(rv.shape(), out)?;
    g.record(out, &[raw], ConstrainOp { s_min, s_max })
}

/// Attends to the window of `params` (`[B, 3]`) in `image` (`[B, C, H, W]`),
/// producing `[B, C, out_h, out_w]`.
pub fn st(g: &mut Graph, image: Var, params: Var, out_h: usize, out_w: usize) -> Result<Var> {
    let grid = attention_grid(g, params, out_h, out_w, GridDirection::Forward)?;
    bilinear_sample(g, image, grid)
}

/// Writes `patch` (`[B, C, h, w]`) back over the window of `params` on an
/// `out_h × out_w` canvas. Canvas pixels outside the window are exactly zero.
pub fn st_inverse(g: &mut Graph, patch: Var, params: Var, out_h: usize, out_w: usize) -> Result<Var> {
    let grid = attention_grid(g, params, out_h, out_w, GridDirection::Inverse)?;
    bilinear_sample(g, patch, grid)
}
