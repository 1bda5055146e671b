use crate::tensor::{Backward, Graph, Tensor, Var};
use crate::{Error, Result};

struct UnpoolOp {
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Backward for UnpoolOp {
    fn backward(&self, grad: &[f64], _inputs: &[&Tensor], _out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (h, w, k) = (self.h, self.w, self.k);
        let mut dx = vec![0.0; self.planes * h * w];
        for p in 0..self.planes {
            let src = &grad[p * h * k * w * k..];
            for i in 0..h {
                for j in 0..w {
                    dx[(p * h + i) * w + j] = src[(k * i) * (w * k) + k * j];
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Top-left-corner unpooling: every input value lands at the top-left corner
/// of a blank `k × k` output block. Works on any tensor of rank >= 2; the last
/// two dimensions are spatial.
pub fn unpool(g: &mut Graph, x: Var, k: usize) -> Result<Var> {
    if k == 0 {
        return Err(Error::shape("unpool factor must be >= 1"));
    }
    let xv = g.try_value(x)?;
    let shape = xv.shape();
    if shape.len() < 2 {
        return Err(Error::shape(format!("unpool needs rank >= 2, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = xv.len() / (h * w);
    let mut out = vec![0.0; xv.len() * k * k];
    let xd = xv.data();
    for p in 0..planes {
        let dst = &mut out[p * h * k * w * k..];
        for i in 0..h {
            for j in 0..w {
                dst[(k * i) * (w * k) + k * j] = xd[(p * h + i) * w + j];
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let n = out_shape.len();
    out_shape[n - 2] *= k;
    out_shape[n - 1] *= k;
    let out = Tensor::from_vec(&out_shape, out)?;
    g.record(out, &[x], UnpoolOp { planes, h, w, k })
}
