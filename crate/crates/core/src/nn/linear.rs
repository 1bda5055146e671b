use crate::tensor::{gemm, Backward, Graph, Tensor, Transpose, Var};
use crate::{Error, Result};

struct LinearOp {
    batch: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Backward for LinearOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (b, i, o) = (self.batch, self.fan_in, self.fan_out);
        let dx = wanted[0].then(|| {
            let mut dx = vec![0.0; b * i];
            gemm(
                b,
                o,
                i,
                grad,
                Transpose::No,
                inputs[1].data(),
                Transpose::No,
                0.0,
                &mut dx,
            );
            dx
        });
        let dw = wanted[1].then(|| {
            let mut dw = vec![0.0; o * i];
            gemm(
                o,
                b,
                i,
                grad,
                Transpose::Yes,
                inputs[0].data(),
                Transpose::No,
                0.0,
                &mut dw,
            );
            dw
        });
        let mut out = vec![dx, dw];
        if inputs.len() == 3 {
            out.push(wanted[2].then(|| {
                let mut db = vec![0.0; o];
                for row in grad.chunks(o) {
                    db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                db
            }));
        }
        out
    }
}

/// Affine map `weight · x + bias` for `x` of shape `[in]` or `[B, in]`, with
/// `weight` of shape `[out, in]`.
pub fn linear(g: &mut Graph, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let xs = g.try_value(x)?.shape().to_vec();
    let ws = g.try_value(weight)?.shape().to_vec();
    let (batch, fan_in) = match xs[..] {
        [i] => (1, i),
        [b, i] => (b, i),
        _ => return Err(Error::shape(format!("linear input must be rank 1 or 2, got {xs:?}"))),
    };
    let &[fan_out, w_in] = &ws[..] else {
        return Err(Error::shape(format!("linear weight must be rank 2, got {ws:?}")));
    };
    if w_in != fan_in {
        return Err(Error::shape(format!(
            "linear weight {ws:?} does not accept input {xs:?}"
        )));
    }
    let mut y = vec![0.0; batch * fan_out];
    gemm(
        batch,
        fan_in,
        fan_out,
        g.value(x).data(),
        Transpose::No,
        g.value(weight).data(),
        Transpose::Yes,
        0.0,
        &mut y,
    );
    if let Some(b) = bias {
        let bd = g.try_value(b)?;
        if bd.shape() != [fan_out] {
            return Err(Error::shape(format!(
                "linear bias must be [{fan_out}], got {:?}",
                bd.shape()
            )));
        }
        for row in y.chunks_mut(fan_out) {
            row.iter_mut().zip(bd.data()).for_each(|(v, b)| *v += b);
        }
    }
    let shape = if xs.len() == 1 {
        vec![fan_out]
    } else {
        vec![batch, fan_out]
    };
    let out = Tensor::from_vec(&shape, y)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    g.record(out, &inputs, LinearOp { batch, fan_in, fan_out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let mut eye = vec![0.0; 9];
        eye[0] = 1.0;
        eye[4] = 1.0;
        eye[8] = 1.0;
        let w = g.constant(Tensor::from_vec(&[3, 3], eye).unwrap());
        let b = g.constant(Tensor::zeros(&[3]).unwrap());
        let y = linear(&mut g, x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn hand_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap());
        let w = g.constant(Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap());
        let b = g.constant(Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let y = linear(&mut g, x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3]).unwrap());
        let w = g.constant(Tensor::zeros(&[2, 2]).unwrap());
        assert!(matches!(linear(&mut g, x, w, None), Err(Error::InvalidShape(_))));
    }
}
