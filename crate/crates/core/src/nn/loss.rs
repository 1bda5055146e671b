use crate::tensor::{Backward, Graph, Tensor, Var};
use crate::{Error, Result};

/// Probability clamp applied by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

struct BceOp {
    target: Vec<f64>,
}

impl Backward for BceOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.target.len() as f64;
        let d = inputs[0]
            .data()
            .iter()
            .zip(&self.target)
            .map(|(&s, &t)| {
                if !(BCE_EPS..=1.0 - BCE_EPS).contains(&s) {
                    0.0
                } else {
                    grad[0] * ((1.0 - t) / (1.0 - s) - t / s) / n
                }
            })
            .collect();
        vec![Some(d)]
    }
}

struct BceLogitsOp {
    target: Vec<f64>,
}

impl Backward for BceLogitsOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.target.len() as f64;
        let d = inputs[0]
            .data()
            .iter()
            .zip(&self.target)
            .map(|(&r, &t)| grad[0] * (crate::tensor::sigmoid_value(r) - t) / n)
            .collect();
        vec![Some(d)]
    }
}

fn check_target(g: &Graph, pred: Var, target: &Tensor) -> Result<()> {
    let p = g.try_value(pred)?;
    if p.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            p.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy between probabilities `pred` (clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`) and `target`.
pub fn bce_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    check_target(g, pred, target)?;
    let n = target.len() as f64;
    let loss = g
        .value(pred)
        .data()
        .iter()
        .zip(target.data())
        .map(|(&s, &t)| {
            let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
        })
        .sum::<f64>()
        / n;
    g.record(
        Tensor::scalar(loss),
        &[pred],
        BceOp {
            target: target.data().to_vec(),
        },
    )
}

/// Binary cross-entropy of `sigmoid(logits)` against `target`, evaluated
/// directly from the logits so that it stays finite for any finite input.
pub fn bce_with_logits(g: &mut Graph, logits: Var, target: &Tensor) -> Result<Var> {
    check_target(g, logits, target)?;
    let n = target.len() as f64;
    let loss = g
        .value(logits)
        .data()
        .iter()
        .zip(target.data())
        .map(|(&r, &t)| r.max(0.0) - r * t + (-r.abs()).exp().ln_1p())
        .sum::<f64>()
        / n;
    g.record(
        Tensor::scalar(loss),
        &[logits],
        BceLogitsOp {
            target: target.data().to_vec(),
        },
    )
}
