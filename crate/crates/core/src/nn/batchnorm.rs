use crate::tensor::{Backward, Graph, Tensor, Var};
use crate::{Error, Result};

/// Per-channel statistics of one training-mode batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as folded into the running estimate.
    pub var: Vec<f64>,
}

/// Layout `[B, C, S]` where `S` is the product of trailing dimensions.
#[derive(Clone, Copy)]
struct Layout {
    batch: usize,
    channels: usize,
    spatial: usize,
}

impl Layout {
    fn of(shape: &[usize]) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::shape(format!(
                "batchnorm input must be [B, C, ...], got {shape:?}"
            )));
        }
        Ok(Layout {
            batch: shape[0],
            channels: shape[1],
            spatial: shape[2..].iter().product(),
        })
    }

    fn for_each_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.batch {
            let base = (b * self.channels + c) * self.spatial;
            (base..base + self.spatial).for_each(&mut f);
        }
    }
}

struct TrainOp {
    layout: Layout,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Backward for TrainOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let l = self.layout;
        let gamma = inputs[1].data();
        let m = (l.batch * l.spatial) as f64;
        let mut dx = vec![0.0; grad.len()];
        let mut dgamma = vec![0.0; l.channels];
        let mut dbeta = vec![0.0; l.channels];
        for c in 0..l.channels {
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            l.for_each_channel(c, |i| {
                sum_g += grad[i];
                sum_gx += grad[i] * self.xhat[i];
            });
            dgamma[c] = sum_gx;
            dbeta[c] = sum_g;
            if wanted[0] {
                let k = gamma[c] * self.inv_std[c] / m;
                l.for_each_channel(c, |i| {
                    dx[i] = k * (m * grad[i] - sum_g - self.xhat[i] * sum_gx);
                });
            }
        }
        vec![wanted[0].then_some(dx), Some(dgamma), Some(dbeta)]
    }
}

struct InferOp {
    layout: Layout,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Backward for InferOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let l = self.layout;
        let x = inputs[0].data();
        let gamma = inputs[1].data();
        let mut dx = vec![0.0; grad.len()];
        let mut dgamma = vec![0.0; l.channels];
        let mut dbeta = vec![0.0; l.channels];
        for c in 0..l.channels {
            let k = gamma[c] * self.inv_std[c];
            l.for_each_channel(c, |i| {
                dx[i] = grad[i] * k;
                dgamma[c] += grad[i] * (x[i] - self.mean[c]) * self.inv_std[c];
                dbeta[c] += grad[i];
            });
        }
        vec![wanted[0].then_some(dx), Some(dgamma), Some(dbeta)]
    }
}

fn check_affine(g: &Graph, gamma: Var, beta: Var, channels: usize) -> Result<()> {
    for v in [gamma, beta] {
        if g.try_value(v)?.shape() != [channels] {
            return Err(Error::shape(format!(
                "batchnorm affine parameters must be [{channels}], got {:?}",
                g.value(v).shape()
            )));
        }
    }
    Ok(())
}

/// Training-mode batch normalization over the batch and spatial dimensions
/// of `x: [B, C, ...]`. Returns the normalized output and the batch statistics
/// for the caller to fold into its running estimates.
pub fn batchnorm_train(g: &mut Graph, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
    let layout = Layout::of(g.try_value(x)?.shape())?;
    if layout.batch < 2 {
        return Err(Error::InvalidBatch(
            "training-mode batch normalization needs at least 2 samples".into(),
        ));
    }
    check_affine(g, gamma, beta, layout.channels)?;
    let xd = g.value(x).data();
    let (gd, bd) = (g.value(gamma).data(), g.value(beta).data());
    let m = (layout.batch * layout.spatial) as f64;
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    let mut inv_std = vec![0.0; layout.channels];
    let mut stats = BatchStats {
        mean: vec![0.0; layout.channels],
        var: vec![0.0; layout.channels],
    };
    for c in 0..layout.channels {
        let mut sum = 0.0;
        layout.for_each_channel(c, |i| sum += xd[i]);
        let mean = sum / m;
        let mut ss = 0.0;
        layout.for_each_channel(c, |i| ss += (xd[i] - mean).powi(2));
        let var = ss / m;
        let inv = 1.0 / (var + eps).sqrt();
        layout.for_each_channel(c, |i| {
            xhat[i] = (xd[i] - mean) * inv;
            out[i] = gd[c] * xhat[i] + bd[c];
        });
        inv_std[c] = inv;
        stats.mean[c] = mean;
        stats.var[c] = if m > 1.0 { ss / (m - 1.0) } else { var };
    }
    let out = Tensor::from_vec(g.value(x).shape(), out)?;
    let v = g.record(out, &[x, gamma, beta], TrainOp { layout, xhat, inv_std })?;
    Ok((v, stats))
}

/// Inference-mode batch normalization using fixed running statistics.
pub fn batchnorm_infer(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Var> {
    let layout = Layout::of(g.try_value(x)?.shape())?;
    check_affine(g, gamma, beta, layout.channels)?;
    if running_mean.len() != layout.channels || running_var.len() != layout.channels {
        return Err(Error::shape("running statistics do not match channel count"));
    }
    let xd = g.value(x).data();
    let (gd, bd) = (g.value(gamma).data(), g.value(beta).data());
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = vec![0.0; xd.len()];
    for c in 0..layout.channels {
        layout.for_each_channel(c, |i| {
            out[i] = gd[c] * (xd[i] - running_mean[c]) * inv_std[c] + bd[c];
        });
    }
    let out = Tensor::from_vec(g.value(x).shape(), out)?;
    g.record(
        out,
        &[x, gamma, beta],
        InferOp {
            layout,
            mean: running_mean.to_vec(),
            inv_std,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(g: &mut Graph, c: usize, gamma: f64, beta: f64) -> (Var, Var) {
        (
            g.param(Tensor::from_vec(&[c], vec![gamma; c]).unwrap()),
            g.param(Tensor::from_vec(&[c], vec![beta; c]).unwrap()),
        )
    }

    fn channel_moments(t: &Tensor, c: usize) -> (f64, f64) {
        let l = Layout::of(t.shape()).unwrap();
        let mut vals = Vec::new();
        l.for_each_channel(c, |i| vals.push(t.data()[i]));
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap());
        let (ga, be) = affine(&mut g, 1, 1.0, 0.0);
        let (y, _) = batchnorm_train(&mut g, x, ga, be, 1e-5).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn train_output_mean_is_beta_and_variance_gamma_squared() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let x = g.constant(Tensor::from_vec(&[2, 3, 4, 4], data).unwrap());
        let (ga, be) = affine(&mut g, 3, 1.7, -0.4);
        let (y, _) = batchnorm_train(&mut g, x, ga, be, 1e-5).unwrap();
        for c in 0..3 {
            let (mean, var) = channel_moments(g.value(y), c);
            assert!((mean + 0.4).abs() < 1e-6);
            assert!((var - 1.7 * 1.7).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn identity_running_statistics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, 2, 2], vec![0.3, -2.0, 5.0, 1.0]).unwrap());
        let (ga, be) = affine(&mut g, 2, 1.0, 0.0);
        let y = batchnorm_infer(&mut g, x, ga, be, &[0.0, 0.0], &[1.0, 1.0], 1e-5).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn single_sample_training_batch_is_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 3, 3]).unwrap());
        let (ga, be) = affine(&mut g, 2, 1.0, 0.0);
        assert!(matches!(
            batchnorm_train(&mut g, x, ga, be, 1e-5),
            Err(Error::InvalidBatch(_))
        ));
    }
}
