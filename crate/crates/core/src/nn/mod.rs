//! Layers and losses on top of the autodiff graph, plus the named parameter
//! store that networks read from and optimizers write to.

mod batchnorm;
mod conv;
mod linear;
mod loss;
mod unpool;

pub use batchnorm::{batchnorm_infer, batchnorm_train, BatchStats};
pub use conv::{conv2d, conv_output_size};
pub use linear::linear;
pub use loss::{bce_loss, bce_with_logits, BCE_EPS};
pub use unpool::unpool;

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;

use crate::tensor::{Graph, Init, Tensor, Var};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Named trainable parameters and non-trainable buffers (batch-norm running
/// statistics). Ordered maps keep iteration, and therefore checkpoints,
/// deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.params.keys().any(|k| k.starts_with(prefix))
    }

    /// Copies every parameter and buffer under `from` to the same suffix
    /// under `to`, overwriting existing entries.
    pub fn copy_prefix(&mut self, from: &str, to: &str) -> usize {
        let mut n = 0;
        for map in [&mut self.params, &mut self.buffers] {
            let copies: Vec<(String, Tensor)> = map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(from).map(|rest| (format!("{to}{rest}"), v.clone())))
                .collect();
            n += copies.len();
            map.extend(copies);
        }
        n
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) -> Result<()> {
        for u in updates {
            for (suffix, batch) in [("running_mean", &u.stats.mean), ("running_var", &u.stats.var)] {
                let name = format!("{}.{suffix}", u.layer);
                let buf = self
                    .buffers
                    .get_mut(&name)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown buffer {name}")))?;
                for (r, b) in buf.data_mut().iter_mut().zip(batch.iter()) {
                    *r = u.momentum * *r + (1.0 - u.momentum) * b;
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().chain(self.buffers.values()).all(Tensor::is_finite)
    }
}

/// A running-statistics update produced by one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub layer: String,
    pub momentum: f64,
    pub stats: BatchStats,
}

/// One forward pass: a graph, the parameters it reads, and the batch-norm
/// statistics it produced.
///
/// Parameters are bound into the graph lazily and only once, so a parameter
/// used at several places (e.g. at every recurrent iteration) is a single
/// leaf that accumulates gradient from all uses.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: HashMap<String, Var>,
    mode: Mode,
    stat_updates: Vec<StatUpdate>,
}

impl<'a> Session<'a> {
    /// `trainable` controls whether parameters are gradient leaves.
    pub fn new(store: &'a ParamStore, mode: Mode, trainable: bool) -> Self {
        Session {
            graph: if trainable { Graph::new() } else { Graph::no_grad() },
            store,
            bound: HashMap::new(),
            mode,
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .store
            .param(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
        let v = self.graph.param(t.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&'a Tensor> {
        self.store
            .buffer(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {name}")))
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn push_stats(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    pub fn stat_updates(&self) -> &[StatUpdate] {
        &self.stat_updates
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)
    }

    /// Gradients of every bound parameter reached by a backward pass.
    pub fn gradients(&self) -> Gradients {
        self.bound
            .iter()
            .filter_map(|(name, &v)| self.graph.grad(v).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }

    pub fn into_stat_updates(self) -> Vec<StatUpdate> {
        self.stat_updates
    }
}

/// Convolution layer descriptor; parameters live in a [`ParamStore`] as
/// `{name}.weight` `[C_out, C_in, k, k]` and optionally `{name}.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        store.insert_param(
            format!("{}.weight", self.name),
            Tensor::create(
                &[self.out_channels, self.in_channels, self.kernel, self.kernel],
                Init::HeNormal {
                    fan_in,
                    seed: rng.next_u64(),
                },
            )?,
        );
        if self.bias {
            store.insert_param(format!("{}.bias", self.name), Tensor::zeros(&[self.out_channels])?);
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(s.param(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        conv2d(&mut s.graph, x, w, b, self.stride, self.padding)
    }

    pub fn output_size(&self, input: usize) -> Result<usize> {
        conv_output_size(input, self.kernel, self.stride, self.padding)
    }
}

/// Fully-connected layer descriptor: `{name}.weight` `[out, in]`, optional
/// `{name}.bias` `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

impl Linear {
    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<()> {
        store.insert_param(
            format!("{}.weight", self.name),
            Tensor::create(
                &[self.out_features, self.in_features],
                Init::HeNormal {
                    fan_in: self.in_features,
                    seed: rng.next_u64(),
                },
            )?,
        );
        if self.bias {
            store.insert_param(format!("{}.bias", self.name), Tensor::zeros(&[self.out_features])?);
        }
        Ok(())
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(s.param(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        linear(&mut s.graph, x, w, b)
    }
}

/// Batch normalization descriptor: `{name}.gamma`, `{name}.beta` and the
/// running-statistics buffers `{name}.running_mean`, `{name}.running_var`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        let c = [self.channels];
        store.insert_param(format!("{}.gamma", self.name), Tensor::create(&c, Init::Constant(1.0))?);
        store.insert_param(format!("{}.beta", self.name), Tensor::zeros(&c)?);
        store.insert_buffer(format!("{}.running_mean", self.name), Tensor::zeros(&c)?);
        store.insert_buffer(
            format!("{}.running_var", self.name),
            Tensor::create(&c, Init::Constant(1.0))?,
        );
        Ok(())
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(&format!("{}.gamma", self.name))?;
        let beta = s.param(&format!("{}.beta", self.name))?;
        match s.mode() {
            Mode::Train => {
                let (y, stats) = batchnorm_train(&mut s.graph, x, gamma, beta, self.eps)?;
                s.push_stats(StatUpdate {
                    layer: self.name.clone(),
                    momentum: self.momentum,
                    stats,
                });
                Ok(y)
            }
            Mode::Infer => {
                let mean = s.buffer(&format!("{}.running_mean", self.name))?;
                let var = s.buffer(&format!("{}.running_var", self.name))?;
                batchnorm_infer(&mut s.graph, x, gamma, beta, mean.data(), var.data(), self.eps)
            }
        }
    }
}
