//! Dense row-major `f64` arrays and a dynamically recorded computation graph
//! for reverse-mode differentiation.

mod gemm;
mod graph;
mod ops;

pub use gemm::{gemm, Transpose};
pub use graph::{Backward, Graph, Var};
pub use ops::{sigmoid_value, Elementwise};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Fill rule for [`Tensor::create`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on `[lo, hi)` from a ChaCha8 stream seeded with `seed`.
    Uniform {
        lo: f64,
        hi: f64,
        seed: u64,
    },
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal {
        fan_in: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("shape must have at least one dimension"));
    }
    if let Some(d) = shape.iter().find(|&&d| d == 0) {
        return Err(Error::shape(format!("dimension {d} in {shape:?} must be >= 1")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![0.0; len],
            Init::Constant(c) => vec![c; len],
            Init::Uniform { lo, hi, seed } => {
                if !(lo < hi) {
                    return Err(Error::InvalidArgument(format!("uniform range [{lo}, {hi}) is empty")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len).map(|_| rng.random_range(lo..hi)).collect()
            }
            Init::HeNormal { fan_in, seed } => {
                if fan_in == 0 {
                    return Err(Error::InvalidArgument("he-normal fan_in must be >= 1".into()));
                }
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Zeros)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// The `index`-th slice along the leading dimension.
    pub fn slice_outer(&self, index: usize) -> Result<Tensor> {
        if index >= self.shape[0] {
            return Err(Error::shape(format!(
                "index {index} out of range for leading dimension {}",
                self.shape[0]
            )));
        }
        let inner: Vec<usize> = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        let n: usize = inner.iter().product();
        Tensor::from_vec(&inner, self.data[index * n..(index + 1) * n].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading dimension.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
