use super::gemm::{gemm, Transpose};
use super::{Backward, Graph, Tensor, Var};
use crate::{Error, Result};

/// Elementwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    /// `max(x, 0)`.
    Relu,
    Sigmoid,
    Tanh,
    Scale(f64),
    AddScalar(f64),
}

pub fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct BinaryOp(Elementwise);

impl Backward for BinaryOp {
    fn backward(&self, g: &[f64], inputs: &[&Tensor], _out: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        match self.0 {
            Elementwise::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Elementwise::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
            Elementwise::Mul => vec![
                wanted[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                wanted[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ],
            _ => unreachable!("not a binary op"),
        }
    }
}

struct UnaryOp(Elementwise);

impl Backward for UnaryOp {
    fn backward(&self, g: &[f64], inputs: &[&Tensor], out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        let y = out.data();
        let d: Vec<f64> = match self.0 {
            Elementwise::Relu => g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
            Elementwise::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            Elementwise::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            Elementwise::Scale(c) => g.iter().map(|g| g * c).collect(),
            Elementwise::AddScalar(_) => g.to_vec(),
            _ => unreachable!("not a unary op"),
        };
        vec![Some(d)]
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMul {
    fn backward(&self, g: &[f64], inputs: &[&Tensor], _out: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let da = wanted[0].then(|| {
            // dA = G · Bᵀ
            let mut da = vec![0.0; m * k];
            gemm(
                m,
                n,
                k,
                g,
                Transpose::No,
                inputs[1].data(),
                Transpose::Yes,
                0.0,
                &mut da,
            );
            da
        });
        let db = wanted[1].then(|| {
            // dB = Aᵀ · G
            let mut db = vec![0.0; k * n];
            gemm(
                k,
                m,
                n,
                inputs[0].data(),
                Transpose::Yes,
                g,
                Transpose::No,
                0.0,
                &mut db,
            );
            db
        });
        vec![da, db]
    }
}

struct Sum {
    scale: f64,
}

impl Backward for Sum {
    fn backward(&self, g: &[f64], inputs: &[&Tensor], _out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0] * self.scale; inputs[0].len()])]
    }
}

struct Reshape;

impl Backward for Reshape {
    fn backward(&self, g: &[f64], _inputs: &[&Tensor], _out: &Tensor, _wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

impl Graph {
    /// Applies `kind` elementwise. Binary kinds take `b`; unary kinds ignore it.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        self.check(a)?;
        match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => {
                let b = b.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} needs a second operand")))?;
                self.check(b)?;
                let (x, y) = (self.value(a), self.value(b));
                if x.shape() != y.shape() {
                    return Err(Error::shape(format!("{kind:?}: {:?} vs {:?}", x.shape(), y.shape())));
                }
                let f = match kind {
                    Elementwise::Add => |p: f64, q: f64| p + q,
                    Elementwise::Sub => |p: f64, q: f64| p - q,
                    _ => |p: f64, q: f64| p * q,
                };
                let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
                let out = Tensor::from_vec(x.shape(), data)?;
                self.record(out, &[a, b], BinaryOp(kind))
            }
            _ => {
                let x = self.value(a);
                let out = match kind {
                    Elementwise::Relu => x.map(|v| v.max(0.0)),
                    Elementwise::Sigmoid => x.map(sigmoid_value),
                    Elementwise::Tanh => x.map(f64::tanh),
                    Elementwise::Scale(c) => x.map(|v| v * c),
                    Elementwise::AddScalar(c) => x.map(|v| v + c),
                    _ => unreachable!(),
                };
                self.record(out, &[a], UnaryOp(kind))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, Some(b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Relu, a, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sigmoid, a, None)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Tanh, a, None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.elementwise(Elementwise::Scale(c), a, None)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.elementwise(Elementwise::AddScalar(c), a, None)
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (x.shape(), y.shape()) else {
            return Err(Error::shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} · {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut data = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            x.data(),
            Transpose::No,
            y.data(),
            Transpose::No,
            0.0,
            &mut data,
        );
        let out = Tensor::from_vec(&[m, n], data)?;
        self.record(out, &[a, b], MatMul { m, k, n })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).sum();
        self.record(Tensor::scalar(s), &[a], Sum { scale: 1.0 })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let n = x.len() as f64;
        let s = x.sum() / n;
        self.record(Tensor::scalar(s), &[a], Sum { scale: 1.0 / n })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).clone().reshape(shape)?;
        self.record(out, &[a], Reshape)
    }
}
