//! Parameterized building blocks shared by both networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// He-normal tensor: `N(0, gain^2 * 2 / fan_in)`.
pub(crate) fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches data")
}

/// `x [n, in] -> x W + b`, `W [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), he_normal(rng, &[in_dim, out_dim], in_dim, gain));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add(y, p.var(self.b))
    }

    pub fn forward_relu(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(tape, p, x)?;
        tape.relu(y)
    }
}

/// Unpadded 3x3 convolution followed by ReLU.
#[derive(Clone, Debug)]
pub struct Conv3 {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv3 {
    pub fn new(store: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), he_normal(rng, &[co, ci, 3, 3], ci * 9, 1.0));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[co]));
        Self { w, b }
    }

    pub fn forward_relu(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv2d_3x3_valid(x, p.var(self.w), p.var(self.b))?;
        tape.relu(y)
    }
}

/// Stride-2 2x2 transposed convolution.
#[derive(Clone, Debug)]
pub struct UpConv2 {
    pub w: ParamId,
    pub b: ParamId,
}

impl UpConv2 {
    pub fn new(store: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), he_normal(rng, &[ci, co, 2, 2], ci, 1.0));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[co]));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.upconv_2x2(x, p.var(self.w), p.var(self.b))
    }
}

/// `[rows, cols]` tensor of ones, used to tile row vectors.
pub(crate) fn ones_column(tape: &mut Tape, rows: usize) -> Var {
    tape.constant(Tensor::full(&[rows, 1], 1.0))
}
