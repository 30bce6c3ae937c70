//! Parameters, Adam and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// `base * decay^floor(epoch / step_epochs)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    pub step_epochs: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base: 1e-5, decay: 0.7, step_epochs: 10 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: u32) -> f64 {
        lr_at(epoch, self)
    }
}

pub fn lr_at(epoch: u32, schedule: &LrSchedule) -> f64 {
    let k = epoch / schedule.step_epochs.max(1);
    schedule.base * schedule.decay.powi(k as i32)
}

/// A named trainable tensor with its Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Self { name: name.into(), value, m, v }
    }
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered parameter collection plus the shared Adam step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    step: u64,
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Wraps vars created elsewhere (e.g. by the gradient checker).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.param(p.value.clone())).collect() }
    }

    /// Registers every parameter as a constant (inference, no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect() }
    }

    /// One bias-corrected Adam update for all parameters.
    pub fn adam_step(&mut self, grads: &Gradients, bound: &Bound, lr: f64, cfg: &AdamConfig) -> Result<()> {
        if bound.vars.len() != self.params.len() {
            return Err(Error::SizeMismatch { left: bound.vars.len(), right: self.params.len() });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (p, var) in self.params.iter_mut().zip(&bound.vars) {
            let g = grads.get(*var);
            adam_update(p, g.data(), lr, cfg, bc1, bc2);
            if !p.value.is_finite() {
                return Err(Error::NonFinite(format!("adam update of {}", p.name)));
            }
        }
        Ok(())
    }
}

fn adam_update(p: &mut Parameter, g: &[f64], lr: f64, cfg: &AdamConfig, bc1: f64, bc2: f64) {
    let (value, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
    for i in 0..g.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        value[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
}
