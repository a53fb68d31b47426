use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// SGD with momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// One buffer per parameter tensor, created on the first step.
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }
}

/// `v ← momentum·v + (grad + weight_decay·param)`, then `param ← param − lr·v`.
pub fn sgd_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: impl IntoIterator<Item = &'a Tensor<T>>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
    let grads: Vec<&Tensor<T>> = grads.into_iter().collect();
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.velocity.is_empty() {
        state.velocity = params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
    }
    if state.velocity.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer holds {} velocity buffers for {} parameters",
            state.velocity.len(),
            params.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(&grads).zip(&state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (lr, mu, wd) = (T::of(state.lr), T::of(state.momentum), T::of(state.weight_decay));
    for ((p, g), v) in params.into_iter().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + (gv + wd * *pv);
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Step decay: the rate is multiplied by `factor` every `iters_per_step`
/// iterations, for at most `n_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub factor: f64,
    pub n_steps: u32,
    pub iters_per_step: u64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, factor: f64, n_steps: u32, iters_per_step: u64) -> Result<Self> {
        let s = Self {
            initial_lr,
            factor,
            n_steps,
            iters_per_step,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("lr factor {} not in (0, 1)", self.factor)));
        }
        if self.iters_per_step == 0 {
            return Err(Error::Config("iters_per_step must be positive".into()));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::Config("initial learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Iterations covered by the whole ladder.
    pub fn total_iters(&self) -> u64 {
        self.n_steps as u64 * self.iters_per_step
    }

    pub fn step_of(&self, iter: u64) -> u32 {
        (iter / self.iters_per_step).min(self.n_steps as u64) as u32
    }
}

pub fn lr_at(schedule: &LrSchedule, iter: u64) -> f64 {
    schedule.initial_lr * schedule.factor.powi(schedule.step_of(iter) as i32)
}
