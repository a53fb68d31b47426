//! Finite-difference checks of the loss heads on random instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{grad_check, GradCheckInstance, LossConfig};
use crate::rng;

/// Central-difference step per loss. Rounding error in the loss grows with
/// its scale (s = 50 puts additive-margin losses near 100), so the scaled
/// heads take larger steps.
pub fn fd_step(loss: &LossConfig) -> f64 {
    match loss {
        LossConfig::Softmax => 5e-5,
        LossConfig::ASoftmax { .. } => 1e-5,
        LossConfig::AMSoftmax { .. } => 2e-4,
        LossConfig::LogisticMargin { .. } => 1e-4,
    }
}

/// Iteration at which angular-softmax λ is evaluated during checks (λ near its floor).
const ASOFTMAX_CHECK_ITER: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub trial: usize,
    pub batch: usize,
    pub classes: usize,
    pub dim: usize,
    pub max_rel_err: f64,
}

/// `trials` random instances with `C ∈ [2, 10]`, `d ∈ [2, 16]`, batch `∈ [1, 4]`.
pub fn gradcheck_table(loss: &LossConfig, trials: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    loss.validate()?;
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut r = rng::stream(seed, &[trial as u64]);
        let classes = r.random_range(2..=10);
        let dim = r.random_range(2..=16);
        let batch = r.random_range(1..=4);
        let inst = GradCheckInstance::random(batch, classes, dim, loss.uses_bias(), &mut r)?;
        let err = grad_check(
            |x, labels, head| loss.compute(x, labels, head, ASOFTMAX_CHECK_ITER),
            &inst,
            fd_step(loss),
        )?;
        rows.push(GradCheckRow {
            trial,
            batch,
            classes,
            dim,
            max_rel_err: err,
        });
    }
    Ok(rows)
}

pub fn max_error(rows: &[GradCheckRow]) -> f64 {
    rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
}

pub fn format_table(loss: &LossConfig, rows: &[GradCheckRow]) -> String {
    let mut out = format!("{:>5} {:>5} {:>7} {:>4} {:>12}\n", "trial", "batch", "classes", "dim", "max_rel_err");
    for r in rows {
        out.push_str(&format!(
            "{:>5} {:>5} {:>7} {:>4} {:>12.3e}\n",
            r.trial, r.batch, r.classes, r.dim, r.max_rel_err
        ));
    }
    out.push_str(&format!("{}: max {:.3e} over {} instances\n", loss.name(), max_error(rows), rows.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_deterministic_and_within_bounds() {
        let a = gradcheck_table(&LossConfig::Softmax, 5, 3).unwrap();
        assert_eq!(a, gradcheck_table(&LossConfig::Softmax, 5, 3).unwrap());
        assert!(max_error(&a) <= 1e-6);
        for r in &a {
            assert!((2..=10).contains(&r.classes) && (2..=16).contains(&r.dim));
        }
        let text = format_table(&LossConfig::Softmax, &a);
        assert_eq!(text.lines().count(), 7);
    }
}
