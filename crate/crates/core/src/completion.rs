//! Soft-impute completion of a partially observed matrix.
//!
//! Each iteration fills the missing entries from the current estimate, takes
//! an SVD and soft-thresholds the singular values.

use serde::{Deserialize, Serialize};

use crate::datagen::MaskedMatrix;
use crate::error::{Error, Result};
use crate::linalg::{svd, svd_warm, DenseMatrix, SvdFactors};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_REL_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    /// Amount subtracted from every singular value (clamped at zero).
    pub shrinkage: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Copy the observed entries back into the result after the last
    /// iteration instead of keeping the shrunken estimate there.
    pub overwrite_observed: bool,
}

impl CompletionConfig {
    pub fn new(shrinkage: f64) -> Self {
        Self {
            shrinkage,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            overwrite_observed: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.shrinkage >= 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::invalid(format!(
                "shrinkage must be finite and >= 0, got {}",
                self.shrinkage
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("completion rel_tol must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("completion max_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResult {
    pub completed: DenseMatrix,
    pub iterations_used: usize,
    /// `||P_E(X - Z)||_F^2 + 2 * shrinkage * ||Z||_*` after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// `max(s_i - lam, 0)`.
pub fn shrink_singular(s: &[f64], lam: f64) -> Result<Vec<f64>> {
    if !(lam >= 0.0) {
        return Err(Error::invalid(format!("shrinkage must be >= 0, got {lam}")));
    }
    Ok(s.iter().map(|&v| (v - lam).max(0.0)).collect())
}

/// Squared residual on the observed entries.
fn observed_residual(masked: &MaskedMatrix, z: &DenseMatrix) -> f64 {
    masked
        .mask
        .as_slice()
        .iter()
        .zip(masked.observed.as_slice())
        .zip(z.as_slice())
        .filter(|((b, _), _)| **b != 0.0)
        .map(|((_, x), z)| (x - z) * (x - z))
        .sum()
}

/// Soft-impute starting from the observed matrix (zeros in the gaps).
pub fn soft_impute(masked: &MaskedMatrix, cfg: &CompletionConfig) -> Result<CompletionResult> {
    soft_impute_from(masked, cfg, &masked.observed)
}

/// Soft-impute from an arbitrary starting estimate of the same shape.
pub fn soft_impute_from(
    masked: &MaskedMatrix,
    cfg: &CompletionConfig,
    start: &DenseMatrix,
) -> Result<CompletionResult> {
    cfg.validate()?;
    let shape = masked.observed.shape();
    if masked.mask.shape() != shape || start.shape() != shape {
        return Err(Error::invalid("mask, observed matrix and start differ in shape"));
    }
    let observed = masked.observed_count();
    if observed == 0 {
        return Err(Error::invalid("mask has no observed entries"));
    }
    if !masked.observed.is_finite() || !start.is_finite() {
        return Err(Error::invalid("completion input contains non-finite values"));
    }
    let total = shape.0 * shape.1;

    // Nothing to impute and nothing to shrink: the observed matrix is the answer.
    if observed == total && cfg.shrinkage == 0.0 {
        return Ok(CompletionResult {
            completed: masked.observed.clone(),
            iterations_used: 1,
            objective_trace: vec![0.0],
            converged: true,
        });
    }

    let mask = masked.mask.as_slice();
    let x_obs = masked.observed.as_slice();
    let mut z = start.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut fill = DenseMatrix::zeros(shape.0, shape.1);
    let mut prev: Option<SvdFactors> = None;
    for k in 0..cfg.max_iters {
        for ((f, (&b, &x)), &zz) in fill
            .as_mut_slice()
            .iter_mut()
            .zip(mask.iter().zip(x_obs))
            .zip(z.as_slice())
        {
            *f = if b != 0.0 { x } else { zz };
        }
        // Consecutive fills are close, so the last singular vectors are a
        // good starting basis.
        let factors = match &prev {
            Some(p) => svd_warm(&fill, p)?,
            None => svd(&fill)?,
        };
        let shrunk = shrink_singular(&factors.singular_values, cfg.shrinkage)?;
        let next = factors.reconstruct_with(&shrunk);
        prev = Some(factors);
        iterations = k + 1;
        if !next.is_finite() {
            return Err(Error::NumericalFailure {
                what: format!("soft-impute iterate {iterations} is not finite"),
                residual: f64::NAN,
            });
        }
        let nuclear: f64 = shrunk.iter().sum();
        trace.push(observed_residual(masked, &next) + 2.0 * cfg.shrinkage * nuclear);
        let change = next.sub(&z).frobenius_norm();
        let scale = z.frobenius_norm().max(1.0);
        z = next;
        if change <= cfg.rel_tol * scale {
            converged = true;
            break;
        }
    }
    if cfg.overwrite_observed {
        for ((v, &b), &x) in z.as_mut_slice().iter_mut().zip(mask).zip(x_obs) {
            if b != 0.0 {
                *v = x;
            }
        }
    }
    Ok(CompletionResult {
        completed: z,
        iterations_used: iterations,
        objective_trace: trace,
        converged,
    })
}
