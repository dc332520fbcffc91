use serde::{Deserialize, Serialize};

use super::threshold::keep_largest;
use super::{check_system, Gradient, resolve_step, small_step, RecoveryResult};
use super::{DEFAULT_MAX_ITERS, DEFAULT_REL_TOL};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IhtConfig {
    /// Number of entries kept after each step.
    pub sparsity: usize,
    /// Gradient step `mu`; `None` uses `1 / sigma_max(X)^2`.
    pub step: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl IhtConfig {
    pub fn new(sparsity: usize) -> Self {
        Self {
            sparsity,
            step: None,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

/// Iterative hard thresholding: gradient step, then keep the `s` largest
/// magnitudes.
pub fn iht_recover(x: &DenseMatrix, y: &[f64], cfg: &IhtConfig) -> Result<RecoveryResult> {
    check_system(x, y)?;
    let sigma_max = spectral_norm(x)?;
    iht_recover_with_norm(x, y, cfg, sigma_max)
}

pub fn iht_recover_with_norm(
    x: &DenseMatrix,
    y: &[f64],
    cfg: &IhtConfig,
    sigma_max: f64,
) -> Result<RecoveryResult> {
    check_system(x, y)?;
    if cfg.sparsity == 0 || cfg.sparsity > x.cols() {
        return Err(Error::invalid(format!(
            "IHT sparsity must lie in 1..={}, got {}",
            x.cols(),
            cfg.sparsity
        )));
    }
    if !(cfg.rel_tol > 0.0) {
        return Err(Error::invalid("IHT rel_tol must be > 0"));
    }
    let step = resolve_step(cfg.step, sigma_max)?;

    let grad = Gradient::new(x, y);
    let mut beta = vec![0.0; x.cols()];
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..cfg.max_iters {
        let next = keep_largest(&grad.step(&beta, step), cfg.sparsity);
        iterations = k + 1;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: iterations });
        }
        let done = small_step(&beta, &next, cfg.rel_tol);
        beta = next;
        if done {
            converged = true;
            break;
        }
    }
    Ok(RecoveryResult {
        beta_hat: beta,
        iterations_used: iterations,
        converged,
        final_threshold: 0.0,
    })
}
