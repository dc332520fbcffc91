use serde::{Deserialize, Serialize};

use super::threshold::{adaptive_threshold, hard_threshold_in_place};
use super::{check_system, Gradient, resolve_step, small_step, RecoveryResult};
use super::{DEFAULT_MAX_ITERS, DEFAULT_REL_TOL};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix};

/// How IMAT picks the threshold for iteration `k + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `c * mean(|beta_k|)`.
    Adaptive { c: f64 },
    /// `t0 * exp(-alpha_decay * (k + 1))`.
    Exponential { t0: f64, alpha_decay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImatConfig {
    /// Relaxation of the gradient step; `None` uses `1 / sigma_max(X)^2`.
    pub step: Option<f64>,
    pub threshold: ThresholdMode,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl ImatConfig {
    pub fn adaptive(c: f64) -> Self {
        Self {
            step: None,
            threshold: ThresholdMode::Adaptive { c },
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
        }
    }

    pub fn exponential(t0: f64, alpha_decay: f64) -> Self {
        Self {
            threshold: ThresholdMode::Exponential { t0, alpha_decay },
            ..Self::adaptive(1.0)
        }
    }

    fn validate(&self) -> Result<()> {
        match self.threshold {
            ThresholdMode::Adaptive { c } if !(c > 0.0 && c.is_finite()) => {
                return Err(Error::invalid(format!("IMAT c must be > 0, got {c}")))
            }
            ThresholdMode::Exponential { t0, alpha_decay }
                if !(t0 > 0.0 && alpha_decay > 0.0 && t0.is_finite() && alpha_decay.is_finite()) =>
            {
                return Err(Error::invalid(format!(
                    "IMAT exponential threshold needs t0 > 0 and alpha_decay > 0, got {t0}, {alpha_decay}"
                )))
            }
            _ => {}
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("IMAT rel_tol must be > 0"));
        }
        Ok(())
    }
}

/// Iterative method with adaptive thresholding, starting from `beta = 0`:
/// a Landweber gradient step followed by hard thresholding at a level derived
/// from the previous iterate (or from the exponential schedule).
pub fn imat_recover(x: &DenseMatrix, y: &[f64], cfg: &ImatConfig) -> Result<RecoveryResult> {
    check_system(x, y)?;
    let sigma_max = spectral_norm(x)?;
    imat_recover_with_norm(x, y, cfg, sigma_max)
}

/// As [`imat_recover`] with a precomputed `sigma_max(X)`.
pub fn imat_recover_with_norm(
    x: &DenseMatrix,
    y: &[f64],
    cfg: &ImatConfig,
    sigma_max: f64,
) -> Result<RecoveryResult> {
    check_system(x, y)?;
    cfg.validate()?;
    let step = resolve_step(cfg.step, sigma_max)?;

    let grad = Gradient::new(x, y);
    let mut beta = vec![0.0; x.cols()];
    let mut threshold = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..cfg.max_iters {
        threshold = match cfg.threshold {
            ThresholdMode::Adaptive { c } => adaptive_threshold(&beta, c),
            ThresholdMode::Exponential { t0, alpha_decay } => {
                t0 * (-alpha_decay * (k + 1) as f64).exp()
            }
        };
        let mut next = grad.step(&beta, step);
        hard_threshold_in_place(&mut next, threshold);
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
        final_threshold: threshold,
    })
}
