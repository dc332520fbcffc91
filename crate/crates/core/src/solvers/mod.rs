//! Sparse recovery of `beta` from `y ≈ X beta`: IMAT with adaptive or
//! exponentially decaying thresholds, iterative hard thresholding, and LASSO
//! by cyclic coordinate descent.

mod iht;
mod imat;
mod lasso;
mod threshold;

pub use iht::{iht_recover, iht_recover_with_norm, IhtConfig};
pub use imat::{imat_recover, imat_recover_with_norm, ImatConfig, ThresholdMode};
pub use lasso::{
    lasso_objective, lasso_solve, lasso_solve_traced, LassoConfig,
    DEFAULT_KKT_TOL as LASSO_DEFAULT_KKT_TOL, DEFAULT_MAX_SWEEPS as LASSO_DEFAULT_MAX_SWEEPS,
};
pub use threshold::{adaptive_threshold, hard_threshold, keep_largest};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

/// Output of any of the three solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub beta_hat: Vec<f64>,
    /// Iterations (IMAT, IHT) or coordinate sweeps (LASSO) performed.
    pub iterations_used: usize,
    pub converged: bool,
    /// Threshold applied in the last IMAT iteration; 0 for the other solvers.
    pub final_threshold: f64,
}

impl RecoveryResult {
    pub fn support_size(&self) -> usize {
        self.beta_hat.iter().filter(|v| **v != 0.0).count()
    }
}

pub(crate) fn check_system(x: &DenseMatrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::invalid(format!(
            "design has {} rows but y has length {}",
            x.rows(),
            y.len()
        )));
    }
    if x.cols() == 0 {
        return Err(Error::invalid("design has no columns"));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design or labels contain non-finite values"));
    }
    Ok(())
}

/// Resolves a gradient step against the Landweber bound `0 < step < 2 / sigma_max^2`.
/// `None` picks `1 / sigma_max^2`.
pub(crate) fn resolve_step(step: Option<f64>, sigma_max: f64) -> Result<f64> {
    let bound = if sigma_max > 0.0 {
        2.0 / (sigma_max * sigma_max)
    } else {
        f64::INFINITY
    };
    match step {
        None if sigma_max > 0.0 => Ok(1.0 / (sigma_max * sigma_max)),
        None => Ok(1.0),
        Some(s) if s > 0.0 && s < bound => Ok(s),
        Some(s) => Err(Error::invalid(format!(
            "step {s} outside (0, 2/sigma_max^2) = (0, {bound})"
        ))),
    }
}

/// `beta + step * X^T (y - X beta)`.
pub(crate) fn landweber_step(x: &DenseMatrix, y: &[f64], beta: &[f64], step: f64) -> Vec<f64> {
    let fitted = x.matvec(beta);
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let grad = x.matvec_transpose(&resid);
    beta.iter().zip(&grad).map(|(b, g)| b + step * g).collect()
}

/// Gradient of `||y - X beta||^2 / 2` for repeated use. Designs with at least
/// twice as many rows as columns switch to the normal equations, which makes
/// each step O(n^2) instead of O(mn).
pub(crate) enum Gradient<'a> {
    Direct { x: &'a DenseMatrix, y: &'a [f64] },
    Normal { g: DenseMatrix, xty: Vec<f64> },
}

impl<'a> Gradient<'a> {
    pub(crate) fn new(x: &'a DenseMatrix, y: &'a [f64]) -> Self {
        if x.rows() >= 2 * x.cols() {
            Gradient::Normal {
                g: x.gram(),
                xty: x.matvec_transpose(y),
            }
        } else {
            Gradient::Direct { x, y }
        }
    }

    /// `beta + step * X^T (y - X beta)`.
    pub(crate) fn step(&self, beta: &[f64], step: f64) -> Vec<f64> {
        match self {
            Gradient::Direct { x, y } => landweber_step(x, y, beta, step),
            Gradient::Normal { g, xty } => {
                let gb = g.matvec(beta);
                beta.iter()
                    .zip(xty.iter().zip(&gb))
                    .map(|(b, (c, d))| b + step * (c - d))
                    .collect()
            }
        }
    }
}

/// Shared stopping rule of the thresholding iterations.
pub(crate) fn small_step(prev: &[f64], next: &[f64], rel_tol: f64) -> bool {
    let diff = prev
        .iter()
        .zip(next)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = crate::linalg::norm2(prev).max(1.0);
    diff <= rel_tol * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn normal_form_matches_direct_step() {
        let mut rng = rng_from_seed(4);
        let x = DenseMatrix::from_fn(40, 7, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let beta: Vec<f64> = (0..7).map(|_| StandardNormal.sample(&mut rng)).collect();
        let grad = Gradient::new(&x, &y);
        assert!(matches!(grad, Gradient::Normal { .. }));
        let direct = landweber_step(&x, &y, &beta, 0.01);
        for (a, b) in grad.step(&beta, 0.01).iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert!(matches!(Gradient::new(&x.transpose(), &beta[..7]), Gradient::Direct { .. }));
    }

    #[test]
    fn step_resolution() {
        assert_eq!(resolve_step(None, 2.0).unwrap(), 0.25);
        assert!(resolve_step(Some(0.5), 2.0).is_err());
        assert!(resolve_step(Some(0.0), 2.0).is_err());
        assert!(resolve_step(Some(0.49), 2.0).is_ok());
    }

    #[test]
    fn landweber_step_never_increases_residual() {
        for seed in 0..50u64 {
            let mut rng = rng_from_seed(seed);
            let (m, n) = (12 + (seed as usize % 7), 5 + (seed as usize % 9));
            let x = DenseMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
            let y: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let beta: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let sigma = crate::linalg::spectral_norm(&x).unwrap();
            let step = resolve_step(None, sigma).unwrap();
            let resid = |b: &[f64]| {
                let f = x.matvec(b);
                crate::linalg::norm2(&y.iter().zip(&f).map(|(a, c)| a - c).collect::<Vec<_>>())
            };
            let before = resid(&beta);
            let after = resid(&landweber_step(&x, &y, &beta, step));
            assert!(after <= before * (1.0 + 1e-12), "seed {seed}: {after} > {before}");
            // Also near the upper end of the safe range.
            let near = 1.9 / (sigma * sigma);
            let after = resid(&landweber_step(&x, &y, &beta, near));
            assert!(after <= before * (1.0 + 1e-12));
        }
    }
}
