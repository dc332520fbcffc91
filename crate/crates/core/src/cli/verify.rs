//! Randomized invariant checks behind the `verify` subcommand.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::completion::{soft_impute, CompletionConfig};
use crate::datagen::{apply_mask, gen_low_rank, rng_from_seed, Rng64};
use crate::linalg::{orthonormality_error, svd, DenseMatrix, ORTHONORMALITY_TOL, SVD_RECONSTRUCTION_TOL};
use crate::solvers::{hard_threshold, iht_recover, lasso_solve_traced, IhtConfig, LassoConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Description of the first failing case.
    pub first_failure: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

type Check = fn(&mut Rng64) -> Result<(), String>;

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
}

fn gaussian_vec(len: usize, rng: &mut Rng64) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn threshold_idempotent(rng: &mut Rng64) -> Result<(), String> {
    let v = gaussian_vec(rng.gen_range(1..50), rng);
    let t = rng.gen_range(0.0..2.0);
    let once = hard_threshold(&v, t).map_err(|e| e.to_string())?;
    let twice = hard_threshold(&once, t).map_err(|e| e.to_string())?;
    if once != twice {
        return Err(format!("len {} t {t}", v.len()));
    }
    Ok(())
}

fn iht_sparsity(rng: &mut Rng64) -> Result<(), String> {
    let m = rng.gen_range(5..30);
    let n = rng.gen_range(2..30);
    let s = rng.gen_range(1..=n);
    let x = gaussian_matrix(m, n, rng);
    let y = gaussian_vec(m, rng);
    let res = iht_recover(&x, &y, &IhtConfig::new(s)).map_err(|e| e.to_string())?;
    if res.support_size() > s {
        return Err(format!("{m}x{n}, s {s}: support {}", res.support_size()));
    }
    Ok(())
}

fn lasso_monotone(rng: &mut Rng64) -> Result<(), String> {
    let m = rng.gen_range(5..30);
    let n = rng.gen_range(2..40);
    let x = gaussian_matrix(m, n, rng);
    let y = gaussian_vec(m, rng);
    let penalty = 10f64.powf(rng.gen_range(-3.0..1.0));
    let (_, trace) = lasso_solve_traced(&x, &y, &LassoConfig::new(penalty)).map_err(|e| e.to_string())?;
    let slack = 1e-12 * trace[0].max(1.0);
    if let Some(k) = trace.windows(2).position(|w| w[1] > w[0] + slack) {
        return Err(format!("{m}x{n}, penalty {penalty}: rises after sweep {k}"));
    }
    Ok(())
}

fn svd_reconstruction(rng: &mut Rng64) -> Result<(), String> {
    let m = rng.gen_range(1..25);
    let n = rng.gen_range(1..25);
    let a = gaussian_matrix(m, n, rng);
    let f = svd(&a).map_err(|e| e.to_string())?;
    let err = f.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm().max(1.0);
    if err > SVD_RECONSTRUCTION_TOL {
        return Err(format!("{m}x{n}: relative error {err:e}"));
    }
    let orth = orthonormality_error(&f.u).max(orthonormality_error(&f.v));
    if orth > ORTHONORMALITY_TOL {
        return Err(format!("{m}x{n}: orthonormality error {orth:e}"));
    }
    Ok(())
}

fn mask_fraction(rng: &mut Rng64) -> Result<(), String> {
    let alpha = rng.gen_range(0.05..0.95);
    let x = DenseMatrix::zeros(1000, 100);
    let mask = apply_mask(&x, alpha, rng.gen()).map_err(|e| e.to_string())?;
    let frac = mask.observed_fraction();
    if (frac - alpha).abs() > 0.01 {
        return Err(format!("alpha {alpha}: fraction {frac}"));
    }
    Ok(())
}

fn soft_impute_monotone(rng: &mut Rng64) -> Result<(), String> {
    let m = rng.gen_range(8..30);
    let n = rng.gen_range(8..30);
    let r = rng.gen_range(1..=4);
    let x = gen_low_rank(m, n, r, rng.gen()).map_err(|e| e.to_string())?;
    let masked = apply_mask(&x, rng.gen_range(0.4..0.9), rng.gen()).map_err(|e| e.to_string())?;
    if masked.observed_count() == 0 {
        return Ok(());
    }
    let lam = rng.gen_range(0.001..0.3);
    let cfg = CompletionConfig {
        max_iters: 50,
        ..CompletionConfig::new(lam)
    };
    let res = soft_impute(&masked, &cfg).map_err(|e| e.to_string())?;
    let t = &res.objective_trace;
    if let Some(k) = t.windows(2).position(|w| w[1] > w[0] * (1.0 + 1e-10) + 1e-15) {
        return Err(format!("{m}x{n} lam {lam}: objective rises after iteration {}", k + 1));
    }
    Ok(())
}

pub const SUITES: [(&str, Check); 6] = [
    ("hard_threshold idempotence", threshold_idempotent),
    ("IHT sparsity bound", iht_sparsity),
    ("LASSO per-sweep objective monotonicity", lasso_monotone),
    ("SVD reconstruction and orthonormality", svd_reconstruction),
    ("mask fraction concentration", mask_fraction),
    ("soft-impute objective monotonicity", soft_impute_monotone),
];

/// Runs every suite with `cases` random cases each.
pub fn run_suites(seed: u64, cases: usize) -> Vec<SuiteReport> {
    SUITES
        .iter()
        .enumerate()
        .map(|(k, (name, check))| {
            let mut rng = rng_from_seed(seed.wrapping_add(k as u64));
            let mut failures = 0;
            let mut first_failure = None;
            for case in 0..cases {
                if let Err(msg) = check(&mut rng) {
                    failures += 1;
                    first_failure.get_or_insert_with(|| format!("case {case}: {msg}"));
                }
            }
            SuiteReport {
                name,
                cases,
                failures,
                first_failure,
            }
        })
        .collect()
}
