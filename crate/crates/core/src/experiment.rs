//! Sweep protocol: generate, optionally complete, split, fit every grid point,
//! score on the held-out rows.
//!
//! Every trial is prepared once (dataset, completion, split, `sigma_max` of
//! the training design) and shared by all methods and grid points, so the
//! order in which grid points or methods are evaluated cannot change a result.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::completion::{soft_impute, soft_impute_from, CompletionConfig};
use crate::datagen::{gen_dataset, rng_from_seed, Dataset, DatasetParams, MaskedMatrix};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix};
use crate::solvers::{
    iht_recover_with_norm, imat_recover_with_norm, lasso_solve, IhtConfig, ImatConfig, LassoConfig,
    LASSO_DEFAULT_KKT_TOL, LASSO_DEFAULT_MAX_SWEEPS,
};

pub const TRAIN_RATIO: f64 = 0.8;
pub const DEFAULT_TRIALS: usize = 20;
/// Fraction of the observed entries held out when choosing the completion
/// shrinkage.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Declaration order is the CSV row order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Iht,
    Imat,
    Lasso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Iht, Method::Imat, Method::Lasso];

    pub fn name(self) -> &'static str {
        match self {
            Method::Iht => "iht",
            Method::Imat => "imat",
            Method::Lasso => "lasso",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iht" => Ok(Method::Iht),
            "imat" => Ok(Method::Imat),
            "lasso" => Ok(Method::Lasso),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected imat, iht or lasso)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    #[default]
    Raw,
    Precompleted,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Raw => "raw",
            Pipeline::Precompleted => "precompleted",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Pipeline::Raw),
            "precompleted" => Ok(Pipeline::Precompleted),
            _ => Err(Error::invalid(format!(
                "unknown pipeline {s:?} (expected raw or precompleted)"
            ))),
        }
    }
}

/// How the precompleted pipeline picks its shrinkage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CompletionChoice {
    /// Use this shrinkage directly.
    Fixed(f64),
    /// Pick the grid value with the smallest error on held-out observed entries.
    Select(Vec<f64>),
}

impl Default for CompletionChoice {
    fn default() -> Self {
        CompletionChoice::Select(default_grids().lasso)
    }
}

/// Iteration caps and stopping tolerances of the three solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub imat_max_iters: usize,
    pub imat_rel_tol: f64,
    pub iht_max_iters: usize,
    pub iht_rel_tol: f64,
    pub lasso_max_sweeps: usize,
    pub lasso_kkt_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            imat_max_iters: crate::solvers::DEFAULT_MAX_ITERS,
            imat_rel_tol: crate::solvers::DEFAULT_REL_TOL,
            iht_max_iters: crate::solvers::DEFAULT_MAX_ITERS,
            iht_rel_tol: crate::solvers::DEFAULT_REL_TOL,
            lasso_max_sweeps: LASSO_DEFAULT_MAX_SWEEPS,
            lasso_kkt_tol: LASSO_DEFAULT_KKT_TOL,
        }
    }
}

impl SolverSettings {
    /// Returns `(field, message)` for the first invalid value.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let caps = [
            ("imat_max_iters", self.imat_max_iters),
            ("iht_max_iters", self.iht_max_iters),
            ("lasso_max_sweeps", self.lasso_max_sweeps),
        ];
        if let Some((name, _)) = caps.iter().find(|(_, v)| *v == 0) {
            return Err((name, "must be >= 1".to_string()));
        }
        let tols = [
            ("imat_rel_tol", self.imat_rel_tol),
            ("iht_rel_tol", self.iht_rel_tol),
            ("lasso_kkt_tol", self.lasso_kkt_tol),
        ];
        if let Some((name, v)) = tols.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err((name, format!("must be finite and > 0, got {v}")));
        }
        Ok(())
    }
}

/// Everything that defines one trial, independent of method and grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSetup {
    pub dataset: DatasetParams,
    pub pipeline: Pipeline,
    pub completion: CompletionChoice,
    pub completion_max_iters: usize,
    pub completion_rel_tol: f64,
    pub solvers: SolverSettings,
}

impl TrialSetup {
    pub fn new(dataset: DatasetParams, pipeline: Pipeline) -> Self {
        Self {
            dataset,
            pipeline,
            completion: CompletionChoice::default(),
            completion_max_iters: crate::completion::DEFAULT_MAX_ITERS,
            completion_rel_tol: crate::completion::DEFAULT_REL_TOL,
            solvers: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.solvers
            .check()
            .map_err(|(field, msg)| Error::invalid(format!("{field}: {msg}")))?;
        match &self.completion {
            CompletionChoice::Fixed(v) if !(*v >= 0.0 && v.is_finite()) => {
                return Err(Error::invalid(format!("completion shrinkage must be >= 0, got {v}")))
            }
            CompletionChoice::Select(g) => validate_grid(g, "completion grid")?,
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub method: Method,
    /// Lasso: penalty. Imat: threshold factor `c`. Iht: step as a multiple of
    /// `1 / sigma_max(train_x)^2`.
    pub grid: Vec<f64>,
    pub trials: usize,
    pub setup: TrialSetup,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid, &format!("{} grid", self.method))?;
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        self.setup.validate()
    }
}

fn validate_grid(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} has non-finite values")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: Method,
    pub parameter: f64,
    /// Mean over the trials that did not diverge; NaN when none survived.
    pub mean_rmse: f64,
    pub trial_rmses: Vec<f64>,
    /// Fit time summed over trials.
    pub wall_time_seconds: f64,
    /// Trials dropped because the solver diverged.
    pub diverged: usize,
}

impl SweepRecord {
    /// Sample standard deviation of the trial RMSEs (0 for a single trial).
    pub fn std_rmse(&self) -> f64 {
        let n = self.trial_rmses.len();
        if n < 2 {
            return if n == 1 { 0.0 } else { f64::NAN };
        }
        let ss: f64 = self
            .trial_rmses
            .iter()
            .map(|r| (r - self.mean_rmse).powi(2))
            .sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn trials(&self) -> usize {
        self.trial_rmses.len() + self.diverged
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train_x: DenseMatrix,
    pub train_y: Vec<f64>,
    pub test_x: DenseMatrix,
    pub test_y: Vec<f64>,
    pub split_seed: u64,
}

/// Row split of the observed (masked) design.
pub fn split(ds: &Dataset, ratio: f64, split_seed: u64) -> Result<SplitDataset> {
    split_rows(&ds.masked.observed, &ds.labels, ratio, split_seed)
}

/// First `ceil(ratio * m)` rows of a seeded uniform permutation go to train.
pub fn split_rows(x: &DenseMatrix, y: &[f64], ratio: f64, split_seed: u64) -> Result<SplitDataset> {
    let m = x.rows();
    if y.len() != m {
        return Err(Error::invalid(format!("design has {m} rows, labels {}", y.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n_train = (ratio * m as f64).ceil() as usize;
    if n_train == 0 || n_train >= m {
        return Err(Error::invalid(format!(
            "split of {m} rows at ratio {ratio} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng_from_seed(split_seed));
    let (train, test) = order.split_at(n_train);
    Ok(SplitDataset {
        train_x: x.select_rows(train),
        train_y: train.iter().map(|&i| y[i]).collect(),
        test_x: x.select_rows(test),
        test_y: test.iter().map(|&i| y[i]).collect(),
        split_seed,
    })
}

pub fn rmse(y_pred: &[f64], y_true: &[f64]) -> Result<f64> {
    if y_pred.len() != y_true.len() || y_pred.is_empty() {
        return Err(Error::invalid(format!(
            "rmse needs equal nonzero lengths, got {} and {}",
            y_pred.len(),
            y_true.len()
        )));
    }
    let ss: f64 = y_pred.iter().zip(y_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y_pred.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefaultGrids {
    pub lasso: Vec<f64>,
    pub imat_c: Vec<f64>,
    /// Multipliers of `1 / sigma_max(train_x)^2`.
    pub iht_mu: Vec<f64>,
}

impl DefaultGrids {
    pub fn for_method(&self, method: Method) -> &[f64] {
        match method {
            Method::Iht => &self.iht_mu,
            Method::Imat => &self.imat_c,
            Method::Lasso => &self.lasso,
        }
    }
}

pub fn default_grids() -> DefaultGrids {
    DefaultGrids {
        lasso: (-4..=2).map(|e| 10f64.powi(e)).collect(),
        imat_c: (1..=10).map(f64::from).collect(),
        iht_mu: (0..10).map(|k| 10f64.powf(-3.0 + 3.0 * k as f64 / 9.0)).collect(),
    }
}

/// Seed of trial `t`; depends only on the base seed and the trial index.
pub fn trial_seed(base_seed: u64, t: usize) -> u64 {
    base_seed.wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One trial ready for fitting.
#[derive(Clone, Debug)]
pub struct PreparedTrial {
    pub seed: u64,
    pub split: SplitDataset,
    pub sparsity: usize,
    pub sigma_max: f64,
    /// Time spent computing `sigma_max`. A sweep of IMAT or IHT pays it once
    /// per trial, split evenly over its grid points.
    pub sigma_seconds: f64,
    /// Completion shrinkage used (precompleted pipeline only).
    pub completion_shrinkage: Option<f64>,
    pub solvers: SolverSettings,
}

pub fn prepare_trial(setup: &TrialSetup, seed: u64) -> Result<PreparedTrial> {
    let ds = gen_dataset(&setup.dataset, seed)?;
    let (design, shrinkage) = match setup.pipeline {
        Pipeline::Raw => (ds.masked.observed.clone(), None),
        Pipeline::Precompleted => {
            let (z, lam) = complete_design(&ds.masked, setup, seed.wrapping_add(7))?;
            (z, Some(lam))
        }
    };
    let split = split_rows(&design, &ds.labels, TRAIN_RATIO, seed.wrapping_add(6))?;
    let start = Instant::now();
    let sigma_max = spectral_norm(&split.train_x)?;
    let sigma_seconds = start.elapsed().as_secs_f64();
    Ok(PreparedTrial {
        seed,
        split,
        sparsity: setup.dataset.sparsity,
        sigma_max,
        sigma_seconds,
        completion_shrinkage: shrinkage,
        solvers: setup.solvers,
    })
}

/// Completes the whole masked design, choosing the shrinkage if asked to.
pub fn complete_design(
    masked: &MaskedMatrix,
    setup: &TrialSetup,
    holdout_seed: u64,
) -> Result<(DenseMatrix, f64)> {
    let cfg = |lam| CompletionConfig {
        max_iters: setup.completion_max_iters,
        rel_tol: setup.completion_rel_tol,
        ..CompletionConfig::new(lam)
    };
    match &setup.completion {
        CompletionChoice::Fixed(lam) => Ok((soft_impute(masked, &cfg(*lam))?.completed, *lam)),
        CompletionChoice::Select(grid) => {
            let (lam, warm) = select_shrinkage(masked, grid, &cfg, holdout_seed)?;
            let res = match warm {
                Some(start) => soft_impute_from(masked, &cfg(lam), &start)?,
                None => soft_impute(masked, &cfg(lam))?,
            };
            Ok((res.completed, lam))
        }
    }
}

/// Walks the grid from the largest shrinkage down, warm-starting each
/// completion from the previous one, and keeps the value with the smallest
/// squared error on a random tenth of the observed entries.
fn select_shrinkage(
    masked: &MaskedMatrix,
    grid: &[f64],
    cfg: &dyn Fn(f64) -> CompletionConfig,
    holdout_seed: u64,
) -> Result<(f64, Option<DenseMatrix>)> {
    let observed: Vec<usize> = masked
        .mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut rng = rng_from_seed(holdout_seed);
    let held: Vec<usize> = observed
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() < HOLDOUT_FRACTION)
        .collect();
    if held.is_empty() || held.len() == observed.len() {
        // Too few entries to hold any out; fall back to the smallest value.
        return Ok((grid[0], None));
    }
    let mut train = masked.clone();
    for &k in &held {
        train.mask.as_mut_slice()[k] = 0.0;
        train.observed.as_mut_slice()[k] = 0.0;
    }
    let truth = masked.observed.as_slice();
    let mut best: Option<(f64, f64, DenseMatrix)> = None;
    let mut start = train.observed.clone();
    for &lam in grid.iter().rev() {
        let res = soft_impute_from(&train, &cfg(lam), &start)?;
        let z = res.completed.as_slice();
        let err: f64 = held.iter().map(|&k| (z[k] - truth[k]).powi(2)).sum();
        if best.as_ref().map_or(true, |b| err < b.1) {
            best = Some((lam, err, res.completed.clone()));
        }
        start = res.completed;
    }
    let (lam, _, z) = best.expect("grid is nonempty");
    Ok((lam, Some(z)))
}

/// Fits one method at one grid point; returns the estimate and the fit time,
/// not counting `trial.sigma_seconds`.
pub fn fit(trial: &PreparedTrial, method: Method, parameter: f64) -> Result<(Vec<f64>, f64)> {
    let s = &trial.split;
    let cfg = &trial.solvers;
    let start = Instant::now();
    let beta = match method {
        Method::Lasso => {
            let lasso = LassoConfig {
                max_sweeps: cfg.lasso_max_sweeps,
                kkt_tol: cfg.lasso_kkt_tol,
                ..LassoConfig::new(parameter)
            };
            lasso_solve(&s.train_x, &s.train_y, &lasso)?.beta_hat
        }
        Method::Imat => {
            let imat = ImatConfig {
                max_iters: cfg.imat_max_iters,
                rel_tol: cfg.imat_rel_tol,
                ..ImatConfig::adaptive(parameter)
            };
            imat_recover_with_norm(&s.train_x, &s.train_y, &imat, trial.sigma_max)?.beta_hat
        }
        Method::Iht => {
            let step = if trial.sigma_max > 0.0 {
                parameter / (trial.sigma_max * trial.sigma_max)
            } else {
                parameter
            };
            let iht = IhtConfig {
                step: Some(step),
                max_iters: cfg.iht_max_iters,
                rel_tol: cfg.iht_rel_tol,
                ..IhtConfig::new(trial.sparsity)
            };
            iht_recover_with_norm(&s.train_x, &s.train_y, &iht, trial.sigma_max)?.beta_hat
        }
    };
    Ok((beta, start.elapsed().as_secs_f64()))
}

/// Runs several methods over shared trials. `sweeps` pairs each method with
/// its grid; records come back sorted by method, then parameter.
pub fn run_comparison(
    setup: &TrialSetup,
    sweeps: &[(Method, Vec<f64>)],
    trials: usize,
    base_seed: u64,
) -> Result<Vec<SweepRecord>> {
    setup.validate()?;
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if sweeps.is_empty() {
        return Err(Error::invalid("no methods to run"));
    }
    for (method, grid) in sweeps {
        validate_grid(grid, &format!("{method} grid"))?;
    }
    let mut records: Vec<SweepRecord> = sweeps
        .iter()
        .flat_map(|(method, grid)| {
            grid.iter().map(move |&p| SweepRecord {
                method: *method,
                parameter: p,
                mean_rmse: f64::NAN,
                trial_rmses: Vec::with_capacity(trials),
                wall_time_seconds: 0.0,
                diverged: 0,
            })
        })
        .collect();
    let grid_len: Vec<usize> = sweeps
        .iter()
        .flat_map(|(_, grid)| std::iter::repeat(grid.len()).take(grid.len()))
        .collect();
    for t in 0..trials {
        let trial = prepare_trial(setup, trial_seed(base_seed, t))?;
        for (rec, &len) in records.iter_mut().zip(&grid_len) {
            match fit(&trial, rec.method, rec.parameter) {
                Ok((beta, secs)) => {
                    let pred = trial.split.test_x.matvec(&beta);
                    rec.trial_rmses.push(rmse(&pred, &trial.split.test_y)?);
                    rec.wall_time_seconds += secs;
                    if rec.method != Method::Lasso {
                        rec.wall_time_seconds += trial.sigma_seconds / len as f64;
                    }
                }
                Err(e) if e.is_numerical() => rec.diverged += 1,
                Err(e) => return Err(e),
            }
        }
    }
    for rec in records.iter_mut() {
        if !rec.trial_rmses.is_empty() {
            rec.mean_rmse = rec.trial_rmses.iter().sum::<f64>() / rec.trial_rmses.len() as f64;
        }
    }
    records.sort_by(|a, b| a.method.cmp(&b.method).then(a.parameter.total_cmp(&b.parameter)));
    Ok(records)
}

pub fn run_sweep(spec: &SweepSpec, base_seed: u64) -> Result<Vec<SweepRecord>> {
    spec.validate()?;
    run_comparison(&spec.setup, &[(spec.method, spec.grid.clone())], spec.trials, base_seed)
}

/// Total fit time over every grid point and trial, excluding data
/// generation and completion.
pub fn time_training(spec: &SweepSpec, base_seed: u64) -> Result<f64> {
    Ok(run_sweep(spec, base_seed)?
        .iter()
        .map(|r| r.wall_time_seconds)
        .sum())
}

/// Smallest mean RMSE among the records of `method` (NaN means are skipped).
pub fn min_mean_rmse(records: &[SweepRecord], method: Method) -> Option<f64> {
    records
        .iter()
        .filter(|r| r.method == method && !r.mean_rmse.is_nan())
        .map(|r| r.mean_rmse)
        .min_by(f64::total_cmp)
}
