//! Experiment configuration files (TOML, strict).
//!
//! Every key is optional; an empty file is a valid configuration. Unknown
//! keys anywhere are rejected. See the README for the full grammar.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::completion;
use crate::datagen::{DatasetParams, DEFAULT_NOISE_SIGMA};
use crate::error::{Error, Result};
use crate::experiment::{
    default_grids, CompletionChoice, Method, Pipeline, SolverSettings, TrialSetup, DEFAULT_TRIALS,
};

pub const DEFAULT_OUTPUT: &str = "results.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub sparsity: usize,
    pub alpha: f64,
    pub noise_sigma: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            m: 100,
            n: 100,
            rank: 50,
            sparsity: 8,
            alpha: 0.5,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

impl DatasetSection {
    pub fn params(&self) -> DatasetParams {
        DatasetParams {
            m: self.m,
            n: self.n,
            rank: self.rank,
            sparsity: self.sparsity,
            alpha: self.alpha,
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub lasso: Vec<f64>,
    pub imat: Vec<f64>,
    /// Multiples of `1 / sigma_max(train_x)^2`.
    pub iht: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = default_grids();
        Self {
            lasso: g.lasso,
            imat: g.imat_c,
            iht: g.iht_mu,
        }
    }
}

impl GridSection {
    pub fn for_method(&self, method: Method) -> &[f64] {
        match method {
            Method::Iht => &self.iht,
            Method::Imat => &self.imat,
            Method::Lasso => &self.lasso,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionSection {
    /// Fixed shrinkage; when absent the value is chosen from `grid`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shrinkage: Option<f64>,
    pub grid: Vec<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for CompletionSection {
    fn default() -> Self {
        Self {
            shrinkage: None,
            grid: default_grids().lasso,
            max_iters: completion::DEFAULT_MAX_ITERS,
            rel_tol: completion::DEFAULT_REL_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub methods: Vec<Method>,
    pub pipeline: Pipeline,
    pub trials: usize,
    pub base_seed: u64,
    pub output: String,
    /// Write measured fit times into the CSV. Off by default so that reruns
    /// produce identical files; times always go to the metadata.
    pub record_wall_time: bool,
    pub dataset: DatasetSection,
    pub grids: GridSection,
    pub completion: CompletionSection,
    pub solvers: SolverSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "experiment".to_string(),
            methods: Method::ALL.to_vec(),
            pipeline: Pipeline::Raw,
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            output: DEFAULT_OUTPUT.to_string(),
            record_wall_time: false,
            dataset: DatasetSection::default(),
            grids: GridSection::default(),
            completion: CompletionSection::default(),
            solvers: SolverSettings::default(),
        }
    }
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> String {
    format!("{field}: {msg}")
}

fn check_grid(field: &str, grid: &[f64]) -> std::result::Result<(), String> {
    if grid.is_empty() {
        return Err(field_error(field, "grid must not be empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(field_error(field, "grid values must be finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(field_error(field, "grid must be strictly increasing"));
    }
    Ok(())
}

impl RunConfig {
    /// Checks every field; the message names the first offending key.
    pub fn check(&self) -> std::result::Result<(), String> {
        let d = &self.dataset;
        if d.m < 2 {
            return Err(field_error("dataset.m", format!("must be >= 2, got {}", d.m)));
        }
        if d.n == 0 {
            return Err(field_error("dataset.n", "must be >= 1"));
        }
        if d.rank == 0 || d.rank > d.m.min(d.n) {
            return Err(field_error(
                "dataset.rank",
                format!("must lie in 1..={}, got {}", d.m.min(d.n), d.rank),
            ));
        }
        if d.sparsity == 0 || d.sparsity > d.n {
            return Err(field_error(
                "dataset.sparsity",
                format!("must lie in 1..={}, got {}", d.n, d.sparsity),
            ));
        }
        if !(0.0..=1.0).contains(&d.alpha) {
            return Err(field_error("dataset.alpha", format!("must lie in [0, 1], got {}", d.alpha)));
        }
        if !(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite()) {
            return Err(field_error(
                "dataset.noise_sigma",
                format!("must be finite and >= 0, got {}", d.noise_sigma),
            ));
        }
        if self.methods.is_empty() {
            return Err(field_error("methods", "must list at least one method"));
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(field_error("methods", "lists a method twice"));
        }
        if self.trials == 0 {
            return Err(field_error("trials", "must be >= 1"));
        }
        if self.base_seed > i64::MAX as u64 {
            return Err(field_error("base_seed", format!("must be <= {}", i64::MAX)));
        }
        if self.output.is_empty() {
            return Err(field_error("output", "must not be empty"));
        }
        check_grid("grids.lasso", &self.grids.lasso)?;
        check_grid("grids.imat", &self.grids.imat)?;
        check_grid("grids.iht", &self.grids.iht)?;
        if self.grids.lasso[0] < 0.0 {
            return Err(field_error("grids.lasso", "penalties must be >= 0"));
        }
        if self.grids.imat[0] <= 0.0 {
            return Err(field_error("grids.imat", "threshold factors must be > 0"));
        }
        if self.grids.iht[0] <= 0.0 || *self.grids.iht.last().unwrap() >= 2.0 {
            return Err(field_error("grids.iht", "step multipliers must lie in (0, 2)"));
        }
        let c = &self.completion;
        if let Some(s) = c.shrinkage {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(field_error("completion.shrinkage", format!("must be >= 0, got {s}")));
            }
        }
        check_grid("completion.grid", &c.grid)?;
        if c.grid[0] < 0.0 {
            return Err(field_error("completion.grid", "values must be >= 0"));
        }
        if c.max_iters == 0 {
            return Err(field_error("completion.max_iters", "must be >= 1"));
        }
        if !(c.rel_tol > 0.0) {
            return Err(field_error("completion.rel_tol", "must be > 0"));
        }
        self.solvers
            .check()
            .map_err(|(field, msg)| field_error(&format!("solvers.{field}"), msg))
    }

    pub fn setup(&self) -> TrialSetup {
        TrialSetup {
            dataset: self.dataset.params(),
            pipeline: self.pipeline,
            completion: match self.completion.shrinkage {
                Some(s) => CompletionChoice::Fixed(s),
                None => CompletionChoice::Select(self.completion.grid.clone()),
            },
            completion_max_iters: self.completion.max_iters,
            completion_rel_tol: self.completion.rel_tol,
            solvers: self.solvers,
        }
    }

    /// Methods paired with their grids, in CSV order.
    pub fn sweeps(&self) -> Vec<(Method, Vec<f64>)> {
        let mut methods = self.methods.clone();
        methods.sort();
        methods
            .into_iter()
            .map(|m| (m, self.grids.for_method(m).to_vec()))
            .collect()
    }

    /// The config as TOML with every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

/// Parses and validates configuration text. `origin` names the source in
/// error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    cfg.check().map_err(|message| Error::Config {
        path: origin.to_string(),
        message,
    })?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: format!("cannot read file: {e}"),
    })?;
    parse_config_str(&text, &path.display().to_string())
}
