//! Synthetic problem instances: a random low-rank design built from
//! orthonormal factors, a sparse Gaussian parameter vector, additive Gaussian
//! label noise and an i.i.d. Bernoulli observation mask.
//!
//! Every generator takes an explicit `u64` seed. [`gen_dataset`] derives its
//! component seeds as `seed, seed+1, ..., seed+5` for U, V, the singular
//! values, beta, the noise and the mask, in that order.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize, DenseMatrix};

/// Generator used for every random draw in the toolkit.
pub type Rng64 = Xoshiro256PlusPlus;

/// Name of the random-number contract, recorded in run metadata.
pub const RNG_NAME: &str = "xoshiro256++ (rand_xoshiro 0.6, seed_from_u64 via splitmix64); \
normals: rand_distr 0.4 StandardNormal (ziggurat); uniforms: rand 0.8 gen::<f64>()";

pub fn rng_from_seed(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}

/// Parameter vector with a known support size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSignal {
    values: Vec<f64>,
    sparsity: usize,
}

impl SparseSignal {
    /// Wraps `values`; the sparsity is the count of exact nonzeros.
    pub fn new(values: Vec<f64>) -> Self {
        let sparsity = values.iter().filter(|v| **v != 0.0).count();
        Self { values, sparsity }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices of the nonzero entries, ascending.
    pub fn support(&self) -> Vec<usize> {
        support(&self.values)
    }
}

/// Ascending indices `i` with `v[i] != 0`.
pub fn support(v: &[f64]) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// A design matrix with Bernoulli-missing entries stored as zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedMatrix {
    /// `x ⊙ mask`.
    pub observed: DenseMatrix,
    /// Entries in `{0, 1}`; 1 marks an observed entry.
    pub mask: DenseMatrix,
    /// Probability that an entry is observed.
    pub keep_probability: f64,
}

impl MaskedMatrix {
    pub fn observed_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&b| b != 0.0).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        let total = self.mask.as_slice().len();
        if total == 0 {
            0.0
        } else {
            self.observed_count() as f64 / total as f64
        }
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.get(i, j) != 0.0
    }
}

/// Shape and noise parameters of a synthetic instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub sparsity: usize,
    /// Keep probability of the mask (0.5 means half the entries are missing).
    pub alpha: f64,
    pub noise_sigma: f64,
}

pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::invalid("m and n must be positive"));
        }
        if self.rank == 0 || self.rank > self.m.min(self.n) {
            return Err(Error::invalid(format!(
                "rank must lie in 1..={}, got {}",
                self.m.min(self.n),
                self.rank
            )));
        }
        if self.sparsity == 0 || self.sparsity > self.n {
            return Err(Error::invalid(format!(
                "sparsity must lie in 1..={}, got {}",
                self.n, self.sparsity
            )));
        }
        check_probability(self.alpha)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// One synthetic regression instance with missing design entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub masked: MaskedMatrix,
    /// The fully observed low-rank design.
    pub oracle: DenseMatrix,
    pub beta_true: SparseSignal,
    /// `oracle * beta_true + noise`; never masked.
    pub labels: Vec<f64>,
    pub noise_sigma: f64,
    pub rank: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.oracle.rows()
    }

    pub fn n(&self) -> usize {
        self.oracle.cols()
    }
}

fn check_probability(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng_from_seed(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// `U diag(sigma) V^T` with orthonormalized Gaussian factors and
/// `sigma_i = |N(0, 1)|`. Uses seeds `seed` (U), `seed+1` (V), `seed+2` (sigma).
pub fn gen_low_rank(m: usize, n: usize, r: usize, seed: u64) -> Result<DenseMatrix> {
    if m == 0 || n == 0 || r == 0 || r > m.min(n) {
        return Err(Error::invalid(format!(
            "gen_low_rank needs 1 <= r <= min(m, n); got m={m}, n={n}, r={r}"
        )));
    }
    let u = orthonormalize(&gaussian_matrix(m, r, seed))?;
    let v = orthonormalize(&gaussian_matrix(n, r, seed.wrapping_add(1)))?;
    let mut rng = rng_from_seed(seed.wrapping_add(2));
    let sigma: Vec<f64> = (0..r)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z.abs()
        })
        .collect();
    Ok(u.scale_columns(&sigma).matmul(&v.transpose()))
}

/// An `m x n` design (`m >= n`) with orthonormalized Gaussian factors and
/// singular values drawn uniformly from `[1, max_cond)`, so its condition
/// number is below `max_cond`. Uses seeds `seed`, `seed+1`, `seed+2`.
pub fn gen_conditioned_design(m: usize, n: usize, max_cond: f64, seed: u64) -> Result<DenseMatrix> {
    if n == 0 || m < n {
        return Err(Error::invalid(format!(
            "gen_conditioned_design needs m >= n >= 1; got m={m}, n={n}"
        )));
    }
    if !(max_cond > 1.0) {
        return Err(Error::invalid(format!("max_cond must exceed 1, got {max_cond}")));
    }
    let u = orthonormalize(&gaussian_matrix(m, n, seed))?;
    let v = orthonormalize(&gaussian_matrix(n, n, seed.wrapping_add(1)))?;
    let mut rng = rng_from_seed(seed.wrapping_add(2));
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..max_cond)).collect();
    Ok(u.scale_columns(&sigma).matmul(&v.transpose()))
}

/// A length-`n` vector with `s` standard-Gaussian entries on a uniformly
/// random support.
pub fn gen_sparse_beta(n: usize, s: usize, seed: u64) -> Result<SparseSignal> {
    if s == 0 || s > n {
        return Err(Error::invalid(format!(
            "gen_sparse_beta needs 1 <= s <= n; got n={n}, s={s}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let chosen = sample(&mut rng, n, s);
    let mut values = vec![0.0; n];
    for i in chosen.iter() {
        let mut z: f64 = StandardNormal.sample(&mut rng);
        while z == 0.0 {
            z = StandardNormal.sample(&mut rng);
        }
        values[i] = z;
    }
    Ok(SparseSignal::new(values))
}

/// Draws an i.i.d. Bernoulli(`alpha`) mask and zeroes the unobserved entries
/// of `x`.
pub fn apply_mask(x: &DenseMatrix, alpha: f64, seed: u64) -> Result<MaskedMatrix> {
    check_probability(alpha)?;
    let mut rng = rng_from_seed(seed);
    let mask = DenseMatrix::from_fn(x.rows(), x.cols(), |_, _| {
        if rng.gen::<f64>() < alpha {
            1.0
        } else {
            0.0
        }
    });
    Ok(MaskedMatrix {
        observed: x.hadamard(&mask),
        mask,
        keep_probability: alpha,
    })
}

/// Full instance: low-rank oracle design, sparse beta, labels from the
/// unmasked design plus `N(0, noise_sigma^2)` noise, then the mask.
pub fn gen_dataset(params: &DatasetParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let oracle = gen_low_rank(params.m, params.n, params.rank, seed)?;
    let beta = gen_sparse_beta(params.n, params.sparsity, seed.wrapping_add(3))?;
    let mut labels = oracle.matvec(beta.values());
    let mut rng = rng_from_seed(seed.wrapping_add(4));
    for y in labels.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *y += params.noise_sigma * e;
    }
    let masked = apply_mask(&oracle, params.alpha, seed.wrapping_add(5))?;
    Ok(Dataset {
        masked,
        oracle,
        beta_true: beta,
        labels,
        noise_sigma: params.noise_sigma,
        rank: params.rank,
        seed,
    })
}

const DATASET_FORMAT: &str = "sparse-recovery-dataset/1";

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    rng: String,
    m: usize,
    n: usize,
    dataset: Dataset,
}

/// Writes the dataset as a JSON document (see the README for the layout).
pub fn export_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = DatasetFile {
        format: DATASET_FORMAT.to_string(),
        rng: RNG_NAME.to_string(),
        m: ds.m(),
        n: ds.n(),
        dataset: ds.clone(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| Error::invalid(format!("cannot serialize dataset: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn import_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: format!("line {}: {e}", e.line()),
    })?;
    if file.format != DATASET_FORMAT {
        return Err(Error::Config {
            path: path.display().to_string(),
            message: format!("unsupported format tag {:?}", file.format),
        });
    }
    let ds = file.dataset;
    let shapes_ok = ds.oracle.shape() == (file.m, file.n)
        && ds.masked.observed.shape() == (file.m, file.n)
        && ds.masked.mask.shape() == (file.m, file.n)
        && ds.labels.len() == file.m
        && ds.beta_true.len() == file.n
        && ds.oracle.as_slice().len() == file.m * file.n;
    if !shapes_ok {
        return Err(Error::Config {
            path: path.display().to_string(),
            message: "field shapes disagree with the recorded dimensions".into(),
        });
    }
    Ok(ds)
}
