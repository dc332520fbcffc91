//! Dense real linear algebra: a row-major matrix type, Householder QR,
//! a one-sided Jacobi SVD and a Lanczos estimate of the spectral norm.
//!
//! The SVD first reduces a tall matrix to its `n x n` triangular factor with
//! Householder QR and then runs Hestenes one-sided Jacobi rotations on that
//! factor. Jacobi is slower than Golub-Kahan on large inputs but delivers
//! orthonormal factors to working precision, which the completion phase and
//! the reconstruction contract rely on.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reconstruction bound: `||U diag(S) V^T - A||_F <= SVD_RECONSTRUCTION_TOL * max(1, ||A||_F)`.
pub const SVD_RECONSTRUCTION_TOL: f64 = 1e-8;
/// Orthonormality bound on `U^T U - I` and `V^T V - I` (max-abs entry).
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Relative pivot below which [`orthonormalize`] reports rank deficiency.
pub const RANK_DEFICIENCY_TOL: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from row-major data; the length must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from column-major data.
    pub(crate) fn from_col_major(rows: usize, cols: usize, colmajor: &[f64]) -> Self {
        debug_assert_eq!(colmajor.len(), rows * cols);
        Self::from_fn(rows, cols, |i, j| colmajor[j * rows + i])
    }

    pub(crate) fn to_col_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`. Panics on a shape mismatch.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(p), out_row);
                }
            }
        }
        out
    }

    /// `self * x`. Panics on a length mismatch.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T * y`. Panics on a length mismatch.
    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, y.len(), "matvec_transpose length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    /// `self^T * self`, exploiting symmetry.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.cols;
        let mut g = DenseMatrix::zeros(n, n);
        for i in 0..self.rows {
            let r = self.row(i);
            for (p, &a) in r.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, &r[p..], &mut g.data[p * n + p..(p + 1) * n]);
                }
            }
        }
        for p in 0..n {
            for q in 0..p {
                g.data[p * n + q] = g.data[q * n + p];
            }
        }
        g
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.shape(), other.shape(), "hadamard shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Multiplies column `j` by `scale[j]`.
    pub fn scale_columns(&self, scale: &[f64]) -> DenseMatrix {
        assert_eq!(self.cols, scale.len());
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, s) in row.iter_mut().zip(scale) {
                *v *= s;
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Inner product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0_f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Largest absolute deviation of `Q^T Q` from the identity.
pub fn orthonormality_error(q: &DenseMatrix) -> f64 {
    let g = q.gram();
    let mut worst = 0.0_f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst
}

/// Thin singular value decomposition `A = U diag(S) V^T`.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// `m x k` with orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, nonnegative, length `k = min(m, n)`.
    pub singular_values: Vec<f64>,
    /// `n x k` with orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdFactors {
    /// `U diag(S) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(&self.singular_values)
    }

    /// `U diag(values) V^T` for replacement singular values. Columns with a
    /// zero value are skipped.
    pub fn reconstruct_with(&self, values: &[f64]) -> DenseMatrix {
        assert_eq!(values.len(), self.singular_values.len());
        let keep: Vec<usize> = (0..values.len()).filter(|&j| values[j] != 0.0).collect();
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = DenseMatrix::zeros(m, n);
        if keep.is_empty() {
            return out;
        }
        // V_k^T stored row-per-component so the inner loop is contiguous.
        let vt: Vec<Vec<f64>> = keep.iter().map(|&j| self.v.column(j)).collect();
        for i in 0..m {
            let out_row = &mut out.as_mut_slice()[i * n..(i + 1) * n];
            for (t, &j) in keep.iter().enumerate() {
                let coef = self.u.get(i, j) * values[j];
                if coef != 0.0 {
                    axpy(coef, &vt[t], out_row);
                }
            }
        }
        out
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top)
            .count()
    }
}

/// Knobs for the Jacobi SVD.
#[derive(Clone, Copy, Debug)]
pub struct SvdOptions {
    /// Columns `p, q` count as orthogonal once `|w_p . w_q| <= tol * ||w_p|| ||w_q||`.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            tol: 4.0 * f64::EPSILON,
            max_sweeps: 80,
        }
    }
}

/// Thin SVD with default options.
pub fn svd(a: &DenseMatrix) -> Result<SvdFactors> {
    svd_with(a, &SvdOptions::default())
}

pub fn svd_with(a: &DenseMatrix, opts: &SvdOptions) -> Result<SvdFactors> {
    check_input(a)?;
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose(), opts, true)?;
        return Ok(SvdFactors {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    svd_tall(a, opts, true)
}

/// SVD of `a` started from the right singular vectors of a nearby matrix
/// (for example the previous iterate of a fixed-point loop). The result is an
/// ordinary SVD of `a`; a good start only cuts the number of Jacobi sweeps.
pub fn svd_warm(a: &DenseMatrix, near: &SvdFactors) -> Result<SvdFactors> {
    check_input(a)?;
    let opts = SvdOptions::default();
    let (m, n) = a.shape();
    if m < n {
        if near.u.shape() != (m, m) {
            return svd_with(a, &opts);
        }
        let t = svd_tall_from(&a.transpose(), &opts, true, Some(&near.u))?;
        return Ok(SvdFactors {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    if near.v.shape() != (n, n) {
        return svd_with(a, &opts);
    }
    svd_tall_from(a, &opts, true, Some(&near.v))
}

/// Singular values only (nonincreasing); skips accumulating the singular vectors.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    check_input(a)?;
    let opts = SvdOptions::default();
    let f = if a.rows() < a.cols() {
        svd_tall(&a.transpose(), &opts, false)?
    } else {
        svd_tall(a, &opts, false)?
    };
    Ok(f.singular_values)
}

fn check_input(a: &DenseMatrix) -> Result<()> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::invalid("matrix must have at least one row and column"));
    }
    if !a.is_finite() {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    Ok(())
}

/// Householder QR of a column-major `m x n` buffer (`m >= n`), in place.
/// On return the upper triangle holds `R`, the strict lower part holds the
/// reflector tails, and `betas[k]` the reflector scales (`v_k[k] = 1` implied
/// after rescaling is NOT used; `heads[k]` stores the first reflector entry).
struct Householder {
    m: usize,
    n: usize,
    /// Column-major; reflector `k` lives in `a[k*m + k .. (k+1)*m]` with head `heads[k]`.
    a: Vec<f64>,
    heads: Vec<f64>,
    betas: Vec<f64>,
    diag: Vec<f64>,
}

impl Householder {
    fn factor(mut a: Vec<f64>, m: usize, n: usize) -> Self {
        debug_assert!(m >= n);
        let mut heads = vec![0.0; n];
        let mut betas = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for k in 0..n {
            let (left, right) = a.split_at_mut((k + 1) * m);
            let col = &mut left[k * m + k..];
            let norm = norm2(col);
            if norm == 0.0 {
                diag[k] = 0.0;
                continue;
            }
            let alpha = if col[0] > 0.0 { -norm } else { norm };
            col[0] -= alpha;
            let vtv = dot(col, col);
            let beta = 2.0 / vtv;
            for j in 0..(n - k - 1) {
                let other = &mut right[j * m + k..(j + 1) * m];
                let s = beta * dot(col, other);
                axpy(-s, col, other);
            }
            heads[k] = col[0];
            betas[k] = beta;
            diag[k] = alpha;
        }
        Self {
            m,
            n,
            a,
            heads,
            betas,
            diag,
        }
    }

    /// Upper-triangular `R` as a column-major `n x n` buffer.
    fn r(&self) -> Vec<f64> {
        let (m, n) = (self.m, self.n);
        let mut r = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..j {
                r[j * n + i] = self.a[j * m + i];
            }
            r[j * n + j] = self.diag[j];
        }
        r
    }

    /// Applies `Q` to each column of the column-major `m x cols` buffer `b`.
    fn apply_q(&self, b: &mut [f64], cols: usize) {
        let m = self.m;
        let mut v = vec![0.0; m];
        for k in (0..self.n).rev() {
            if self.betas[k] == 0.0 {
                continue;
            }
            let len = m - k;
            v[..len].copy_from_slice(&self.a[k * m + k..(k + 1) * m]);
            v[0] = self.heads[k];
            for j in 0..cols {
                let col = &mut b[j * m + k..(j + 1) * m];
                let s = self.betas[k] * dot(&v[..len], col);
                if s != 0.0 {
                    axpy(-s, &v[..len], col);
                }
            }
        }
    }

    /// Explicit thin `Q` (column-major `m x n`).
    fn thin_q(&self) -> Vec<f64> {
        let (m, n) = (self.m, self.n);
        let mut q = vec![0.0; m * n];
        for j in 0..n {
            q[j * m + j] = 1.0;
        }
        self.apply_q(&mut q, n);
        q
    }
}

/// SVD of a matrix with `rows >= cols`.
fn svd_tall(a: &DenseMatrix, opts: &SvdOptions, vectors: bool) -> Result<SvdFactors> {
    svd_tall_from(a, opts, vectors, None)
}

/// Jacobi on the `R` factor of `a * start` (or of `a`); the rotations are
/// accumulated onto `start`, so `V = start * J`.
fn svd_tall_from(
    a: &DenseMatrix,
    opts: &SvdOptions,
    vectors: bool,
    start: Option<&DenseMatrix>,
) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let (qr, mut v) = match start {
        Some(v0) => (
            Householder::factor(a.matmul(v0).to_col_major(), m, n),
            v0.to_col_major(),
        ),
        None => {
            let mut eye = vec![0.0; n * n];
            for j in 0..n {
                eye[j * n + j] = 1.0;
            }
            (Householder::factor(a.to_col_major(), m, n), eye)
        }
    };
    let mut w = qr.r();

    let mut norms: Vec<f64> = (0..n).map(|j| dot(&w[j * n..(j + 1) * n], &w[j * n..(j + 1) * n])).collect();
    let mut converged = false;
    let mut worst = 0.0_f64;
    for _sweep in 0..opts.max_sweeps {
        let mut rotated = false;
        worst = 0.0;
        // Columns at rounding level relative to the largest one are treated
        // as zero; rotating them only reshuffles noise and never converges.
        let largest = norms.iter().copied().fold(0.0, f64::max);
        let floor = largest * (n as f64 * f64::EPSILON).powi(2);
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let (wp, wq) = pair_mut(&mut w, n, p, q);
                let gamma = dot(wp, wq);
                let scale = (alpha * beta).sqrt();
                let off = gamma.abs() / scale;
                worst = worst.max(off);
                if off <= opts.tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
                if vectors {
                    let (vp, vq) = pair_mut(&mut v, n, p, q);
                    rotate(vp, vq, c, s);
                }
            }
        }
        // Refresh the cached norms to stop drift from the update formula.
        for j in 0..n {
            let col = &w[j * n..(j + 1) * n];
            norms[j] = dot(col, col);
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure {
            what: format!("Jacobi SVD did not converge in {} sweeps", opts.max_sweeps),
            residual: worst,
        });
    }

    let sigma: Vec<f64> = norms.iter().map(|s| s.sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let singular_values: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();

    if !vectors {
        return Ok(SvdFactors {
            u: DenseMatrix::zeros(m, 0),
            singular_values,
            v: DenseMatrix::zeros(n, 0),
        });
    }

    // Left vectors of R: normalized Jacobi columns; zero and rounding-level
    // columns get an orthonormal completion.
    let largest = norms.iter().copied().fold(0.0, f64::max);
    let floor = largest * (n as f64 * f64::EPSILON).powi(2);
    let mut ur = vec![0.0; n * n];
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma[src];
        let col = &w[src * n..(src + 1) * n];
        if s > 0.0 && norms[src] > floor {
            for i in 0..n {
                ur[dst * n + i] = col[i] / s;
            }
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut ur, n, &missing);

    // U = Q [U_R; 0].
    let mut u = vec![0.0; m * n];
    for j in 0..n {
        u[j * m..j * m + n].copy_from_slice(&ur[j * n..(j + 1) * n]);
    }
    qr.apply_q(&mut u, n);

    let mut vs = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        vs[dst * n..(dst + 1) * n].copy_from_slice(&v[src * n..(src + 1) * n]);
    }

    Ok(SvdFactors {
        u: DenseMatrix::from_col_major(m, n, &u),
        singular_values,
        v: DenseMatrix::from_col_major(n, n, &vs),
    })
}

#[inline]
fn pair_mut(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (lo, hi) = buf.split_at_mut(q * len);
    (&mut lo[p * len..(p + 1) * len], &mut hi[..len])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the listed (zero) columns of a column-major `n x n` buffer with unit
/// vectors orthogonal to every other column, by Gram-Schmidt on the standard
/// basis.
fn complete_orthonormal(buf: &mut [f64], n: usize, missing: &[usize]) {
    let mut filled: Vec<bool> = vec![true; n];
    for &j in missing {
        filled[j] = false;
    }
    let mut candidate = 0;
    for &j in missing {
        while candidate < n {
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of classical Gram-Schmidt.
            for _ in 0..2 {
                for k in 0..n {
                    if filled[k] {
                        let col = &buf[k * n..(k + 1) * n];
                        let proj = dot(col, &e);
                        axpy(-proj, col, &mut e);
                    }
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-8 {
                for (dst, x) in buf[j * n..(j + 1) * n].iter_mut().zip(&e) {
                    *dst = x / nrm;
                }
                filled[j] = true;
                break;
            }
        }
    }
}

/// Orthonormal basis `Q` (`m x n`) for the column span of `a`, via Householder
/// QR with the sign of each column fixed so that `diag(R) > 0`.
pub fn orthonormalize(a: &DenseMatrix) -> Result<DenseMatrix> {
    orthonormalize_with(a, RANK_DEFICIENCY_TOL)
}

pub fn orthonormalize_with(a: &DenseMatrix, rank_tol: f64) -> Result<DenseMatrix> {
    check_input(a)?;
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::invalid(format!(
            "orthonormalize needs rows >= cols, got {m}x{n}"
        )));
    }
    let threshold = rank_tol * a.frobenius_norm();
    let qr = Householder::factor(a.to_col_major(), m, n);
    for (k, &d) in qr.diag.iter().enumerate() {
        if d.abs() <= threshold {
            return Err(Error::RankDeficient {
                column: k,
                pivot: d.abs(),
                threshold,
            });
        }
    }
    let mut q = qr.thin_q();
    for (k, &d) in qr.diag.iter().enumerate() {
        if d < 0.0 {
            for x in &mut q[k * m..(k + 1) * m] {
                *x = -*x;
            }
        }
    }
    Ok(DenseMatrix::from_col_major(m, n, &q))
}

/// Largest singular value of `a`.
///
/// Runs Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization
/// from a fixed pseudo-random start vector and reads the top singular value of
/// the projected bidiagonal by Sturm bisection. The iteration stops once the
/// estimate has stalled at working precision or the Krylov space is exhausted.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    check_input(a)?;
    let (m, n) = a.shape();
    let kmax = m.min(n);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5EED_1A9C_05u64);
    let mut random_unit = |basis: &[Vec<f64>]| -> Option<Vec<f64>> {
        for _ in 0..8 {
            let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            for _ in 0..2 {
                for b in basis {
                    let p = dot(b, &x);
                    axpy(-p, b, &mut x);
                }
            }
            let nrm = norm2(&x);
            if nrm > 1e-8 {
                x.iter_mut().for_each(|v| *v /= nrm);
                return Some(x);
            }
        }
        None
    };

    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    let mut alphas: Vec<f64> = Vec::with_capacity(kmax);
    let mut betas: Vec<f64> = Vec::with_capacity(kmax);

    let v0 = random_unit(&vs).expect("nonempty start vector");
    vs.push(v0);
    let mut estimate = 0.0_f64;
    let mut stalled = 0;
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let breakdown = 1e-14 * scale;

    loop {
        let k = vs.len() - 1;
        // u_k = A v_k - beta_{k-1} u_{k-1}
        let mut u = a.matvec(&vs[k]);
        for _ in 0..2 {
            for b in &us {
                let p = dot(b, &u);
                axpy(-p, b, &mut u);
            }
        }
        let alpha = norm2(&u);
        if alpha > breakdown {
            u.iter_mut().for_each(|x| *x /= alpha);
            alphas.push(alpha);
            us.push(u);
        } else {
            alphas.push(0.0);
            us.push(vec![0.0; m]);
        }

        let next = top_bidiagonal_singular_value(&alphas, &betas);
        if next - estimate <= 1e-15 * next {
            stalled += 1;
        } else {
            stalled = 0;
        }
        estimate = estimate.max(next);
        if vs.len() >= kmax || stalled >= 3 {
            break;
        }

        // v_{k+1} = A^T u_k - alpha_k v_k
        let mut v = if alpha > breakdown {
            let mut v = a.matvec_transpose(&us[k]);
            for _ in 0..2 {
                for b in &vs {
                    let p = dot(b, &v);
                    axpy(-p, b, &mut v);
                }
            }
            v
        } else {
            vec![0.0; n]
        };
        let beta = norm2(&v);
        if beta > breakdown {
            v.iter_mut().for_each(|x| *x /= beta);
            betas.push(beta);
        } else {
            // Invariant subspace: restart in its orthogonal complement.
            match random_unit(&vs) {
                Some(fresh) => v = fresh,
                None => break,
            }
            betas.push(0.0);
        }
        vs.push(v);
    }
    Ok(estimate)
}

/// Largest singular value of the upper bidiagonal matrix with diagonal
/// `alphas` and superdiagonal `betas` (`betas.len() == alphas.len() - 1`),
/// via bisection on the tridiagonal `B^T B`.
fn top_bidiagonal_singular_value(alphas: &[f64], betas: &[f64]) -> f64 {
    let k = alphas.len();
    debug_assert!(betas.len() + 1 >= k);
    // T = B^T B: diag d_i = alpha_i^2 + beta_{i-1}^2, off e_i = alpha_i beta_i.
    let d: Vec<f64> = (0..k)
        .map(|i| alphas[i] * alphas[i] + if i > 0 { betas[i - 1] * betas[i - 1] } else { 0.0 })
        .collect();
    let e: Vec<f64> = (0..k.saturating_sub(1)).map(|i| alphas[i] * betas[i]).collect();
    let mut hi = 0.0_f64;
    for i in 0..k {
        let left = if i > 0 { e[i - 1].abs() } else { 0.0 };
        let right = if i + 1 < k { e[i].abs() } else { 0.0 };
        hi = hi.max(d[i] + left + right);
    }
    if hi == 0.0 {
        return 0.0;
    }
    // Number of eigenvalues strictly below x.
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = 1.0_f64;
        for i in 0..k {
            let off = if i > 0 { e[i - 1] * e[i - 1] } else { 0.0 };
            q = d[i] - x - if i > 0 { off / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * hi;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let mut lo = 0.0_f64;
    let mut hi = hi * (1.0 + 4.0 * f64::EPSILON);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (0.5 * (lo + hi)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn recon_error(a: &DenseMatrix, f: &SvdFactors) -> f64 {
        f.reconstruct().sub(a).frobenius_norm() / a.frobenius_norm().max(1.0)
    }

    /// Cyclic Jacobi eigenvalue iteration on a symmetric matrix; test oracle only.
    fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
        let n = a.rows();
        let mut s: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| s[i][j] * s[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if s[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (s[q][q] - s[p][p]) / (2.0 * s[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for k in 0..n {
                        let (skp, skq) = (s[k][p], s[k][q]);
                        s[k][p] = c * skp - sn * skq;
                        s[k][q] = sn * skp + c * skq;
                    }
                    for k in 0..n {
                        let (spk, sqk) = (s[p][k], s[q][k]);
                        s[p][k] = c * spk - sn * sqk;
                        s[q][k] = sn * spk + c * sqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| s[i][i]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn svd_identity() {
        let f = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.singular_values, vec![1.0, 1.0, 1.0]);
        assert!(recon_error(&DenseMatrix::identity(3), &f) < 1e-14);
        assert!(orthonormality_error(&f.u) < 1e-14);
    }

    #[test]
    fn svd_diagonal_sorted() {
        let a = DenseMatrix::from_diag(&[1.0, 3.0, 2.0]);
        let f = svd(&a).unwrap();
        assert_eq!(f.singular_values, vec![3.0, 2.0, 1.0]);
        assert!(recon_error(&a, &f) < 1e-14);
    }

    #[test]
    fn svd_matches_eigen_oracle_on_gram() {
        let a = gaussian(4, 3, 11);
        let f = svd(&a).unwrap();
        let oracle: Vec<f64> = symmetric_eigenvalues(&a.gram())
            .into_iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        for (s, o) in f.singular_values.iter().zip(&oracle) {
            assert!((s - o).abs() < 1e-8, "{s} vs {o}");
        }
        assert!(recon_error(&a, &f) < 1e-12);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.v) < 1e-12);
    }

    #[test]
    fn svd_wide_and_rank_deficient() {
        let wide = gaussian(3, 7, 5);
        let f = svd(&wide).unwrap();
        assert_eq!(f.u.shape(), (3, 3));
        assert_eq!(f.v.shape(), (7, 3));
        assert!(recon_error(&wide, &f) < 1e-12);

        let col = gaussian(6, 1, 9);
        let row = gaussian(1, 4, 10);
        let rank1 = col.matmul(&row);
        let f = svd(&rank1).unwrap();
        assert_eq!(f.rank(1e-10), 1);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.v) < 1e-12);
        assert!(recon_error(&rank1, &f) < 1e-12);

        let zero = DenseMatrix::zeros(3, 2);
        let f = svd(&zero).unwrap();
        assert_eq!(f.singular_values, vec![0.0, 0.0]);
        assert!(orthonormality_error(&f.u) < 1e-14);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = DenseMatrix::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(svd(&a), Err(Error::InvalidInput(_))));
        assert!(matches!(svd(&DenseMatrix::zeros(0, 3)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn svd_reports_non_convergence() {
        let a = gaussian(5, 5, 3);
        let opts = SvdOptions { tol: 0.0, max_sweeps: 1 };
        match svd_with(&a, &opts) {
            Err(Error::NumericalFailure { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn singular_values_only_agree() {
        let a = gaussian(9, 6, 21);
        let full = svd(&a).unwrap().singular_values;
        let only = singular_values(&a).unwrap();
        for (x, y) in full.iter().zip(&only) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormalize_single_column() {
        let a = DenseMatrix::from_vec(3, 1, vec![3.0, 0.0, 4.0]).unwrap();
        let q = orthonormalize(&a).unwrap();
        let expect = [0.6, 0.0, 0.8];
        for i in 0..3 {
            assert!((q.get(i, 0) - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn orthonormalize_gaussian_and_span() {
        let a = gaussian(6, 3, 4);
        let q = orthonormalize(&a).unwrap();
        let qtq = q.transpose().matmul(&q);
        let dev = qtq.sub(&DenseMatrix::identity(3)).max_abs();
        assert!(dev < 1e-10, "{dev}");
        // Span check: Q Q^T a reproduces a.
        let proj = q.matmul(&q.transpose().matmul(&a));
        assert!(proj.sub(&a).max_abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_idempotent_on_orthonormal() {
        let q0 = orthonormalize(&gaussian(5, 2, 8)).unwrap();
        let q1 = orthonormalize(&q0).unwrap();
        assert!(q1.sub(&q0).max_abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_rank_deficient() {
        let c = gaussian(4, 1, 1);
        let a = DenseMatrix::from_fn(4, 2, |i, _| c.get(i, 0));
        assert!(matches!(orthonormalize(&a), Err(Error::RankDeficient { column: 1, .. })));
        assert!(orthonormalize(&gaussian(2, 3, 1)).is_err());
    }

    #[test]
    fn spectral_norm_simple() {
        assert!((spectral_norm(&DenseMatrix::identity(4)).unwrap() - 1.0).abs() < 1e-12);
        let d = DenseMatrix::from_diag(&[5.0, 1.0]);
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&DenseMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let a = gaussian(5, 4, 77);
        // Power iteration on A^T A, oracle only.
        let mut x = vec![1.0; 4];
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let y = a.matvec_transpose(&a.matvec(&x));
            lambda = norm2(&y);
            x = y.iter().map(|v| v / lambda).collect();
        }
        let oracle = lambda.sqrt();
        let got = spectral_norm(&a).unwrap();
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        let top = svd(&a).unwrap().singular_values[0];
        assert!((got - top).abs() < 1e-8);
    }

    #[test]
    fn spectral_norm_tall_matches_svd() {
        for seed in 0..5 {
            let a = gaussian(60, 25, seed);
            let got = spectral_norm(&a).unwrap();
            let top = svd(&a).unwrap().singular_values[0];
            assert!((got - top).abs() <= 1e-8 * top.max(1.0), "{got} vs {top}");
        }
    }

    #[test]
    fn gram_matches_transpose_product() {
        let a = gaussian(7, 4, 2);
        let g = a.gram();
        let h = a.transpose().matmul(&a);
        assert!(g.sub(&h).max_abs() < 1e-12);
    }

    #[test]
    fn warm_start_gives_the_same_decomposition() {
        for (m, n, seed) in [(9, 6, 1u64), (6, 9, 2), (8, 8, 3)] {
            let a = gaussian(m, n, seed);
            let near = svd(&a.sub(&gaussian(m, n, seed + 50).scale_columns(&vec![1e-3; n]))).unwrap();
            let cold = svd(&a).unwrap();
            let warm = svd_warm(&a, &near).unwrap();
            assert!(recon_error(&a, &warm) < SVD_RECONSTRUCTION_TOL);
            assert!(orthonormality_error(&warm.u) < ORTHONORMALITY_TOL);
            assert!(orthonormality_error(&warm.v) < ORTHONORMALITY_TOL);
            for (x, y) in warm.singular_values.iter().zip(&cold.singular_values) {
                assert!((x - y).abs() < 1e-10 * cold.singular_values[0]);
            }
        }
    }

    #[test]
    fn rank_deficient_input_converges_from_any_start() {
        // Columns that are pure rounding noise must not keep the sweeps going.
        for seed in 0..40u64 {
            let u = gaussian(10, 1, seed);
            let v = gaussian(1, 10, seed + 100);
            let a = u.matmul(&v);
            let start = svd(&gaussian(10, 10, seed + 200)).unwrap();
            for f in [svd(&a).unwrap(), svd_warm(&a, &start).unwrap()] {
                assert!(recon_error(&a, &f) < SVD_RECONSTRUCTION_TOL, "seed {seed}");
                assert!(f.singular_values[1] < 1e-12 * f.singular_values[0]);
            }
        }
    }
}
