use crate::error::{Error, Result};

/// Zeroes entries with `|v_i| < t`; entries at exactly `t` survive.
pub fn hard_threshold(v: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("threshold must be >= 0, got {t}")));
    }
    Ok(v.iter()
        .map(|&x| if x.abs() >= t { x } else { 0.0 })
        .collect())
}

pub(crate) fn hard_threshold_in_place(v: &mut [f64], t: f64) {
    for x in v.iter_mut() {
        if x.abs() < t {
            *x = 0.0;
        }
    }
}

/// `c` times the mean magnitude of `beta_k` over all of its entries.
pub fn adaptive_threshold(beta_k: &[f64], c: f64) -> f64 {
    if beta_k.is_empty() {
        return 0.0;
    }
    c * beta_k.iter().map(|v| v.abs()).sum::<f64>() / beta_k.len() as f64
}

/// Keeps the `s` entries of largest magnitude (ties go to the lower index)
/// and zeroes the rest.
pub fn keep_largest(v: &[f64], s: usize) -> Vec<f64> {
    if s >= v.len() {
        return v.to_vec();
    }
    let mut out = vec![0.0; v.len()];
    if s == 0 {
        return out;
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    let order = |&a: &usize, &b: &usize| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b));
    idx.select_nth_unstable_by(s - 1, order);
    for &i in &idx[..s] {
        out[i] = v[i];
    }
    out
}
