//! Result files: CSV, plot data, runtime table and run metadata.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::datagen::RNG_NAME;
use crate::error::{Error, Result};
use crate::experiment::{Method, SweepRecord, HOLDOUT_FRACTION, TRAIN_RATIO};

pub const CSV_HEADER: &str = "method,parameter,mean_rmse,std_rmse,wall_time_seconds,trials";

/// Formats `x` with 6 significant digits in the style of C's `%g`.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // Let the exponential formatter do the rounding, then pick the layout.
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn sorted(records: &[SweepRecord]) -> Vec<&SweepRecord> {
    let mut rows: Vec<&SweepRecord> = records.iter().collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.parameter.total_cmp(&b.parameter)));
    rows
}

/// CSV text for `records`. The wall-time column is left empty unless
/// `with_time` is set.
pub fn csv_string(records: &[SweepRecord], with_time: bool) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in sorted(records) {
        let time = if with_time {
            format_sig6(r.wall_time_seconds)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method,
            format_sig6(r.parameter),
            format_sig6(r.mean_rmse),
            format_sig6(r.std_rmse()),
            time,
            r.trial_rmses.len()
        );
    }
    out
}

pub fn emit_csv(records: &[SweepRecord], path: &Path, with_time: bool) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    write_file(path, &csv_string(records, with_time))
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub method: Method,
    pub parameter: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub wall_time_seconds: Option<f64>,
    pub trials: usize,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::invalid("CSV header does not match"));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::invalid(format!("bad number {s:?} in CSV")))
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::invalid(format!("CSV row has {} fields: {line}", f.len())));
            }
            Ok(CsvRow {
                method: f[0].parse()?,
                parameter: num(f[1])?,
                mean_rmse: num(f[2])?,
                std_rmse: num(f[3])?,
                wall_time_seconds: if f[4].is_empty() { None } else { Some(num(f[4])?) },
                trials: f[5]
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad trial count {:?}", f[5])))?,
            })
        })
        .collect()
}

/// Whitespace-separated `parameter mean_rmse std_rmse` columns for one method.
pub fn plot_data(records: &[SweepRecord], method: Method) -> String {
    let mut out = format!("# {method}: parameter mean_rmse std_rmse\n");
    for r in sorted(records).into_iter().filter(|r| r.method == method) {
        let _ = writeln!(
            out,
            "{} {} {}",
            format_sig6(r.parameter),
            format_sig6(r.mean_rmse),
            format_sig6(r.std_rmse())
        );
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Architecture, OS, logical CPU count and CPU model when available.
pub fn machine_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("model name"))
            .and_then(|l| l.split_once(':'))
            .map(|(_, v)| v.trim().to_string())
    });
    let mut d = format!(
        "{}-{}, {} logical CPU{}",
        std::env::consts::ARCH,
        std::env::consts::OS,
        cpus,
        if cpus == 1 { "" } else { "s" }
    );
    if let Some(m) = model {
        d.push_str(", ");
        d.push_str(&m);
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeRow {
    pub m: usize,
    pub n: usize,
    /// Fit time per trial summed over the IMAT grid.
    pub imat_seconds: f64,
    /// Fit time per trial summed over the LASSO grid.
    pub lasso_seconds: f64,
}

pub fn render_runtime_table(rows: &[RuntimeRow], machine: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# machine: {machine}");
    let _ = writeln!(out, "{:<16} {:>12} {:>12}", "size", "IMAT (s)", "LASSO (s)");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>12} {:>12}",
            format!("m={},n={}", r.m, r.n),
            format!("{:.4}", r.imat_seconds),
            format!("{:.4}", r.lasso_seconds)
        );
    }
    out
}

/// Solver and protocol settings in effect for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedDefaults {
    pub imat_step: String,
    pub imat_max_iters: usize,
    pub imat_rel_tol: f64,
    pub iht_sparsity: String,
    pub iht_max_iters: usize,
    pub iht_rel_tol: f64,
    pub lasso_max_sweeps: usize,
    pub lasso_kkt_tol: f64,
    pub completion_max_iters: usize,
    pub completion_rel_tol: f64,
    pub completion_holdout_fraction: f64,
    pub train_ratio: f64,
    pub trial_seed_rule: String,
    pub sub_seed_rule: String,
}

impl ResolvedDefaults {
    pub fn for_config(config: &RunConfig) -> Self {
        let s = &config.solvers;
        Self {
            imat_step: "1 / sigma_max(train_x)^2".to_string(),
            imat_max_iters: s.imat_max_iters,
            imat_rel_tol: s.imat_rel_tol,
            iht_sparsity: "dataset.sparsity".to_string(),
            iht_max_iters: s.iht_max_iters,
            iht_rel_tol: s.iht_rel_tol,
            lasso_max_sweeps: s.lasso_max_sweeps,
            lasso_kkt_tol: s.lasso_kkt_tol,
            completion_max_iters: config.completion.max_iters,
            completion_rel_tol: config.completion.rel_tol,
            completion_holdout_fraction: HOLDOUT_FRACTION,
            train_ratio: TRAIN_RATIO,
            trial_seed_rule: "base_seed + t * 0x9E3779B97F4A7C15 (wrapping)".to_string(),
            sub_seed_rule: "U=s, V=s+1, sigma=s+2, beta=s+3, noise=s+4, mask=s+5, split=s+6, holdout=s+7"
                .to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitTime {
    pub method: Method,
    pub parameter: f64,
    pub seconds: f64,
    pub diverged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    pub toolkit: String,
    pub version: String,
    pub command: String,
    pub rng: String,
    pub base_seed: u64,
    pub trials: usize,
    pub machine: String,
    pub timestamp_unix: u64,
    pub total_wall_time_seconds: f64,
    pub diverged_trials: usize,
    pub defaults: ResolvedDefaults,
    #[serde(default)]
    pub fit_times: Vec<FitTime>,
}

/// Contents of a metadata file: run facts plus the fully resolved config,
/// which is enough to replay the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub metadata: MetaSection,
    pub config: RunConfig,
}

impl Metadata {
    pub fn new(command: &str, config: &RunConfig, records: &[SweepRecord], total_seconds: f64) -> Self {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            metadata: MetaSection {
                toolkit: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                rng: RNG_NAME.to_string(),
                base_seed: config.base_seed,
                trials: config.trials,
                machine: machine_descriptor(),
                timestamp_unix,
                total_wall_time_seconds: total_seconds,
                diverged_trials: records.iter().map(|r| r.diverged).sum(),
                defaults: ResolvedDefaults::for_config(config),
                fit_times: sorted(records)
                    .into_iter()
                    .map(|r| FitTime {
                        method: r.method,
                        parameter: r.parameter,
                        seconds: r.wall_time_seconds,
                        diverged: r.diverged,
                    })
                    .collect(),
            },
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metadata is always representable")
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let meta: Metadata = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        meta.config.check().map_err(|message| Error::Config {
            path: origin.to_string(),
            message: format!("config.{message}"),
        })?;
        Ok(meta)
    }
}

pub fn emit_metadata(meta: &Metadata, path: &Path) -> Result<()> {
    write_file(path, &meta.to_toml())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: Method, parameter: f64, rmses: Vec<f64>) -> SweepRecord {
        let mean = rmses.iter().sum::<f64>() / rmses.len() as f64;
        SweepRecord {
            method,
            parameter,
            mean_rmse: mean,
            trial_rmses: rmses,
            wall_time_seconds: 0.125,
            diverged: 0,
        }
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(0.0001), "0.0001");
        assert_eq!(format_sig6(100.0), "100");
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(0.00001234567), "1.23457e-05");
        assert_eq!(format_sig6(-2.5), "-2.5");
        assert_eq!(format_sig6(9.999996), "10");
        assert_eq!(format_sig6(f64::NAN), "nan");
    }

    #[test]
    fn sig6_keeps_six_digits() {
        for &x in &[0.43181234, 1.13809999, 2.7147e-7, 98765.4321, 3.0e12] {
            let back: f64 = format_sig6(x).parse().unwrap();
            assert!(((back - x) / x).abs() <= 5e-6, "{x} -> {back}");
        }
    }

    #[test]
    fn one_record_two_lines() {
        let text = csv_string(&[record(Method::Lasso, 0.01, vec![0.5])], false);
        assert_eq!(text, format!("{CSV_HEADER}\nlasso,0.01,0.5,0,,1\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn rows_sorted_and_round_trip() {
        let recs = vec![
            record(Method::Lasso, 1.0, vec![0.3, 0.5]),
            record(Method::Imat, 2.0, vec![0.2, 0.21]),
            record(Method::Lasso, 0.001, vec![0.4, 0.41]),
            record(Method::Imat, 1.0, vec![0.25, 0.26]),
        ];
        let text = csv_string(&recs, true);
        let rows = parse_csv(&text).unwrap();
        let order: Vec<(Method, f64)> = rows.iter().map(|r| (r.method, r.parameter)).collect();
        assert_eq!(
            order,
            vec![(Method::Imat, 1.0), (Method::Imat, 2.0), (Method::Lasso, 0.001), (Method::Lasso, 1.0)]
        );
        for row in &rows {
            let src = recs
                .iter()
                .find(|r| r.method == row.method && r.parameter == row.parameter)
                .unwrap();
            assert!(((row.mean_rmse - src.mean_rmse) / src.mean_rmse).abs() <= 5e-6);
            assert!(((row.std_rmse - src.std_rmse()) / src.std_rmse()).abs() <= 5e-6);
            assert_eq!(row.wall_time_seconds, Some(0.125));
            assert_eq!(row.trials, 2);
        }
    }

    #[test]
    fn runtime_table_layout() {
        let rows = vec![RuntimeRow {
            m: 1000,
            n: 500,
            imat_seconds: 0.05,
            lasso_seconds: 0.12,
        }];
        let t = render_runtime_table(&rows, "test machine");
        assert!(t.starts_with("# machine: test machine\n"));
        assert!(t.contains("m=1000,n=500"));
    }

    #[test]
    fn metadata_round_trip() {
        let cfg = RunConfig {
            base_seed: 77,
            ..RunConfig::default()
        };
        let recs = vec![record(Method::Imat, 1.0, vec![0.2])];
        let meta = Metadata::new("run", &cfg, &recs, 1.5);
        let text = meta.to_toml();
        assert!(text.contains("base_seed = 77"));
        assert!(text.contains("xoshiro256++"));
        let back = Metadata::parse(&text, "m.toml").unwrap();
        assert_eq!(back, meta);
    }
}
