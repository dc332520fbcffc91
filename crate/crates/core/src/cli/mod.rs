//! Command-line front end.

pub mod config;
pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::datagen::{export_dataset, gen_dataset};
use crate::error::{Error, Result};
use crate::experiment::{min_mean_rmse, run_comparison, time_training, Method, Pipeline, SweepRecord, SweepSpec};
pub use config::{parse_config, parse_config_str, RunConfig};
use output::{emit_csv, emit_metadata, plot_data, render_runtime_table, write_file, Metadata, RuntimeRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "sparse-recovery", version, about = "Sparse recovery benchmarks with missing data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration and write a CSV plus a metadata file.
    Run(RunArgs),
    /// Run one configuration and write CSV, metadata and per-method plot data
    /// into a directory.
    Sweep(RunArgs),
    /// Measure IMAT and LASSO fit times over the standard size rows.
    Timings(TimingArgs),
    /// Run the randomized invariant suites.
    Verify(VerifyArgs),
    /// Write one generated dataset as JSON.
    Generate(GenerateArgs),
    /// Rerun the configuration stored in a metadata file.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Trials per grid point (overrides the config).
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Output path (overrides the config).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "raw|precompleted")]
    pipeline: Option<Pipeline>,
}

#[derive(Args, Debug)]
struct TimingArgs {
    /// Time this configuration instead of the standard rows (may repeat).
    #[arg(long, value_name = "PATH")]
    config: Vec<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Also write the table to this file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "raw|precompleted")]
    pipeline: Option<Pipeline>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Random cases per suite.
    #[arg(long, value_name = "N", default_value_t = 100)]
    trials: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Metadata file written by `run` or `sweep`.
    metadata: PathBuf,
    /// Output path (defaults to the one recorded in the metadata).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericalFailure { .. } | Error::Divergence { .. } | Error::RankDeficient { .. } => {
            EXIT_NUMERICAL
        }
        _ => EXIT_USAGE,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let out = PathBuf::from(&cfg.output);
            let (records, meta) = execute("run", &cfg)?;
            emit_csv(&records, &out, cfg.record_wall_time)?;
            emit_metadata(&meta, &metadata_path(&out))?;
            print_minima(&records);
            Ok(())
        }
        Command::Sweep(args) => {
            let mut cfg = load_config(&args)?;
            if args.out.is_none() && cfg.output == config::DEFAULT_OUTPUT {
                cfg.output = cfg.name.clone();
            }
            let dir = PathBuf::from(&cfg.output);
            let (records, meta) = execute("sweep", &cfg)?;
            emit_csv(&records, &dir.join("results.csv"), cfg.record_wall_time)?;
            emit_metadata(&meta, &dir.join("metadata.toml"))?;
            for (method, _) in cfg.sweeps() {
                write_file(&dir.join(format!("{method}.dat")), &plot_data(&records, method))?;
            }
            print_minima(&records);
            Ok(())
        }
        Command::Timings(args) => {
            let mut configs = if args.config.is_empty() {
                timing_configs()
            } else {
                args.config.iter().map(|p| parse_config(p)).collect::<Result<Vec<_>>>()?
            };
            for cfg in configs.iter_mut() {
                if let Some(s) = args.seed {
                    cfg.base_seed = s;
                }
                if let Some(t) = args.trials {
                    cfg.trials = t;
                }
                if let Some(p) = args.pipeline {
                    cfg.pipeline = p;
                }
                cfg.check().map_err(|message| Error::Config {
                    path: "command line".into(),
                    message,
                })?;
            }
            let table = emit_runtime_table(&configs)?;
            print!("{table}");
            if let Some(out) = args.out {
                write_file(&out, &table)?;
            }
            Ok(())
        }
        Command::Verify(args) => {
            let reports = verify::run_suites(args.seed, args.trials);
            let mut failed = false;
            for r in &reports {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!("{status} {} ({} cases, {} failures)", r.name, r.cases, r.failures);
                if let Some(f) = &r.first_failure {
                    println!("     first failure: {f}");
                    failed = true;
                }
            }
            if failed {
                return Err(Error::NumericalFailure {
                    what: "invariant suite failed".into(),
                    residual: f64::NAN,
                });
            }
            Ok(())
        }
        Command::Generate(args) => {
            let run = RunArgs {
                config: args.config,
                seed: args.seed,
                trials: None,
                out: None,
                pipeline: None,
            };
            let cfg = load_config(&run)?;
            let ds = gen_dataset(&cfg.dataset.params(), cfg.base_seed)?;
            export_dataset(&ds, &args.out)?;
            Ok(())
        }
        Command::Replay(args) => {
            let text = std::fs::read_to_string(&args.metadata).map_err(|e| Error::Config {
                path: args.metadata.display().to_string(),
                message: format!("cannot read file: {e}"),
            })?;
            let meta = Metadata::parse(&text, &args.metadata.display().to_string())?;
            let mut cfg = meta.config;
            let sweep = meta.metadata.command == "sweep";
            if let Some(out) = args.out {
                cfg.output = out.display().to_string();
            }
            let (records, new_meta) = execute(&meta.metadata.command, &cfg)?;
            let out = PathBuf::from(&cfg.output);
            if sweep {
                emit_csv(&records, &out.join("results.csv"), cfg.record_wall_time)?;
                emit_metadata(&new_meta, &out.join("metadata.toml"))?;
                for (method, _) in cfg.sweeps() {
                    write_file(&out.join(format!("{method}.dat")), &plot_data(&records, method))?;
                }
            } else {
                emit_csv(&records, &out, cfg.record_wall_time)?;
                emit_metadata(&new_meta, &metadata_path(&out))?;
            }
            print_minima(&records);
            Ok(())
        }
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(o) = &args.out {
        cfg.output = o.display().to_string();
    }
    if let Some(p) = args.pipeline {
        cfg.pipeline = p;
    }
    cfg.check().map_err(|message| Error::Config {
        path: "command line".into(),
        message,
    })?;
    Ok(cfg)
}

/// `results.csv` -> `results.meta.toml`.
pub fn metadata_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

/// Runs the configured comparison and assembles its metadata.
pub fn execute(command: &str, cfg: &RunConfig) -> Result<(Vec<SweepRecord>, Metadata)> {
    let start = Instant::now();
    let records = run_comparison(&cfg.setup(), &cfg.sweeps(), cfg.trials, cfg.base_seed)?;
    for (method, _) in cfg.sweeps() {
        let dropped: usize = records.iter().filter(|r| r.method == method).map(|r| r.diverged).sum();
        eprintln!(
            "{}: {method} sweep done ({} trials, {dropped} diverged fits excluded)",
            cfg.name, cfg.trials
        );
    }
    let meta = Metadata::new(command, cfg, &records, start.elapsed().as_secs_f64());
    Ok((records, meta))
}

fn print_minima(records: &[SweepRecord]) {
    for method in Method::ALL {
        if let Some(best) = min_mean_rmse(records, method) {
            let at = records
                .iter()
                .find(|r| r.method == method && r.mean_rmse == best)
                .map_or(f64::NAN, |r| r.parameter);
            println!("{method}: minimum mean RMSE {} at {}", output::format_sig6(best), output::format_sig6(at));
        }
    }
}

/// Standard size rows: (m, n).
pub const TIMING_SIZES: [(usize, usize); 6] =
    [(100, 100), (200, 100), (500, 100), (1000, 100), (2000, 100), (1000, 500)];

/// Trials per size row in the default timing run.
pub const TIMING_TRIALS: usize = 5;

/// IMAT and LASSO on each standard size with grids of seven points each.
pub fn timing_configs() -> Vec<RunConfig> {
    TIMING_SIZES
        .iter()
        .map(|&(m, n)| {
            let mut cfg = RunConfig {
                name: format!("timing-m{m}-n{n}"),
                methods: vec![Method::Imat, Method::Lasso],
                trials: TIMING_TRIALS,
                ..RunConfig::default()
            };
            cfg.dataset.m = m;
            cfg.dataset.n = n;
            cfg.dataset.rank = 50.min(m.min(n));
            cfg.grids.imat = (1..=7).map(f64::from).collect();
            cfg
        })
        .collect()
}

/// Per-trial IMAT and LASSO fit time (summed over each grid) for every config.
pub fn measure_runtimes(configs: &[RunConfig]) -> Result<Vec<RuntimeRow>> {
    if configs.is_empty() {
        return Err(Error::invalid("no timing configurations"));
    }
    configs
        .iter()
        .map(|cfg| {
            let time = |method: Method| -> Result<f64> {
                let spec = SweepSpec {
                    method,
                    grid: cfg.grids.for_method(method).to_vec(),
                    trials: cfg.trials,
                    setup: cfg.setup(),
                };
                Ok(time_training(&spec, cfg.base_seed)? / cfg.trials as f64)
            };
            Ok(RuntimeRow {
                m: cfg.dataset.m,
                n: cfg.dataset.n,
                imat_seconds: time(Method::Imat)?,
                lasso_seconds: time(Method::Lasso)?,
            })
        })
        .collect()
}

pub fn emit_runtime_table(configs: &[RunConfig]) -> Result<String> {
    let rows = measure_runtimes(configs)?;
    Ok(render_runtime_table(&rows, &output::machine_descriptor()))
}
