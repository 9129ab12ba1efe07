//! Experiment drivers, configuration, result files and the verification suite.

pub mod config;
pub mod experiments;
pub mod output;
pub mod plot;
pub mod verify;

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use config::{load_config, ExperimentConfig, ExperimentKind};

pub const JOBS_ENV: &str = "PERFREC_JOBS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Dynamics,
    Pareto,
    Verify,
    Plot,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Synth => "synth",
            Command::Dynamics => "dynamics",
            Command::Pareto => "pareto",
            Command::Verify => "verify",
            Command::Plot => "plot",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Options {
    pub config: Option<PathBuf>,
    /// Result file to chart (plot only).
    pub input: Option<PathBuf>,
    /// Output directory, or the SVG path for plot.
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// What a command produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub files: Vec<PathBuf>,
    /// Names of failed verification checks.
    pub failures: Vec<String>,
    /// Human-readable lines for stdout.
    pub lines: Vec<String>,
}

/// Process exit code: 0 success, 1 verification or runtime failure, 2
/// configuration error.
pub fn exit_code(result: &Result<Report>) -> i32 {
    match result {
        Ok(r) if r.failures.is_empty() => 0,
        Ok(_) => 1,
        Err(Error::Config { .. } | Error::Parse { .. } | Error::InvalidArgument { .. }) => 2,
        Err(_) => 1,
    }
}

/// Thread count: the environment variable wins over the flag.
pub fn resolve_jobs(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(JOBS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config {
                field: JOBS_ENV.into(),
                reason: format!("expected a positive integer, got {v:?}"),
            }),
        },
        Err(_) => Ok(flag),
    }
}

fn config_for(cmd: Command, opts: &Options) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(p) => load_config(p)?,
        None if cmd == Command::Verify => ExperimentConfig::defaults(ExperimentKind::Verify),
        None => {
            return Err(Error::Config {
                field: "--config".into(),
                reason: format!("{cmd} needs a config file"),
            })
        }
    };
    let allowed: &[ExperimentKind] = match cmd {
        Command::Synth => &[ExperimentKind::Overlap, ExperimentKind::Dispersion, ExperimentKind::CostTime],
        Command::Dynamics => &[ExperimentKind::Dynamics],
        Command::Pareto => &[ExperimentKind::Pareto],
        Command::Verify => &[ExperimentKind::Verify],
        Command::Plot => &[],
    };
    if !allowed.contains(&cfg.experiment) {
        return Err(Error::Config {
            field: "experiment".into(),
            reason: format!("{} cannot be run by `{cmd}`", cfg.experiment),
        });
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_config(dir: &Path, stem: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.config.json"));
    std::fs::write(&path, cfg.to_json() + "\n")?;
    Ok(path)
}

fn run_experiment(cmd: Command, opts: &Options) -> Result<Report> {
    let cfg = config_for(cmd, opts)?;
    let dir = opts.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    let stem = cfg.experiment.to_string();
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut report = Report::default();
    match cmd {
        Command::Synth => {
            let rows = experiments::run_synth(&cfg)?;
            output::write_csv(&csv_path, "synth", &rows)?;
            report.lines.push(format!("{} rows", rows.len()));
        }
        Command::Dynamics => {
            let rows = experiments::run_dynamics(&cfg)?;
            output::write_csv(&csv_path, "dynamics", &rows)?;
            report.lines.push(format!("{} rows", rows.len()));
        }
        Command::Pareto => {
            let rows = experiments::run_pareto(&cfg)?;
            output::write_csv(&csv_path, "pareto", &rows)?;
            report.lines.push(format!("{} rows", rows.len()));
        }
        Command::Verify => {
            let checks = verify::run_suite(cfg.verify_level, cfg.seed)?;
            for c in &checks {
                report.lines.push(format!(
                    "{} {} value={:e} threshold={:e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                ));
                if !c.pass {
                    report.failures.push(c.name.clone());
                }
            }
            output::write_csv(&csv_path, "verify", &checks)?;
        }
        Command::Plot => unreachable!("plot has no config"),
    }
    report.files.push(csv_path);
    report.files.push(write_config(&dir, &stem, &cfg)?);
    Ok(report)
}

fn run_plot(opts: &Options) -> Result<Report> {
    let input = opts.input.as_ref().ok_or_else(|| Error::Config {
        field: "--input".into(),
        reason: "plot needs a result file".into(),
    })?;
    let table = output::read_table(input)?;
    let svg = plot::plot_table(&table)?;
    let out = match &opts.out {
        Some(p) if p.is_dir() => p.join(input.with_extension("svg").file_name().unwrap_or_default()),
        Some(p) => p.clone(),
        None => input.with_extension("svg"),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&out, &svg)?;
    Ok(Report {
        lines: vec![format!("{} series", plot::count_series(&svg))],
        files: vec![out],
        failures: Vec::new(),
    })
}

/// Runs one command on a thread pool sized by `--jobs` or the environment.
pub fn execute(cmd: Command, opts: &Options) -> Result<Report> {
    let jobs = resolve_jobs(opts.jobs)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| match cmd {
        Command::Plot => run_plot(opts),
        _ => run_experiment(cmd, opts),
    })
}
