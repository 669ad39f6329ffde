//! Front end that runs each experiment from a JSON config and writes CSV/JSON tables.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{ExperimentKind, RunConfig, SCHEMA_VERSION};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "QFP_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Numerical(#[from] qfp_core::Error),
}

impl CliError {
    /// 2 for bad input (config, arguments, files), 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(e) if e.is_input_error() => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub expected_value: bool,
    pub out: Option<PathBuf>,
}

/// Reads the config (defaults when `path` is `None`) and checks it targets `kind`.
pub fn load_config(
    kind: ExperimentKind,
    path: Option<&Path>,
    overrides: &Overrides,
) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::new(kind),
    };
    if cfg.experiment != kind {
        return Err(CliError::Config(format!(
            "config is for experiment '{}' but the subcommand is '{}'",
            cfg.experiment.name(),
            kind.name()
        )));
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    cfg.expected_value |= overrides.expected_value;
    if let Some(out) = &overrides.out {
        cfg.output.dir = Some(out.clone());
    }
    Ok(cfg)
}

/// Runs the experiment and returns the files written. The resolved config is
/// saved next to the results as `config.json`.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let dir = cfg.output.dir.clone().ok_or_else(|| {
        CliError::Config("no output directory: pass --out or set output.dir".into())
    })?;
    let mut out = output::OutputDir::create(&dir)?;
    match cfg.experiment {
        ExperimentKind::Beamsplitter => commands::beamsplitter(cfg, &mut out)?,
        ExperimentKind::Gate => commands::gate(cfg, &mut out)?,
        ExperimentKind::Spectrum => commands::spectrum(cfg, &mut out)?,
        ExperimentKind::Qwalk => commands::qwalk(cfg, &mut out)?,
        ExperimentKind::Tomography => commands::tomography(cfg, &mut out)?,
        ExperimentKind::Calibrate => commands::calibrate(cfg, &mut out)?,
    }
    // The output location is not part of the experiment, so re-runs into
    // different directories still produce identical files.
    let mut resolved = cfg.clone();
    resolved.output.dir = None;
    out.json("config.json", &resolved)?;
    Ok(out.written().to_vec())
}

/// Sizes the global rayon pool from `QFP_THREADS`, if set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(parse_threads(&v)?)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn parse_threads(v: &str) -> Result<usize, CliError> {
    v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "{THREADS_ENV} must be a positive integer, got '{v}'"
        ))
    })
}
