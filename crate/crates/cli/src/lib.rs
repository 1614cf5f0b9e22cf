//! Batch front end of `linlab-core`: TOML configuration, experiment runners and
//! CSV/JSON result bundles.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;

pub use config::{validate_config, ConfigError, Experiment, ExperimentConfig, RawConfig};
pub use output::{write_bundle, OutputError};
pub use run::{run, ResultBundle, RunError, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numeric(#[from] RunError),
    #[error("cannot write results: {0}")]
    Output(#[from] OutputError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Output(_) => EXIT_CONFIG,
            Self::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Reads, overrides and validates a configuration.
pub fn load_config(path: Option<&std::path::Path>, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = match path {
        Some(p) => RawConfig::from_path(p)?,
        None => RawConfig::default(),
    };
    if let (Some(a), Some(b)) = (raw.experiment, overrides.experiment) {
        if a != b {
            return Err(ConfigError::Invalid {
                field: "experiment",
                value: a.id().into(),
                reason: "conflicts with the subcommand",
            });
        }
    }
    raw.experiment = overrides.experiment.or(raw.experiment);
    raw.seed = overrides.seed.or(raw.seed);
    raw.out = overrides.out.clone().or(raw.out);
    validate_config(raw)
}

/// Runs an experiment and writes its bundle when an output directory is set.
pub fn execute(cfg: &ExperimentConfig) -> Result<(ResultBundle, Vec<PathBuf>), CliError> {
    let bundle = run(cfg)?;
    let written = match &cfg.out {
        Some(dir) => write_bundle(&bundle, dir)?,
        None => Vec::new(),
    };
    Ok((bundle, written))
}
