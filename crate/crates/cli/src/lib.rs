//! Command-line front end: config parsing, experiment runs and chain inspection.

pub mod config;
pub mod inspect;
pub mod runs;

use std::path::{Path, PathBuf};

pub use config::{parse_config, validate_config, Experiment, RunConfig};
pub use runs::{run, RunOutput};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<bayeshead_core::Error> for CliError {
    fn from(e: bayeshead_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Default output directory when neither `--out` nor the config names one.
pub fn default_out_dir(config: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{}", config.experiment.name(), config.seed))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Validation(vec![format!("out: {} exists and is not a directory", dir.display())]));
        }
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Validation(vec![format!(
                "out: {} is not empty; pass --force to overwrite",
                dir.display()
            )]));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

/// Validates the config, prepares the output directory and runs.
pub fn run_from_file(path: &Path, out: Option<&Path>, force: bool) -> Result<RunOutput, CliError> {
    let config = validate_config(path).map_err(CliError::Validation)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| default_out_dir(&config));
    prepare_out_dir(&dir, force)?;
    Ok(run(&config, &dir)?)
}
