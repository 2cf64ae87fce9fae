//! Batch front-end for covariate-to-parameter map inference experiments:
//! configuration, named experiments and deterministic artifacts.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiments;
pub mod verify;

use std::path::PathBuf;

use artifacts::{ArtifactWriter, Provenance};
use config::ExperimentConfig;
use error::CliError;
use experiments::Experiment;

/// Environment variable read for the default worker thread count.
pub const THREADS_ENV: &str = "CPM_INFER_THREADS";

/// Parsed command line, independent of the argument parser.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub experiment: String,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Loads the config, applies overrides and runs the experiment. Returns the
/// output directory and the experiment summary.
pub fn execute(inv: &Invocation) -> Result<(PathBuf, serde_json::Value), CliError> {
    let experiment: Experiment = inv.experiment.parse()?;
    let mut config = ExperimentConfig::load(&inv.config)?;
    if let Some(seed) = inv.seed {
        config.seed = seed;
    }
    if let Some(out) = &inv.out {
        config.out_dir = out.clone();
    }
    let canonical = config.to_toml()?;
    let writer = ArtifactWriter::new(
        &config.out_dir,
        Provenance::new(experiment.name(), &canonical, config.seed),
    )?;
    let summary = experiments::run(experiment, &config, &writer)?;
    Ok((config.out_dir.clone(), summary))
}
