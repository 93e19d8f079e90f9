//! Experiment runners. Each returns result tables and acceptance checks.

pub mod layered;
pub mod poscm;

use std::time::Instant;

use crate::config::{ConfigError, Experiment, ProtocolConfig};
use crate::record::{RunRecord, VERSION};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ::poscm::PoscmError),
}

impl RunError {
    pub fn invalid(msg: String) -> Self {
        RunError::Config(ConfigError::Invalid(msg))
    }
}

/// Runs the configured experiment. Tables depend only on the config.
pub fn run(cfg: &ProtocolConfig) -> Result<RunRecord, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let (tables, checks) = match cfg.experiment {
        Experiment::Exp1Twin => layered::run_exp1(cfg)?,
        Experiment::Exp2Confound => layered::run_exp2(cfg)?,
        Experiment::Exp3Kernels => layered::run_exp3(cfg)?,
        Experiment::Probe => poscm::run_probe(cfg)?,
        Experiment::IdentifyMessages => poscm::run_identify_messages(cfg)?,
        Experiment::Equiv => poscm::run_equiv(cfg)?,
        Experiment::Iisc => poscm::run_iisc(cfg)?,
    };
    Ok(RunRecord {
        experiment: cfg.experiment.name().into(),
        config_hash: cfg.hash(),
        version: VERSION.into(),
        seeds: cfg.seeds.clone(),
        tables,
        checks,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
