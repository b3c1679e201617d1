//! Scenario configuration, experiment runs, diffusion sweeps and comparison
//! of equilibria against predicted limits.

pub mod compare;
pub mod config;
pub mod output;
pub mod scenario;
pub mod sweep;

use thiserror::Error;

pub use compare::{compare, Metrics};
pub use config::{ConfigError, Scenario, ScenarioConfig, SCHEMA_VERSION};
pub use output::Bundle;
pub use scenario::{run_scenario, simulate, ScenarioOutput, ScenarioSummary};
pub use sweep::{sweep, SweepOptions, SweepRecord, SweepRegime, SweepTable};

use crate::asymptotics::AsymptoticsError;
use crate::dynamics::DynamicsError;
use crate::equilibrium::EquilibriumError;
use crate::grid::GridError;
use crate::spectral::SpectralError;

/// A failure inside one of the numerical modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComputeError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Compute {
        context: String,
        #[source]
        source: ComputeError,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Writes a bundle, mapping I/O failures to [`HarnessError::Io`].
pub fn write_bundle(bundle: &Bundle, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>, HarnessError> {
    bundle.write(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}
