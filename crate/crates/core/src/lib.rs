//! Numerical toolkit for a spatially heterogeneous SIS reaction-diffusion
//! model with nonlinear incidence `beta S^q I^p`, recruitment and
//! disease-induced mortality: time integration, equilibria, threshold
//! quantities, small-diffusion limit profiles and an experiment harness.

pub mod asymptotics;
pub mod dynamics;
pub mod equilibrium;
pub mod expr;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod spectral;

pub use asymptotics::{AsymptoticsError, Direction, LimitProfile, MonotoneSequence, Regime};
pub use dynamics::{CoefficientSet, DynamicsError, RunConfig, SimState};
pub use equilibrium::{EeOptions, EquilibriumError, EquilibriumResult};
pub use expr::{parse, EvalError, Expr, ParseError};
pub use grid::{build_domain, DiscreteDomain, DomainSpec, GridError, ScalarField};
pub use harness::{ConfigError, HarnessError, Scenario, ScenarioConfig};
pub use linalg::LinalgError;
pub use spectral::{SpectralError, SpectralResult};

/// Any error raised by the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}
