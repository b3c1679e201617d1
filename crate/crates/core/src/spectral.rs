//! Basic reproduction number and the principal eigenvalue of the linearized
//! infection operator.

use thiserror::Error;

use crate::dynamics::CoefficientSet;
use crate::equilibrium::{solve_dfe, EquilibriumError};
use crate::grid::{GridError, ScalarField, SparseOperator};
use crate::linalg::{generalized_principal_eigenpair_with, EigenOptions, LinalgError, ShiftedOperator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("R0 is only defined for p = 1 (got p = {0})")]
    R0RequiresLinearIncidence(f64),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpectralKind {
    R0,
    Lambda0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub kind: SpectralKind,
    pub eigenvalue: f64,
    /// Sup-norm one, non-negative.
    pub eigenfield: ScalarField,
    /// Relative residual of the generalized problem actually solved.
    pub residual: f64,
    pub iterations: usize,
    pub d_s: f64,
    pub d_i: f64,
    pub q: f64,
}

pub const DEFAULT_TOL: f64 = 1e-10;

/// `R0 = sup int beta S~^q phi^2 / int (d_I |grad phi|^2 + (gamma + eta) phi^2)`,
/// computed as the largest generalized eigenvalue of the discrete pencil.
pub fn compute_r0(c: &CoefficientSet) -> Result<SpectralResult, SpectralError> {
    compute_r0_with(c, DEFAULT_TOL)
}

pub fn compute_r0_with(c: &CoefficientSet, tol: f64) -> Result<SpectralResult, SpectralError> {
    if c.p() != 1.0 {
        return Err(SpectralError::R0RequiresLinearIncidence(c.p()));
    }
    let dfe = solve_dfe(c)?;
    let dom = c.domain();
    let m = dom.cell_measures();
    let (beta, g, e) = (c.beta().values(), c.gamma().values(), c.eta().values());
    let infection: Vec<f64> = (0..dom.len())
        .map(|k| m[k] * beta[k] * dfe.values()[k].powf(c.q()))
        .collect();
    let removal: Vec<f64> = (0..dom.len()).map(|k| m[k] * (g[k] + e[k])).collect();
    let a = SparseOperator::diagonal_matrix(&infection);
    let b = ShiftedOperator::new(dom.stiffness(), c.d_i(), removal);
    let pair = generalized_principal_eigenpair_with(&a, &b, tol, &EigenOptions::default())?;
    Ok(SpectralResult {
        kind: SpectralKind::R0,
        eigenvalue: pair.value,
        eigenfield: ScalarField::new(dom, pair.vector)?,
        residual: pair.residual,
        iterations: pair.iterations,
        d_s: c.d_s(),
        d_i: c.d_i(),
        q: c.q(),
    })
}

/// Potential `beta Lambda^q - gamma - eta` of the linearized infection operator.
pub fn lambda0_potential(c: &CoefficientSet) -> ScalarField {
    let (beta, g, e, l) = (
        c.beta().values(),
        c.gamma().values(),
        c.eta().values(),
        c.lambda().values(),
    );
    let values = (0..beta.len())
        .map(|k| beta[k] * l[k].powf(c.q()) - g[k] - e[k])
        .collect();
    ScalarField::new(c.domain(), values).expect("finite potential")
}

/// Smallest `lambda` with `d_I Delta phi + V phi + lambda phi = 0`, no-flux
/// boundary, `V = beta Lambda^q - gamma - eta`.
///
/// With `s = max V + 1` the operator `d_I (-L) - V + s` is positive definite,
/// and its smallest eigenvalue is `1 / mu` for the principal `mu` of
/// `M phi = mu (d_I K + M (s - V)) phi`.
pub fn compute_lambda0(c: &CoefficientSet) -> Result<SpectralResult, SpectralError> {
    compute_lambda0_with(c, DEFAULT_TOL)
}

pub fn compute_lambda0_with(c: &CoefficientSet, tol: f64) -> Result<SpectralResult, SpectralError> {
    let dom = c.domain();
    let m = dom.cell_measures();
    let v = lambda0_potential(c);
    let shift = v.max() + 1.0;
    let a = SparseOperator::diagonal_matrix(m);
    let diag: Vec<f64> = m.iter().zip(v.values()).map(|(w, vk)| w * (shift - vk)).collect();
    let b = ShiftedOperator::new(dom.stiffness(), c.d_i(), diag);
    let pair = generalized_principal_eigenpair_with(&a, &b, tol, &EigenOptions::default())?;
    Ok(SpectralResult {
        kind: SpectralKind::Lambda0,
        eigenvalue: 1.0 / pair.value - shift,
        eigenfield: ScalarField::new(dom, pair.vector)?,
        residual: pair.residual,
        iterations: pair.iterations,
        d_s: c.d_s(),
        d_i: c.d_i(),
        q: c.q(),
    })
}
