//! Coefficients, states and the IMEX time integrator for the parabolic system.

use std::sync::Arc;

use thiserror::Error;

use crate::grid::{DiscreteDomain, GridError, ScalarField};
use crate::linalg::{gauss_seidel_nonnegative, spd_solve_from, CgOptions, ShiftedOperator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("coefficient {name} must be positive, got {value} at node {node}")]
    NonPositiveCoefficient {
        name: &'static str,
        node: usize,
        value: f64,
    },
    #[error("parameter {name} = {value} is out of range ({expected})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("step rejected: min S = {min_s:e}, min I = {min_i:e}")]
    Rejected { min_s: f64, min_i: f64 },
    #[error("time step fell below {dt_min:e} at t = {t}")]
    DtUnderflow { t: f64, dt_min: f64 },
    #[error("step budget of {steps} exhausted at t = {t}")]
    StepBudget { steps: usize, t: f64 },
}

/// Coefficient fields and scalar parameters of the model. The risk function
/// `h = (gamma + eta) / beta` and `r = gamma / beta` are computed on demand.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    domain: Arc<DiscreteDomain>,
    beta: ScalarField,
    gamma: ScalarField,
    eta: ScalarField,
    lambda: ScalarField,
    d_s: f64,
    d_i: f64,
    p: f64,
    q: f64,
}

fn check_positive(name: &'static str, f: &ScalarField) -> Result<(), DynamicsError> {
    match f.values().iter().position(|&v| v <= 0.0) {
        Some(node) => Err(DynamicsError::NonPositiveCoefficient {
            name,
            node,
            value: f.values()[node],
        }),
        None => Ok(()),
    }
}

fn check_param(
    name: &'static str,
    value: f64,
    ok: bool,
    expected: &'static str,
) -> Result<(), DynamicsError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter {
            name,
            value,
            expected,
        })
    }
}

impl CoefficientSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        domain: Arc<DiscreteDomain>,
        beta: ScalarField,
        gamma: ScalarField,
        eta: ScalarField,
        lambda: ScalarField,
        d_s: f64,
        d_i: f64,
        p: f64,
        q: f64,
    ) -> Result<Self, DynamicsError> {
        for (name, f) in [("beta", &beta), ("gamma", &gamma), ("eta", &eta), ("Lambda", &lambda)] {
            if f.domain_id() != domain.id() {
                return Err(GridError::DomainMismatch.into());
            }
            check_positive(name, f)?;
        }
        let c = CoefficientSet {
            domain,
            beta,
            gamma,
            eta,
            lambda,
            d_s: 1.0,
            d_i: 1.0,
            p,
            q,
        };
        check_param("p", p, p > 0.0 && p <= 1.0, "0 < p <= 1")?;
        check_param("q", q, q > 0.0, "q > 0")?;
        c.with_diffusion(d_s, d_i)
    }

    /// Spatially constant coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        domain: Arc<DiscreteDomain>,
        beta: f64,
        gamma: f64,
        eta: f64,
        lambda: f64,
        d_s: f64,
        d_i: f64,
        p: f64,
        q: f64,
    ) -> Result<Self, DynamicsError> {
        let field = |v: f64| ScalarField::constant(&domain, v);
        let (b, g, e, l) = (field(beta), field(gamma), field(eta), field(lambda));
        Self::new(domain, b, g, e, l, d_s, d_i, p, q)
    }

    /// The same coefficients with other diffusion rates.
    pub fn with_diffusion(&self, d_s: f64, d_i: f64) -> Result<Self, DynamicsError> {
        check_param("d_S", d_s, d_s > 0.0, "d_S > 0")?;
        check_param("d_I", d_i, d_i > 0.0, "d_I > 0")?;
        Ok(CoefficientSet {
            d_s,
            d_i,
            ..self.clone()
        })
    }

    pub fn domain(&self) -> &DiscreteDomain {
        &self.domain
    }

    pub fn domain_arc(&self) -> &Arc<DiscreteDomain> {
        &self.domain
    }

    pub fn beta(&self) -> &ScalarField {
        &self.beta
    }

    pub fn gamma(&self) -> &ScalarField {
        &self.gamma
    }

    pub fn eta(&self) -> &ScalarField {
        &self.eta
    }

    pub fn lambda(&self) -> &ScalarField {
        &self.lambda
    }

    pub fn d_s(&self) -> f64 {
        self.d_s
    }

    pub fn d_i(&self) -> f64 {
        self.d_i
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    fn pointwise(&self, f: impl Fn(usize) -> f64) -> ScalarField {
        let values = (0..self.domain.len()).map(f).collect();
        ScalarField::new(&self.domain, values).expect("finite coefficient combination")
    }

    /// Risk function `(gamma + eta) / beta`.
    pub fn h(&self) -> ScalarField {
        let (b, g, e) = (self.beta.values(), self.gamma.values(), self.eta.values());
        self.pointwise(|k| (g[k] + e[k]) / b[k])
    }

    /// `gamma / beta`.
    pub fn r(&self) -> ScalarField {
        let (b, g) = (self.beta.values(), self.gamma.values());
        self.pointwise(|k| g[k] / b[k])
    }

    /// `h^(1/q)`, the threshold that Lambda is compared against.
    pub fn h_root(&self) -> ScalarField {
        let inv_q = 1.0 / self.q;
        self.h().map(|v| v.powf(inv_q)).expect("finite threshold")
    }

    /// Incidence `beta S^q I^p` at node `k`.
    pub fn incidence(&self, k: usize, s: f64, i: f64) -> f64 {
        let ip = if self.p == 1.0 { i } else { i.max(0.0).powf(self.p) };
        let sq = if self.q == 1.0 { s } else { s.max(0.0).powf(self.q) };
        self.beta.values()[k] * sq * ip
    }

    pub fn check_domain(&self, f: &ScalarField) -> Result<(), DynamicsError> {
        if f.domain_id() != self.domain.id() {
            return Err(GridError::DomainMismatch.into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub s: ScalarField,
    pub i: ScalarField,
    pub t: f64,
}

impl SimState {
    pub fn new(s: ScalarField, i: ScalarField, t: f64) -> Result<Self, DynamicsError> {
        s.check_same(&i)?;
        if s.min() <= 0.0 {
            return Err(DynamicsError::InvalidState(format!(
                "S must be positive, min is {}",
                s.min()
            )));
        }
        if i.min() < 0.0 {
            return Err(DynamicsError::InvalidState(format!(
                "I must be non-negative, min is {}",
                i.min()
            )));
        }
        Ok(SimState { s, i, t })
    }

    pub fn constant(dom: &DiscreteDomain, s: f64, i: f64) -> Result<Self, DynamicsError> {
        Self::new(ScalarField::constant(dom, s), ScalarField::constant(dom, i), 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub dt: f64,
    /// `|sum (dS + dI) m / dt - sum (Lambda - S' - eta I') m| / sum Lambda m`.
    pub mass_defect: f64,
    pub min_s: f64,
    pub min_i: f64,
    pub rejected: usize,
}

const STEP_CG_TOL: f64 = 1e-11;

/// Rate growth between accepted steps treated as a sign of instability.
const OSCILLATION_JUMP: f64 = 1.5;

/// Signed defect of the discrete balance law, unnormalized.
fn balance_defect(c: &CoefficientSet, old: &SimState, s: &[f64], i: &[f64], dt: f64) -> f64 {
    let m = c.domain.cell_measures();
    let (l, e) = (c.lambda.values(), c.eta.values());
    let (s0, i0) = (old.s.values(), old.i.values());
    let mut acc = 0.0;
    for k in 0..m.len() {
        let change = (s[k] - s0[k] + i[k] - i0[k]) / dt;
        acc += m[k] * (change - (l[k] - s[k] - e[k] * i[k]));
    }
    acc
}

/// One IMEX step: diffusion and the linear sinks `-S`, `-eta I` implicit,
/// infection and recovery explicit at the old level.
///
/// Both systems are solved for the increment, so a steady state is an exact
/// fixed point. A constant correction to S removes the balance defect left by
/// the inexact linear solves. Returns [`DynamicsError::Rejected`] when the new
/// state is not admissible; the caller is expected to retry with a smaller dt.
pub fn step_imex(
    state: &SimState,
    c: &CoefficientSet,
    dt: f64,
) -> Result<(SimState, StepStats), DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidParameter {
            name: "dt",
            value: dt,
            expected: "dt > 0",
        });
    }
    c.check_domain(&state.s)?;
    c.check_domain(&state.i)?;
    let dom = c.domain();
    let n = dom.len();
    let m = dom.cell_measures();
    let k = dom.stiffness();
    let (s0, i0) = (state.s.values(), state.i.values());
    let (l, g, e) = (c.lambda.values(), c.gamma.values(), c.eta.values());
    let ks = k.mul(s0);
    let ki = k.mul(i0);

    let mut rhs_s = vec![0.0; n];
    let mut rhs_i = vec![0.0; n];
    let mut transfer = vec![0.0; n];
    for j in 0..n {
        let t = c.incidence(j, s0[j], i0[j]) - g[j] * i0[j];
        transfer[j] = t;
        rhs_s[j] = m[j] * (l[j] - s0[j] - t) - c.d_s * ks[j];
        rhs_i[j] = m[j] * (t - e[j] * i0[j]) - c.d_i * ki[j];
    }
    let inv_dt = 1.0 / dt;
    let a_s = ShiftedOperator::new(k, c.d_s, m.iter().map(|w| w * (inv_dt + 1.0)).collect());
    let a_i = ShiftedOperator::new(k, c.d_i, m.iter().zip(e).map(|(w, e)| w * (inv_dt + e)).collect());
    let opts = CgOptions {
        rel_tol: STEP_CG_TOL,
        abs_tol: 1e-300,
        max_iter: None,
    };
    let (ds, rep_s) = spd_solve_from(&a_s, &rhs_s, vec![0.0; n], &opts);
    let (di, rep_i) = spd_solve_from(&a_i, &rhs_i, vec![0.0; n], &opts);
    let mut s: Vec<f64> = s0.iter().zip(&ds).map(|(a, b)| a + b).collect();
    let mut i: Vec<f64> = i0.iter().zip(&di).map(|(a, b)| a + b).collect();
    if !rep_s.converged || !rep_i.converged {
        return Err(DynamicsError::Rejected {
            min_s: f64::NAN,
            min_i: f64::NAN,
        });
    }

    if i.iter().any(|&v| v < 0.0) {
        // The full system for I' has an M-matrix and a non-negative right-hand
        // side whenever dt <= 1/gamma, so Gauss-Seidel restores the sign.
        let full: Vec<f64> = (0..n).map(|j| m[j] * (i0[j] * inv_dt + transfer[j])).collect();
        if full.iter().all(|&b| b >= 0.0) {
            gauss_seidel_nonnegative(&a_i, &full, &mut i, 4);
        }
    }

    let defect = balance_defect(c, state, &s, &i, dt);
    let shift = -defect / m.iter().map(|w| w * (inv_dt + 1.0)).sum::<f64>();
    for v in s.iter_mut() {
        *v += shift;
    }

    let min_s = s.iter().copied().fold(f64::INFINITY, f64::min);
    let min_i = i.iter().copied().fold(f64::INFINITY, f64::min);
    let lost_positivity = c.p < 1.0 && i0.iter().zip(&i).any(|(&a, &b)| a > 0.0 && b <= 0.0);
    let finite = s.iter().chain(&i).all(|v| v.is_finite());
    if !finite || min_s <= 0.0 || min_i < 0.0 || lost_positivity {
        return Err(DynamicsError::Rejected { min_s, min_i });
    }

    let total_lambda: f64 = m.iter().zip(l).map(|(w, v)| w * v).sum();
    let mass_defect = balance_defect(c, state, &s, &i, dt).abs() / total_lambda;
    let next = SimState {
        s: ScalarField::new(dom, s)?,
        i: ScalarField::new(dom, i)?,
        t: state.t + dt,
    };
    Ok((
        next,
        StepStats {
            dt,
            mass_defect,
            min_s,
            min_i,
            rejected: 0,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub t_final: Option<f64>,
    /// Stop once `max |new - old| / dt` over both fields drops below this.
    pub steady_tol: Option<f64>,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub growth: f64,
    pub max_steps: usize,
    /// Record a snapshot every this many accepted steps (0: first and last only).
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_final: None,
            steady_tol: Some(1e-9),
            dt_init: 0.01,
            dt_max: 0.1,
            dt_min: 1e-9,
            growth: 1.1,
            max_steps: 2_000_000,
            snapshot_every: 0,
        }
    }
}

impl RunConfig {
    pub fn steady(tol: f64) -> Self {
        RunConfig {
            steady_tol: Some(tol),
            ..Default::default()
        }
    }

    pub fn until(t_final: f64) -> Self {
        RunConfig {
            t_final: Some(t_final),
            steady_tol: None,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    /// Integral of S + I.
    pub mass: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub min_i: f64,
    pub max_i: f64,
}

impl Snapshot {
    fn of(step: usize, state: &SimState, m: &[f64]) -> Self {
        let mass = m
            .iter()
            .zip(state.s.values().iter().zip(state.i.values()))
            .map(|(w, (s, i))| w * (s + i))
            .sum();
        Snapshot {
            step,
            t: state.t,
            mass,
            min_s: state.s.min(),
            max_s: state.s.max(),
            min_i: state.i.min(),
            max_i: state.i.max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub rejected: usize,
    pub reached_steady: bool,
    /// Last value of `max |new - old| / dt`.
    pub rate: f64,
    pub last_dt: f64,
    pub max_mass_defect: f64,
    pub snapshots: Vec<Snapshot>,
}

pub fn run(
    state: SimState,
    c: &CoefficientSet,
    cfg: &RunConfig,
) -> Result<(SimState, RunSummary), DynamicsError> {
    run_observed(state, c, cfg, |_, _| {})
}

/// [`run`], calling `observer(step, state)` at every snapshot.
pub fn run_observed(
    mut state: SimState,
    c: &CoefficientSet,
    cfg: &RunConfig,
    mut observer: impl FnMut(usize, &SimState),
) -> Result<(SimState, RunSummary), DynamicsError> {
    if cfg.t_final.is_none() && cfg.steady_tol.is_none() {
        return Err(DynamicsError::InvalidParameter {
            name: "stop",
            value: f64::NAN,
            expected: "t_final or steady_tol",
        });
    }
    for (name, v) in [("dt_init", cfg.dt_init), ("dt_max", cfg.dt_max), ("dt_min", cfg.dt_min)] {
        check_param(name, v, v > 0.0, "positive")?;
    }
    check_param("growth", cfg.growth, cfg.growth >= 1.0, ">= 1")?;
    let m = c.domain().cell_measures().to_vec();
    let mut summary = RunSummary {
        steps: 0,
        rejected: 0,
        reached_steady: false,
        rate: f64::INFINITY,
        last_dt: 0.0,
        max_mass_defect: 0.0,
        snapshots: vec![Snapshot::of(0, &state, &m)],
    };
    observer(0, &state);
    let mut dt = cfg.dt_init.min(cfg.dt_max);
    loop {
        if let Some(t_final) = cfg.t_final {
            if state.t >= t_final * (1.0 - 1e-14) {
                break;
            }
            dt = dt.min(t_final - state.t);
        }
        if summary.steps >= cfg.max_steps {
            return Err(DynamicsError::StepBudget {
                steps: cfg.max_steps,
                t: state.t,
            });
        }
        match step_imex(&state, c, dt) {
            Ok((next, stats)) => {
                summary.steps += 1;
                summary.last_dt = dt;
                summary.max_mass_defect = summary.max_mass_defect.max(stats.mass_defect);
                let change = next
                    .s
                    .sup_distance(&state.s)?
                    .max(next.i.sup_distance(&state.i)?);
                let prev_rate = summary.rate;
                summary.rate = change / dt;
                state = next;
                let steady = cfg.steady_tol.is_some_and(|tol| summary.rate < tol);
                if cfg.snapshot_every > 0 && summary.steps.is_multiple_of(cfg.snapshot_every) && !steady {
                    summary.snapshots.push(Snapshot::of(summary.steps, &state, &m));
                    observer(summary.steps, &state);
                }
                if steady {
                    summary.reached_steady = true;
                    break;
                }
                // The explicit infection term is stiff where S is small and
                // q < 1; above its stability limit the march oscillates
                // without losing positivity, which shows up as a jump in the
                // rate. Jumps at round-off level are ignored.
                let floor = cfg.steady_tol.unwrap_or(1e-9);
                if summary.rate > floor && summary.rate > OSCILLATION_JUMP * prev_rate {
                    dt = (0.5 * dt).max(cfg.dt_min);
                } else {
                    dt = (dt * cfg.growth).min(cfg.dt_max);
                }
            }
            Err(DynamicsError::Rejected { .. }) => {
                summary.rejected += 1;
                dt *= 0.5;
                if dt < cfg.dt_min {
                    return Err(DynamicsError::DtUnderflow {
                        t: state.t,
                        dt_min: cfg.dt_min,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    let last = Snapshot::of(summary.steps, &state, &m);
    if summary.snapshots.last().map(|s| s.step) != Some(summary.steps) {
        summary.snapshots.push(last);
        observer(summary.steps, &state);
    }
    Ok((state, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};

    fn square(n: usize) -> Arc<DiscreteDomain> {
        Arc::new(build_domain(&DomainSpec::unit_square(n, n)).unwrap())
    }

    #[test]
    fn scalar_step_with_no_infection() {
        let dom = square(5);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let st = SimState::constant(&dom, 0.5, 0.0).unwrap();
        let (next, stats) = step_imex(&st, &c, 0.1).unwrap();
        assert!(next.i.values().iter().all(|&v| v == 0.0));
        for &v in next.s.values() {
            assert!((v - 6.0 / 11.0).abs() < 1e-14);
        }
        assert!(stats.mass_defect <= 1e-14);
    }

    #[test]
    fn equilibrium_is_fixed() {
        let dom = square(6);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 0.3, 0.02, 1.0, 1.0).unwrap();
        let st = SimState::constant(&dom, 1.0, 2.0).unwrap();
        let (next, _) = step_imex(&st, &c, 0.1).unwrap();
        assert!(next.s.sup_distance(&st.s).unwrap() < 1e-12);
        assert!(next.i.sup_distance(&st.i).unwrap() < 1e-12);
    }

    #[test]
    fn mass_balance_with_heterogeneous_data() {
        let dom = Arc::new(build_domain(&DomainSpec::disk_with_cell_size([0.0, 0.0], 1.0, 0.1)).unwrap());
        let beta = ScalarField::from_fn(&dom, |x, y| 3.0 + 2.0 * (3.0 * x).sin() * y.cos()).unwrap();
        let gamma = ScalarField::from_fn(&dom, |x, _| 1.0 + 0.5 * x).unwrap();
        let eta = ScalarField::constant(&dom, 0.7);
        let lambda = ScalarField::from_fn(&dom, |x, y| 1.0 + 0.3 * (x * y).cos()).unwrap();
        let c = CoefficientSet::new(dom.clone(), beta, gamma, eta, lambda, 0.01, 0.001, 0.6, 0.5).unwrap();
        let s = ScalarField::from_fn(&dom, |x, _| 0.8 + 0.1 * x).unwrap();
        let i = ScalarField::from_fn(&dom, |_, y| 0.2 + 0.1 * y).unwrap();
        let mut st = SimState::new(s, i, 0.0).unwrap();
        for _ in 0..20 {
            let (next, stats) = step_imex(&st, &c, 0.05).unwrap();
            assert!(stats.mass_defect <= 1e-10, "{}", stats.mass_defect);
            assert!(stats.min_s > 0.0 && stats.min_i > 0.0);
            st = next;
        }
    }

    #[test]
    fn run_reaches_constant_equilibrium() {
        let dom = square(5);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let st = SimState::constant(&dom, 0.8, 0.2).unwrap();
        let (end, summary) = run(st, &c, &RunConfig::steady(1e-9)).unwrap();
        assert!(summary.reached_steady);
        assert!(end.s.values().iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(end.i.values().iter().all(|v| (v - 2.0).abs() < 1e-6));
        assert!(summary.snapshots.iter().all(|s| s.min_s > 0.0));
    }

    #[test]
    fn marginal_case_decays() {
        let dom = square(4);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let st = SimState::constant(&dom, 0.8, 0.2).unwrap();
        let (end, _) = run(st, &c, &RunConfig::until(2000.0)).unwrap();
        assert!(end.i.max() < 5e-3);
        assert!((end.s.min() - 1.0).abs() < 5e-3);
    }

    #[test]
    fn final_time_is_hit_exactly() {
        let dom = square(3);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let st = SimState::constant(&dom, 0.8, 0.2).unwrap();
        let cfg = RunConfig {
            snapshot_every: 5,
            ..RunConfig::until(1.234)
        };
        let mut seen = 0;
        let (end, summary) = run_observed(st, &c, &cfg, |_, _| seen += 1).unwrap();
        assert!((end.t - 1.234).abs() < 1e-12);
        assert_eq!(seen, summary.snapshots.len());
    }

    #[test]
    fn rejects_bad_inputs() {
        let dom = square(3);
        assert!(CoefficientSet::constant(dom.clone(), 0.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.5, 1.0).is_err());
        assert!(CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(SimState::constant(&dom, 0.0, 1.0).is_err());
        assert!(SimState::constant(&dom, 1.0, -1.0).is_err());
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let st = SimState::constant(&dom, 1.0, 1.0).unwrap();
        assert!(step_imex(&st, &c, 0.0).is_err());
        let other = square(4);
        let wrong = SimState::constant(&other, 1.0, 1.0).unwrap();
        assert!(step_imex(&wrong, &c, 0.1).is_err());
    }

    #[test]
    fn huge_step_is_rejected_then_run_recovers() {
        let dom = square(4);
        // Strong infection drives the explicit S update negative at large dt.
        let c = CoefficientSet::constant(dom.clone(), 50.0, 0.1, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let st = SimState::constant(&dom, 1.0, 1.0).unwrap();
        assert!(matches!(step_imex(&st, &c, 1.0), Err(DynamicsError::Rejected { .. })));
        let cfg = RunConfig {
            dt_init: 1.0,
            dt_max: 1.0,
            ..RunConfig::until(1.0)
        };
        let (_, summary) = run(st, &c, &cfg).unwrap();
        assert!(summary.rejected > 0);
    }
}
