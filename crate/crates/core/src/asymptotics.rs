//! Predicted small-diffusion limit profiles, the monotone iteration schemes
//! that construct them, and a priori bounds on endemic equilibria.

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::CoefficientSet;
use crate::equilibrium::{grid_tolerance, solve_dfe, EquilibriumError, EquilibriumResult};
use crate::grid::{GridError, ScalarField};
use crate::linalg::{spd_solve_from, CgOptions, ShiftedOperator};
use crate::spectral::{compute_lambda0, SpectralError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticsError {
    #[error("this limit requires {expected}, got p = {p}")]
    WrongExponent { expected: &'static str, p: f64 },
    #[error("sigma = {sigma} must exceed eta_max = {eta_max}")]
    SigmaTooSmall { sigma: f64, eta_max: f64 },
    #[error("lambda0 = {0} is not negative; no positive limit profile as d_S -> 0")]
    Lambda0NotNegative(f64),
    #[error("equilibrium is not endemic")]
    NotEndemic,
    #[error("time march for the limit problem did not reach steady state (rate {rate:e} after {steps} steps)")]
    NotConverged { steps: usize, rate: f64 },
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    DiToZero,
    DsToZero,
    BothToZero,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::DiToZero => "dI_to_0",
            Regime::DsToZero => "dS_to_0",
            Regime::BothToZero => "both_to_0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    S,
    I,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

/// A pointwise bound on a limit component, for regimes where only bounds are
/// known.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub name: &'static str,
    pub component: Component,
    pub side: Side,
    pub field: ScalarField,
}

/// Node sets predicted for `d_I -> 0` with `p = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub dfe: ScalarField,
    /// `h^(1/q)`, also an upper bound for the limit of S.
    pub ceiling: ScalarField,
    /// `{S~ > h^(1/q)}` (with a relative margin against round-off).
    pub endemic_set: Vec<bool>,
    /// `{S~ < h^(1/q)}`, where infection vanishes in the limit.
    pub vanishing_set: Vec<bool>,
}

impl Classification {
    /// No endemic equilibrium is predicted for small `d_I`.
    pub fn predicts_extinction(&self) -> bool {
        !self.endemic_set.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitProfile {
    pub regime: Regime,
    pub s: Option<ScalarField>,
    pub i: Option<ScalarField>,
    pub sigma: Option<f64>,
    pub classification: Option<Classification>,
    pub envelopes: Vec<Envelope>,
    pub method: &'static str,
    /// Time steps of a marched construction, zero for pointwise ones.
    pub steps: usize,
    /// Sup-norm residual of the defining equation.
    pub residual: f64,
}

impl LimitProfile {
    fn pointwise(regime: Regime, s: ScalarField, i: ScalarField, sigma: Option<f64>, method: &'static str) -> Self {
        LimitProfile {
            regime,
            s: Some(s),
            i: Some(i),
            sigma,
            classification: None,
            envelopes: Vec::new(),
            method,
            steps: 0,
            residual: 0.0,
        }
    }
}

/// Root of a strictly increasing `f` with `f(lo) <= target <= f(hi)`,
/// bisected until the bracket cannot shrink further.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(
        f(lo) <= target && f(hi) >= target,
        "bisection bracket [{lo}, {hi}] does not contain the root"
    );
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn field(c: &CoefficientSet, values: Vec<f64>) -> Result<ScalarField, AsymptoticsError> {
    Ok(ScalarField::new(c.domain(), values)?)
}

fn require_p1(c: &CoefficientSet) -> Result<(), AsymptoticsError> {
    if c.p() != 1.0 {
        return Err(AsymptoticsError::WrongExponent {
            expected: "p = 1",
            p: c.p(),
        });
    }
    Ok(())
}

fn require_sublinear(c: &CoefficientSet) -> Result<(), AsymptoticsError> {
    if c.p() >= 1.0 {
        return Err(AsymptoticsError::WrongExponent {
            expected: "0 < p < 1",
            p: c.p(),
        });
    }
    Ok(())
}

fn require_sigma_above_eta(c: &CoefficientSet, sigma: f64) -> Result<(), AsymptoticsError> {
    let eta_max = c.eta().max();
    // Written so that a NaN sigma is rejected too.
    if sigma.partial_cmp(&eta_max) != Some(std::cmp::Ordering::Greater) {
        return Err(AsymptoticsError::SigmaTooSmall { sigma, eta_max });
    }
    Ok(())
}

/// Relative margin used to decide `S~ > h^(1/q)` on the grid.
pub const CLASSIFY_MARGIN: f64 = 1e-9;

/// Endemic and vanishing node sets for `d_I -> 0`, `p = 1`.
pub fn classify_di0_p1(c: &CoefficientSet) -> Result<LimitProfile, AsymptoticsError> {
    require_p1(c)?;
    let dfe = solve_dfe(c)?;
    let ceiling = c.h_root();
    let mut endemic_set = Vec::with_capacity(dfe.len());
    let mut vanishing_set = Vec::with_capacity(dfe.len());
    for (&s, &t) in dfe.values().iter().zip(ceiling.values()) {
        let margin = CLASSIFY_MARGIN * t.abs().max(1.0);
        endemic_set.push(s > t + margin);
        vanishing_set.push(s < t - margin);
    }
    Ok(LimitProfile {
        regime: Regime::DiToZero,
        s: None,
        i: None,
        sigma: None,
        classification: Some(Classification {
            dfe,
            ceiling: ceiling.clone(),
            endemic_set,
            vanishing_set,
        }),
        envelopes: vec![Envelope {
            name: "S* <= h^(1/q)",
            component: Component::S,
            side: Side::Upper,
            field: ceiling,
        }],
        method: "dfe threshold",
        steps: 0,
        residual: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchOptions {
    pub steady_tol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub growth: f64,
    pub max_steps: usize,
}

impl Default for MarchOptions {
    fn default() -> Self {
        MarchOptions {
            steady_tol: 1e-10,
            dt_init: 0.01,
            dt_max: 1.0,
            growth: 1.1,
            max_steps: 1_000_000,
        }
    }
}

/// `S_*` of the `d_I -> 0` limit for `0 < p < 1`:
/// `d_S Delta S + Lambda - S - eta (S^q / h)^(1/(1-p)) = 0`, then
/// `I_* = (S_*^q / h)^(1/(1-p))`.
///
/// Marched with the nonlinear sink linearized about the previous level,
/// `(1/dt + 1 + g(S^n)) S' - d_S L S' = S^n / dt + Lambda`, whose matrix is an
/// M-matrix and right-hand side positive, so every iterate stays positive.
pub fn limit_di0_plt1(c: &CoefficientSet, opts: &MarchOptions) -> Result<LimitProfile, AsymptoticsError> {
    require_sublinear(c)?;
    let dom = c.domain();
    let n = dom.len();
    let m = dom.cell_measures();
    let (l, e) = (c.lambda().values(), c.eta().values());
    let h = c.h();
    let exponent = c.q() / (1.0 - c.p());
    let scale: Vec<f64> = h.values().iter().map(|hk| hk.powf(-1.0 / (1.0 - c.p()))).collect();
    // Sink eta (S^q/h)^(1/(1-p)) = sink_coeff(S) * S.
    let sink = |k: usize, s: f64| e[k] * scale[k] * s.powf(exponent);
    let sink_coeff = |k: usize, s: f64| e[k] * scale[k] * s.powf(exponent - 1.0);

    let mut s = l.to_vec();
    let mut dt = opts.dt_init.min(opts.dt_max);
    let mut steps = 0;
    let mut rate = f64::INFINITY;
    let cg = CgOptions::relative(1e-13);
    while rate >= opts.steady_tol {
        if steps >= opts.max_steps {
            return Err(AsymptoticsError::NotConverged { steps, rate });
        }
        steps += 1;
        let diag: Vec<f64> = (0..n).map(|k| m[k] * (1.0 / dt + 1.0 + sink_coeff(k, s[k]))).collect();
        let rhs: Vec<f64> = (0..n).map(|k| m[k] * (s[k] / dt + l[k])).collect();
        let a = ShiftedOperator::new(dom.stiffness(), c.d_s(), diag);
        let (next, _) = spd_solve_from(&a, &rhs, s.clone(), &cg);
        rate = next.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / dt;
        s = next;
        dt = (dt * opts.growth).min(opts.dt_max);
    }
    let ls = dom.laplacian().mul(&s);
    let residual = (0..n)
        .map(|k| (c.d_s() * ls[k] + l[k] - s[k] - sink(k, s[k])).abs())
        .fold(0.0, f64::max);
    let i: Vec<f64> = (0..n).map(|k| sink(k, s[k]) / e[k]).collect();
    let mut profile = LimitProfile::pointwise(Regime::DiToZero, field(c, s)?, field(c, i)?, None, "semi-implicit march");
    profile.steps = steps;
    profile.residual = residual;
    Ok(profile)
}

/// The S value that balances the S equation without diffusion:
/// `s + beta s^q I^p = Lambda + gamma I`.
pub fn eliminate_s(c: &CoefficientSet, k: usize, i: f64) -> f64 {
    let target = c.lambda().values()[k] + c.gamma().values()[k] * i;
    bisect_increasing(|s| s + c.incidence(k, s, i), target, 0.0, target)
}

/// Limit as `d_S -> 0`: the I equation with S eliminated pointwise,
/// `d_I Delta I + Lambda - S(I) - eta I = 0`, marched to steady state from the
/// supersolution `(Lambda / eta)_max`.
pub fn limit_ds0(c: &CoefficientSet, opts: &MarchOptions) -> Result<LimitProfile, AsymptoticsError> {
    if c.p() == 1.0 {
        let l0 = compute_lambda0(c)?.eigenvalue;
        if l0 >= 0.0 {
            return Err(AsymptoticsError::Lambda0NotNegative(l0));
        }
    }
    let dom = c.domain();
    let n = dom.len();
    let m = dom.cell_measures();
    let (l, e) = (c.lambda().values(), c.eta().values());
    let start = (0..n).map(|k| l[k] / e[k]).fold(0.0, f64::max);
    let mut i = vec![start; n];
    // dt <= 1/gamma keeps the explicit part of the right-hand side positive.
    let dt_cap = opts.dt_max.min(0.5 / c.gamma().max());
    let mut dt = opts.dt_init.min(dt_cap);
    let mut steps = 0;
    let mut rate = f64::INFINITY;
    let cg = CgOptions::relative(1e-13);
    let a_diag = |dt: f64| -> Vec<f64> { (0..n).map(|k| m[k] * (1.0 / dt + e[k])).collect() };
    let eliminate = |i: &[f64]| -> Vec<f64> { (0..n).into_par_iter().map(|k| eliminate_s(c, k, i[k])).collect() };
    while rate >= opts.steady_tol {
        if steps >= opts.max_steps {
            return Err(AsymptoticsError::NotConverged { steps, rate });
        }
        steps += 1;
        let s = eliminate(&i);
        let rhs: Vec<f64> = (0..n).map(|k| m[k] * (i[k] / dt + l[k] - s[k])).collect();
        let a = ShiftedOperator::new(dom.stiffness(), c.d_i(), a_diag(dt));
        let (next, _) = spd_solve_from(&a, &rhs, i.clone(), &cg);
        rate = next.iter().zip(&i).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / dt;
        i = next.into_iter().map(|v| v.max(0.0)).collect();
        dt = (dt * opts.growth).min(dt_cap);
    }
    let s = eliminate(&i);
    let li = dom.laplacian().mul(&i);
    let residual = (0..n)
        .map(|k| (c.d_i() * li[k] + l[k] - s[k] - e[k] * i[k]).abs())
        .fold(0.0, f64::max);
    let mut profile = LimitProfile::pointwise(Regime::DsToZero, field(c, s)?, field(c, i)?, None, "reduced march");
    profile.steps = steps;
    profile.residual = residual;
    Ok(profile)
}

/// Limit as both rates vanish with `d_I / d_S -> sigma`, `p = 1`.
///
/// For `sigma >= eta_max` the limit is `(min{Lambda, h^(1/q)},
/// (Lambda - h^(1/q))_+ / eta)`. Otherwise only envelope fields are known and
/// the profile fields are left empty.
pub fn limit_both_p1(c: &CoefficientSet, sigma: f64) -> Result<LimitProfile, AsymptoticsError> {
    require_p1(c)?;
    let n = c.domain().len();
    let (l, e) = (c.lambda().values(), c.eta().values());
    let root = c.h_root();
    let t = root.values();
    let r_root_min = c.r().min().powf(1.0 / c.q());
    let mut envelopes = vec![
        Envelope {
            name: "S* >= min{Lambda_min, r_min^(1/q)}",
            component: Component::S,
            side: Side::Lower,
            field: ScalarField::constant(c.domain(), c.lambda().min().min(r_root_min)),
        },
        Envelope {
            name: "S* <= Lambda_max",
            component: Component::S,
            side: Side::Upper,
            field: ScalarField::constant(c.domain(), c.lambda().max()),
        },
        Envelope {
            name: "I* <= (Lambda - h^(1/q))_+ / min{sigma, eta}",
            component: Component::I,
            side: Side::Upper,
            field: field(c, (0..n).map(|k| (l[k] - t[k]).max(0.0) / sigma.min(e[k])).collect())?,
        },
    ];
    if c.q() == 1.0 {
        let h = c.h();
        let hv = h.values();
        envelopes.push(Envelope {
            name: "I* >= (Lambda - h)_+ / eta",
            component: Component::I,
            side: Side::Lower,
            field: field(c, (0..n).map(|k| (l[k] - hv[k]).max(0.0) / e[k]).collect())?,
        });
        envelopes.push(Envelope {
            name: "S* <= min{Lambda, h}",
            component: Component::S,
            side: Side::Upper,
            field: field(c, (0..n).map(|k| l[k].min(hv[k])).collect())?,
        });
    }
    let (s, i) = if sigma >= c.eta().max() {
        let s = field(c, (0..n).map(|k| l[k].min(t[k])).collect())?;
        let i = field(c, (0..n).map(|k| (l[k] - t[k]).max(0.0) / e[k]).collect())?;
        (Some(s), Some(i))
    } else {
        (None, None)
    };
    Ok(LimitProfile {
        regime: Regime::BothToZero,
        s,
        i,
        sigma: Some(sigma),
        classification: None,
        envelopes,
        method: "closed form",
        steps: 0,
        residual: 0.0,
    })
}

/// Limit as both rates vanish, `0 < p < 1`: per node,
/// `Lambda = eta I + h^(1/q) I^((1-p)/q)` and `S = h^(1/q) I^((1-p)/q)`.
pub fn limit_both_plt1(c: &CoefficientSet, sigma: f64) -> Result<LimitProfile, AsymptoticsError> {
    require_sublinear(c)?;
    require_sigma_above_eta(c, sigma)?;
    let (l, e) = (c.lambda().values(), c.eta().values());
    let root = c.h_root();
    let t = root.values();
    let power = (1.0 - c.p()) / c.q();
    let hi = c.lambda().max() / c.eta().min() + 1.0;
    let i: Vec<f64> = (0..l.len())
        .into_par_iter()
        .map(|k| bisect_increasing(|x| e[k] * x + t[k] * x.powf(power), l[k], 0.0, hi))
        .collect();
    let s: Vec<f64> = (0..l.len()).map(|k| t[k] * i[k].powf(power)).collect();
    let residual = (0..l.len()).map(|k| (s[k] + e[k] * i[k] - l[k]).abs()).fold(0.0, f64::max);
    let mut profile = LimitProfile::pointwise(Regime::BothToZero, field(c, s)?, field(c, i)?, Some(sigma), "pointwise bisection");
    profile.residual = residual;
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneSequence {
    pub direction: Direction,
    /// `(u_n, v_n)` from `n = 0`.
    pub iterates: Vec<(ScalarField, ScalarField)>,
    /// The last iterate.
    pub limit: (ScalarField, ScalarField),
    /// `||v_{n+1} - v_n||_inf` for each step.
    pub gaps: Vec<f64>,
    pub converged: bool,
}

impl MonotoneSequence {
    fn build(
        c: &CoefficientSet,
        direction: Direction,
        raw: Vec<(Vec<f64>, Vec<f64>)>,
        gaps: Vec<f64>,
        converged: bool,
    ) -> Result<Self, AsymptoticsError> {
        let iterates = raw
            .into_iter()
            .map(|(u, v)| Ok((field(c, u)?, field(c, v)?)))
            .collect::<Result<Vec<_>, AsymptoticsError>>()?;
        let limit = iterates.last().expect("at least one iterate").clone();
        Ok(MonotoneSequence {
            direction,
            iterates,
            limit,
            gaps,
            converged,
        })
    }

    /// Largest violation of monotonicity over all nodes and steps, in the
    /// sequence's own direction (0 when perfectly monotone).
    pub fn monotonicity_violation(&self) -> f64 {
        let sign = match self.direction {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        };
        let mut worst = 0.0f64;
        for pair in self.iterates.windows(2) {
            let (u0, v0) = &pair[0];
            let (u1, v1) = &pair[1];
            for (a, b) in u0.values().iter().zip(u1.values()).chain(v0.values().iter().zip(v1.values())) {
                worst = worst.max(-sign * (b - a));
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceOptions {
    pub n_max: usize,
    /// Stop once `||v_{n+1} - v_n||_inf` falls below this.
    pub tol: f64,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions { n_max: 10_000, tol: 1e-10 }
    }
}

fn sequence_start(c: &CoefficientSet, sigma: f64) -> f64 {
    let l = c.lambda().values();
    let e = c.eta().values();
    let ratio = (0..l.len()).map(|k| l[k] / e[k]).fold(0.0, f64::max);
    c.lambda().max() + (1.0 + sigma) * ratio
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iteration for `0 < p < 1`: `v_{n+1}` solves
/// `u_n = v + h^(1/q) (v / sigma)^((1-p)/q)` and
/// `u_{n+1} = Lambda + (1 - eta/sigma) v_{n+1}`. The decreasing branch starts
/// from the constant `Lambda_max + (1 + sigma)(Lambda/eta)_max` and updates u
/// before v.
pub fn monotone_seq_plt1(
    c: &CoefficientSet,
    sigma: f64,
    direction: Direction,
    opts: &SequenceOptions,
) -> Result<MonotoneSequence, AsymptoticsError> {
    require_sublinear(c)?;
    require_sigma_above_eta(c, sigma)?;
    let (l, e) = (c.lambda().values(), c.eta().values());
    let root = c.h_root();
    let t = root.values();
    let n = l.len();
    let power = (1.0 - c.p()) / c.q();
    let solve_v = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .map(|k| bisect_increasing(|v| v + t[k] * (v / sigma).powf(power), u[k], 0.0, u[k]))
            .collect()
    };
    let update_u = |v: &[f64]| -> Vec<f64> { (0..n).map(|k| l[k] + (1.0 - e[k] / sigma) * v[k]).collect() };

    let mut raw = Vec::new();
    let mut gaps = Vec::new();
    let mut converged = false;
    match direction {
        Direction::Increasing => {
            let (mut u, mut v) = (l.to_vec(), vec![0.0; n]);
            raw.push((u.clone(), v.clone()));
            for _ in 0..opts.n_max {
                let v_next = solve_v(&u);
                let gap = sup_gap(&v_next, &v);
                u = update_u(&v_next);
                v = v_next;
                raw.push((u.clone(), v.clone()));
                gaps.push(gap);
                if gap < opts.tol {
                    converged = true;
                    break;
                }
            }
        }
        Direction::Decreasing => {
            let top = sequence_start(c, sigma);
            let (mut u, mut v) = (vec![top; n], vec![top; n]);
            raw.push((u.clone(), v.clone()));
            for _ in 0..opts.n_max {
                u = update_u(&v);
                let v_next = solve_v(&u);
                let gap = sup_gap(&v_next, &v);
                v = v_next;
                raw.push((u.clone(), v.clone()));
                gaps.push(gap);
                if gap < opts.tol {
                    converged = true;
                    break;
                }
            }
        }
    }
    MonotoneSequence::build(c, direction, raw, gaps, converged)
}

/// Root `v*` of `Lambda = (eta/sigma) v + h^(1/q) (v/sigma)^((1-p)/q)` and
/// `u* = Lambda + (1 - eta/sigma) v*`, by direct bisection.
pub fn plt1_sequence_limit(c: &CoefficientSet, sigma: f64) -> Result<(ScalarField, ScalarField), AsymptoticsError> {
    require_sublinear(c)?;
    require_sigma_above_eta(c, sigma)?;
    let (l, e) = (c.lambda().values(), c.eta().values());
    let root = c.h_root();
    let t = root.values();
    let power = (1.0 - c.p()) / c.q();
    let n = l.len();
    let hi = sigma * (c.lambda().max() / c.eta().min()) + 1.0;
    let v: Vec<f64> = (0..n)
        .map(|k| bisect_increasing(|v| e[k] / sigma * v + t[k] * (v / sigma).powf(power), l[k], 0.0, hi))
        .collect();
    let u: Vec<f64> = (0..n).map(|k| l[k] + (1.0 - e[k] / sigma) * v[k]).collect();
    Ok((field(c, u)?, field(c, v)?))
}

/// Iteration for `p = 1`: `u_n = Lambda + (1 - eta/sigma) v_n` and
/// `v_{n+1} = (u_n - h^(1/q))_+`, from `(Lambda, 0)` upward or from the
/// constant `Lambda_max + (sigma + 1)(Lambda/eta)_max` downward.
pub fn monotone_seq_p1(
    c: &CoefficientSet,
    sigma: f64,
    direction: Direction,
    opts: &SequenceOptions,
) -> Result<MonotoneSequence, AsymptoticsError> {
    require_p1(c)?;
    require_sigma_above_eta(c, sigma)?;
    let (l, e) = (c.lambda().values(), c.eta().values());
    let root = c.h_root();
    let t = root.values();
    let n = l.len();
    let next_v = |u: &[f64]| -> Vec<f64> { (0..n).map(|k| (u[k] - t[k]).max(0.0)).collect() };
    let update_u = |v: &[f64]| -> Vec<f64> { (0..n).map(|k| l[k] + (1.0 - e[k] / sigma) * v[k]).collect() };

    let (mut u, mut v) = match direction {
        Direction::Increasing => (l.to_vec(), vec![0.0; n]),
        Direction::Decreasing => {
            let top = sequence_start(c, sigma);
            (vec![top; n], vec![top; n])
        }
    };
    let mut raw = vec![(u.clone(), v.clone())];
    let mut gaps = Vec::new();
    let mut converged = false;
    for _ in 0..opts.n_max {
        let v_next = next_v(&u);
        let gap = sup_gap(&v_next, &v);
        u = update_u(if direction == Direction::Increasing { &v_next } else { &v });
        v = v_next;
        raw.push((u.clone(), v.clone()));
        gaps.push(gap);
        if gap < opts.tol {
            converged = true;
            break;
        }
    }
    MonotoneSequence::build(c, direction, raw, gaps, converged)
}

/// `v* = (sigma/eta)(Lambda - h^(1/q))_+` and `u* = min{Lambda, h^(1/q)} + v*`.
pub fn p1_sequence_limit(c: &CoefficientSet, sigma: f64) -> Result<(ScalarField, ScalarField), AsymptoticsError> {
    let (l, e) = (c.lambda().values(), c.eta().values());
    let root = c.h_root();
    let t = root.values();
    let n = l.len();
    let v: Vec<f64> = (0..n).map(|k| sigma / e[k] * (l[k] - t[k]).max(0.0)).collect();
    let u: Vec<f64> = (0..n).map(|k| l[k].min(t[k]) + v[k]).collect();
    Ok((field(c, u)?, field(c, v)?))
}

/// Positive root `c0` of `c + c^q = Lambda_min / (1 + (d_S/d_I + 1/eta_min)^p
/// Lambda_max^p beta_max)`, a lower bound for S at any endemic equilibrium
/// when `0 < p < 1`.
pub fn lower_bound_c0(c: &CoefficientSet) -> f64 {
    let denom = 1.0
        + (c.d_s() / c.d_i() + 1.0 / c.eta().min()).powf(c.p()) * c.lambda().max().powf(c.p()) * c.beta().max();
    let target = c.lambda().min() / denom;
    let q = c.q();
    let hi = target.max(1.0);
    bisect_increasing(|x| x + x.powf(q), target, 0.0, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub name: &'static str,
    /// `bound - value` for upper bounds, `value - bound` for lower bounds.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub tol: f64,
    pub checks: Vec<BoundCheck>,
    pub c0: Option<f64>,
}

impl BoundsReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Evaluates the a priori bounds that apply to an endemic equilibrium: the
/// S bounds for `p = 1`, and for `0 < p < 1` the I bounds in terms of the S
/// extrema, the bounds from `w = d_S S + d_I I`, and the lower bound `c0`.
pub fn bounds_audit(c: &CoefficientSet, e: &EquilibriumResult) -> Result<BoundsReport, AsymptoticsError> {
    c.check_domain(&e.s).map_err(EquilibriumError::from)?;
    if !e.endemic {
        return Err(AsymptoticsError::NotEndemic);
    }
    let tol = grid_tolerance(c);
    let (s_min, s_max) = (e.s.min(), e.s.max());
    let (i_min, i_max) = (e.i.min(), e.i.max());
    let mut checks = Vec::new();
    let mut push = |name, margin: f64| {
        checks.push(BoundCheck {
            name,
            margin,
            passed: margin >= -tol,
        })
    };
    let inv_q = 1.0 / c.q();
    let mut c0 = None;
    if c.p() == 1.0 {
        let r = c.r();
        let lower = c.lambda().min().min(r.min().powf(inv_q));
        let upper = c.lambda().max().max(r.max().powf(inv_q));
        push("S_min >= min{Lambda_min, r_min^(1/q)}", s_min - lower);
        push("S_max <= max{Lambda_max, r_max^(1/q)}", upper - s_max);
    } else {
        let p = c.p();
        let ratio = {
            let (b, g, et) = (c.beta().values(), c.gamma().values(), c.eta().values());
            let v: Vec<f64> = (0..b.len()).map(|k| b[k] / (g[k] + et[k])).collect();
            (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(0.0, f64::max))
        };
        let expo = 1.0 / (1.0 - p);
        push(
            "I_min >= [(beta/(gamma+eta))_min S_min^q]^(1/(1-p))",
            i_min - (ratio.0 * s_min.powf(c.q())).powf(expo),
        );
        push(
            "I_max <= [(beta/(gamma+eta))_max S_max^q]^(1/(1-p))",
            (ratio.1 * s_max.powf(c.q())).powf(expo) - i_max,
        );
        let eta_min = c.eta().min();
        let l_max = c.lambda().max();
        push(
            "S_max <= (1 + d_I/(d_S eta_min)) Lambda_max",
            (1.0 + c.d_i() / (c.d_s() * eta_min)) * l_max - s_max,
        );
        push(
            "I_max <= (d_S/d_I + 1/eta_min) Lambda_max",
            (c.d_s() / c.d_i() + 1.0 / eta_min) * l_max - i_max,
        );
        let bound = lower_bound_c0(c);
        push("S_min >= c0", s_min - bound);
        push(
            "I_min >= [(beta/(gamma+eta))_min c0^q]^(1/(1-p))",
            i_min - (ratio.0 * bound.powf(c.q())).powf(expo),
        );
        c0 = Some(bound);
    }
    Ok(BoundsReport { tol, checks, c0 })
}

/// `{ |S - h^(1/q)| < delta }`.
pub fn coincidence_mask(s: &ScalarField, ceiling: &ScalarField, delta: f64) -> Result<Vec<bool>, AsymptoticsError> {
    s.check_same(ceiling)?;
    Ok(s.values()
        .iter()
        .zip(ceiling.values())
        .map(|(a, b)| (a - b).abs() < delta)
        .collect())
}

/// `{ h^(1/q) - S < delta }`.
pub fn indicator_mask(s: &ScalarField, ceiling: &ScalarField, delta: f64) -> Result<Vec<bool>, AsymptoticsError> {
    s.check_same(ceiling)?;
    Ok(s.values()
        .iter()
        .zip(ceiling.values())
        .map(|(a, b)| b - a < delta)
        .collect())
}

/// Pointwise density `(d_S Delta h^(1/q) + Lambda - h^(1/q)) / eta` of the
/// limiting infected measure on the coincidence set, meaningful only when the
/// risk function is twice differentiable. The Laplacian is the grid's
/// difference operator.
pub fn mu_density(c: &CoefficientSet) -> ScalarField {
    let root = c.h_root();
    let t = root.values();
    let lt = c.domain().laplacian().mul(t);
    let (l, e) = (c.lambda().values(), c.eta().values());
    let values = (0..t.len()).map(|k| (c.d_s() * lt[k] + l[k] - t[k]) / e[k]).collect();
    ScalarField::new(c.domain(), values).expect("finite density")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SimState;
    use crate::equilibrium::{find_ee, EeOptions};
    use crate::grid::{build_domain, DiscreteDomain, DomainSpec};
    use std::sync::Arc;

    fn interval(n: usize) -> Arc<DiscreteDomain> {
        Arc::new(build_domain(&DomainSpec::unit_interval(n)).unwrap())
    }

    /// Constant coefficients with eta = 1 and h = 1.
    fn unit_risk(dom: &Arc<DiscreteDomain>, lambda: f64, p: f64) -> CoefficientSet {
        CoefficientSet::constant(dom.clone(), 1.5, 0.5, 1.0, lambda, 1.0, 1.0, p, 1.0).unwrap()
    }

    fn golden() -> (f64, f64) {
        // I + sqrt(I) = 1  =>  sqrt(I) = (sqrt(5) - 1) / 2.
        let s = (5f64.sqrt() - 1.0) / 2.0;
        (s, s * s)
    }

    #[test]
    fn bisection_matches_brute_force_scan() {
        let f = |x: f64| 0.3 * x + 2.0 * x.powf(0.25);
        let (lo, hi, target) = (0.0, 10.0, 1.7);
        let root = bisect_increasing(f, target, lo, hi);
        let samples = 1_000_000;
        let step = (hi - lo) / samples as f64;
        let j = (0..samples).find(|&j| f(lo + (j + 1) as f64 * step) >= target).unwrap();
        let (a, b) = (lo + j as f64 * step, lo + (j + 1) as f64 * step);
        assert!(f(a) < target && f(b) >= target);
        assert!(a <= root && root <= b);
    }

    #[test]
    fn classification_of_constant_data() {
        let dom = interval(11);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let lp = classify_di0_p1(&c).unwrap();
        let cl = lp.classification.unwrap();
        assert!(cl.endemic_set.iter().all(|&b| b));
        let c = CoefficientSet::constant(dom, 1.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let cl = classify_di0_p1(&c).unwrap().classification.unwrap();
        assert!(cl.predicts_extinction());
        assert!(!cl.vanishing_set.iter().any(|&b| b));
    }

    #[test]
    fn di0_limit_constant() {
        let dom = interval(21);
        let lp = limit_di0_plt1(&unit_risk(&dom, 1.0, 0.5), &MarchOptions::default()).unwrap();
        let (s, i) = golden();
        assert!(lp.s.as_ref().unwrap().values().iter().all(|v| (v - s).abs() < 1e-9));
        assert!(lp.i.as_ref().unwrap().values().iter().all(|v| (v - i).abs() < 1e-9));
        assert!(lp.residual < 1e-9);
    }

    #[test]
    fn di0_limit_heterogeneous_residual() {
        let dom = interval(129);
        let one = ScalarField::constant(&dom, 1.0);
        let lambda = ScalarField::from_fn(&dom, |x, _| 1.0 + 0.5 * (std::f64::consts::PI * x).sin()).unwrap();
        let c = CoefficientSet::new(dom.clone(), one.clone(), one.clone(), one, lambda, 0.01, 1.0, 0.5, 1.0).unwrap();
        let lp = limit_di0_plt1(&c, &MarchOptions::default()).unwrap();
        assert!(lp.residual < 1e-8, "{}", lp.residual);
    }

    #[test]
    fn ds0_limit_constant_and_elimination() {
        let dom = interval(9);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((eliminate_s(&c, 0, 4.0) - 0.8).abs() < 1e-14);
        let lp = limit_ds0(&c, &MarchOptions::default()).unwrap();
        assert!(lp.s.unwrap().values().iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!(lp.i.unwrap().values().iter().all(|v| (v - 2.0).abs() < 1e-8));

        let lp = limit_ds0(&unit_risk(&dom, 1.0, 0.5), &MarchOptions::default()).unwrap();
        let (s, i) = golden();
        assert!(lp.s.unwrap().values().iter().all(|v| (v - s).abs() < 1e-8));
        assert!(lp.i.unwrap().values().iter().all(|v| (v - i).abs() < 1e-8));

        let sub = CoefficientSet::constant(dom, 1.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(limit_ds0(&sub, &MarchOptions::default()), Err(AsymptoticsError::Lambda0NotNegative(_))));
    }

    #[test]
    fn di0_and_ds0_agree_for_constants() {
        let dom = interval(7);
        let c = CoefficientSet::constant(dom, 2.0, 0.3, 0.7, 1.3, 1.0, 1.0, 0.4, 0.8).unwrap();
        let a = limit_di0_plt1(&c, &MarchOptions::default()).unwrap();
        let b = limit_ds0(&c, &MarchOptions::default()).unwrap();
        assert!(a.s.unwrap().sup_distance(b.s.as_ref().unwrap()).unwrap() < 1e-8);
        assert!(a.i.unwrap().sup_distance(b.i.as_ref().unwrap()).unwrap() < 1e-8);
    }

    #[test]
    fn both_limit_p1() {
        let dom = interval(5);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let lp = limit_both_p1(&c, 1.0).unwrap();
        assert!(lp.s.unwrap().values().iter().all(|&v| v == 1.0));
        assert!(lp.i.unwrap().values().iter().all(|&v| v == 2.0));
        assert_eq!(lp.envelopes.len(), 5);
        let below = limit_both_p1(&c, 0.25).unwrap();
        assert!(below.s.is_none() && !below.envelopes.is_empty());
        let low = CoefficientSet::constant(dom, 1.0, 0.5, 0.5, 0.7, 1.0, 1.0, 1.0, 1.0).unwrap();
        let lp = limit_both_p1(&low, 1.0).unwrap();
        assert!(lp.i.unwrap().values().iter().all(|&v| v == 0.0));
        assert!(lp.s.unwrap().values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn both_limit_plt1() {
        let dom = interval(5);
        let lp = limit_both_plt1(&unit_risk(&dom, 1.0, 0.5), 2.0).unwrap();
        let (s, i) = golden();
        assert!(lp.i.as_ref().unwrap().values().iter().all(|v| (v - i).abs() < 1e-12));
        assert!(lp.s.as_ref().unwrap().values().iter().all(|v| (v - s).abs() < 1e-12));
        // eta = h^(1/q) = 0.5 and Lambda = 1 put the root at exactly 1.
        let c = CoefficientSet::constant(dom.clone(), 2.0, 0.5, 0.5, 1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let lp = limit_both_plt1(&c, 2.0).unwrap();
        assert!(lp.i.unwrap().values().iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(lp.residual <= 1e-10);
        assert!(limit_both_plt1(&c, 0.5).is_err());
    }

    #[test]
    fn sublinear_sequence_constants() {
        let dom = interval(4);
        let c = unit_risk(&dom, 1.0, 0.5);
        let up = monotone_seq_plt1(&c, 2.0, Direction::Increasing, &SequenceOptions::default()).unwrap();
        let (u1, v1) = &up.iterates[1];
        assert!(v1.values().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(u1.values().iter().all(|v| (v - 1.25).abs() < 1e-12));
        let v_star = 2.0 * golden().1 * 1.0;
        // v/2 + sqrt(v/2) = 1 gives v/2 = golden I.
        assert!(up.limit.1.values().iter().all(|v| (v - v_star).abs() < 1e-9));
        assert!(up.limit.0.values().iter().all(|v| (v - (1.0 + 0.5 * v_star)).abs() < 1e-9));
        let down = monotone_seq_plt1(&c, 2.0, Direction::Decreasing, &SequenceOptions::default()).unwrap();
        assert!(up.converged && down.converged);
        assert!(up.monotonicity_violation() <= 1e-12);
        assert!(down.monotonicity_violation() <= 1e-12);
        assert!(up.limit.1.sup_distance(&down.limit.1).unwrap() < 1e-8);
    }

    #[test]
    fn linear_sequence_constants() {
        let dom = interval(4);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.0001, 0.9999, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let up = monotone_seq_p1(&c, 2.0, Direction::Increasing, &SequenceOptions::default()).unwrap();
        let vs: Vec<f64> = up.iterates.iter().take(4).map(|(_, v)| v.values()[0]).collect();
        let us: Vec<f64> = up.iterates.iter().take(3).map(|(u, _)| u.values()[0]).collect();
        for (a, b) in vs.iter().zip([0.0, 1.0, 1.5, 1.75]) {
            assert!((a - b).abs() < 1e-3, "{vs:?}");
        }
        for (a, b) in us.iter().zip([2.0, 2.5, 2.75]) {
            assert!((a - b).abs() < 1e-3, "{us:?}");
        }
        let (u_star, v_star) = p1_sequence_limit(&c, 2.0).unwrap();
        assert!(up.limit.0.sup_distance(&u_star).unwrap() < 1e-9);
        assert!(up.limit.1.sup_distance(&v_star).unwrap() < 1e-9);
        let down = monotone_seq_p1(&c, 2.0, Direction::Decreasing, &SequenceOptions::default()).unwrap();
        assert!(down.monotonicity_violation() <= 1e-12);
        assert!(up.limit.1.sup_distance(&down.limit.1).unwrap() < 1e-8);

        let low = CoefficientSet::constant(dom, 1.0, 0.5, 0.5, 0.8, 1.0, 1.0, 1.0, 1.0).unwrap();
        let up = monotone_seq_p1(&low, 2.0, Direction::Increasing, &SequenceOptions::default()).unwrap();
        for (u, v) in &up.iterates {
            assert!(v.values().iter().all(|&x| x == 0.0));
            assert!(u.values().iter().all(|&x| x == 0.8));
        }
    }

    #[test]
    fn c0_reference_value() {
        let dom = interval(3);
        let c = CoefficientSet::constant(dom, 1.0, 0.5, 1.0, 1.0, 0.3, 0.3, 0.5, 1.0).unwrap();
        let c0 = lower_bound_c0(&c);
        let expected = 0.5 / (1.0 + 2f64.sqrt());
        assert!((c0 - expected).abs() < 1e-12, "{c0}");
    }

    #[test]
    fn bounds_hold_for_constant_states() {
        let dom = interval(9);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let e = find_ee(&c, SimState::constant(&dom, 0.8, 0.2).unwrap(), &EeOptions::default()).unwrap();
        let report = bounds_audit(&c, &e).unwrap();
        assert!(report.all_pass());
        assert_eq!(report.checks.len(), 2);
        let c = unit_risk(&dom, 1.0, 0.5);
        let e = find_ee(&c, SimState::constant(&dom, 0.8, 0.2).unwrap(), &EeOptions::default()).unwrap();
        let report = bounds_audit(&c, &e).unwrap();
        assert!(report.all_pass(), "{report:?}");
        assert!(report.c0.unwrap() > 0.0);
    }

    #[test]
    fn masks_and_density() {
        let dom = interval(5);
        let c = CoefficientSet::constant(dom.clone(), 1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let s = ScalarField::from_fn(&dom, |x, _| 0.9 + 0.1 * x).unwrap();
        let ceiling = c.h_root();
        let m = coincidence_mask(&s, &ceiling, 0.03).unwrap();
        assert_eq!(m, vec![false, false, false, true, true]);
        let ind = indicator_mask(&s, &ceiling, 0.03).unwrap();
        assert_eq!(ind, vec![false, false, false, true, true]);
        let mu = mu_density(&c);
        assert!(mu.values().iter().all(|v| (v - 2.0).abs() < 1e-12));
    }
}
