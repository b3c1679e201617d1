//! Disease-free and endemic equilibria with residual and conservation
//! diagnostics.

use thiserror::Error;

use crate::dynamics::{run, CoefficientSet, DynamicsError, RunConfig, SimState};
use crate::grid::{GridError, ScalarField};
use crate::linalg::{gmres, spd_solve, LinalgError, ShiftedOperator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("time march stopped without reaching a steady state (rate {rate:e})")]
    NotSteady { rate: f64 },
}

/// `integral I > ENDEMIC_FRACTION * |Omega|` classifies a state as endemic.
pub const ENDEMIC_FRACTION: f64 = 1e-10;

/// Small but non-negligible infected mass is re-examined by marching further.
const AMBIGUOUS_FRACTION: f64 = 1e-6;

const DFE_TOL: f64 = 1e-12;

/// Solves `(M + d_S K) S = M Lambda`, the discrete form of
/// `d_S Delta S - S + Lambda = 0` with no-flux boundary.
pub fn solve_dfe(c: &CoefficientSet) -> Result<ScalarField, EquilibriumError> {
    let dom = c.domain();
    let m = dom.cell_measures();
    let a = ShiftedOperator::new(dom.stiffness(), c.d_s(), m.to_vec());
    let b: Vec<f64> = m.iter().zip(c.lambda().values()).map(|(w, l)| w * l).collect();
    let (mut s, rep) = spd_solve(&a, &b, DFE_TOL);
    if !rep.converged {
        return Err(LinalgError::SolveFailed {
            iterations: rep.iterations,
            residual: rep.residual,
        }
        .into());
    }
    // The row sums of K cancel, so the integral of S must equal that of Lambda;
    // restore it exactly against solver round-off.
    let total: f64 = m.iter().sum();
    let gap = (b.iter().sum::<f64>() - m.iter().zip(&s).map(|(w, v)| w * v).sum::<f64>()) / total;
    for v in s.iter_mut() {
        *v += gap;
    }
    Ok(ScalarField::new(dom, s)?)
}

/// Pointwise residuals of the steady system,
/// `d_S L S + Lambda - S - beta S^q I^p + gamma I` and
/// `d_I L I + beta S^q I^p - (gamma + eta) I`.
pub fn elliptic_residuals(c: &CoefficientSet, s: &[f64], i: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lap = c.domain().laplacian();
    let ls = lap.mul(s);
    let li = lap.mul(i);
    let (l, g, e) = (c.lambda().values(), c.gamma().values(), c.eta().values());
    let mut rs = Vec::with_capacity(s.len());
    let mut ri = Vec::with_capacity(s.len());
    for k in 0..s.len() {
        let t = c.incidence(k, s[k], i[k]);
        rs.push(c.d_s() * ls[k] + l[k] - s[k] - t + g[k] * i[k]);
        ri.push(c.d_i() * li[k] + t - (g[k] + e[k]) * i[k]);
    }
    (rs, ri)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `|integral (S + eta I) - integral Lambda| / integral Lambda`.
pub fn conservation_gap(c: &CoefficientSet, s: &[f64], i: &[f64]) -> f64 {
    let m = c.domain().cell_measures();
    let (l, e) = (c.lambda().values(), c.eta().values());
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for k in 0..m.len() {
        lhs += m[k] * (s[k] + e[k] * i[k]);
        rhs += m[k] * l[k];
    }
    (lhs - rhs).abs() / rhs
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodInfo {
    pub time_steps: usize,
    pub rejected_steps: usize,
    pub t_end: f64,
    /// Final `max |new - old| / dt` of the time march.
    pub final_rate: f64,
    pub newton_applied: bool,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub s: ScalarField,
    pub i: ScalarField,
    pub residual_s: f64,
    pub residual_i: f64,
    pub conservation_gap: f64,
    pub endemic: bool,
    pub method: MethodInfo,
}

impl EquilibriumResult {
    fn assemble(c: &CoefficientSet, s: ScalarField, i: ScalarField, method: MethodInfo) -> Self {
        let (rs, ri) = elliptic_residuals(c, s.values(), i.values());
        let gap = conservation_gap(c, s.values(), i.values());
        let endemic = infected_mass(c, &i) > ENDEMIC_FRACTION * c.domain().total_measure();
        EquilibriumResult {
            residual_s: sup(&rs),
            residual_i: sup(&ri),
            conservation_gap: gap,
            endemic,
            s,
            i,
            method,
        }
    }

    pub fn residual(&self) -> f64 {
        self.residual_s.max(self.residual_i)
    }
}

fn infected_mass(c: &CoefficientSet, i: &ScalarField) -> f64 {
    c.domain().cell_measures().iter().zip(i.values()).map(|(w, v)| w * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EeOptions {
    pub run: RunConfig,
    pub newton: bool,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Extra marching time per re-examination of a small infected mass.
    pub ambiguity_chunk: f64,
    pub ambiguity_rounds: usize,
}

impl Default for EeOptions {
    fn default() -> Self {
        EeOptions {
            run: RunConfig::steady(1e-9),
            newton: false,
            newton_tol: 1e-10,
            newton_max_iter: 40,
            ambiguity_chunk: 200.0,
            ambiguity_rounds: 100,
        }
    }
}

/// Time-marches to a steady state, then optionally polishes it with damped
/// Newton iteration on the steady system.
pub fn find_ee(
    c: &CoefficientSet,
    init: SimState,
    opts: &EeOptions,
) -> Result<EquilibriumResult, EquilibriumError> {
    let (mut state, summary) = run(init, c, &opts.run)?;
    if opts.run.steady_tol.is_some() && !summary.reached_steady {
        return Err(EquilibriumError::NotSteady { rate: summary.rate });
    }
    let mut method = MethodInfo {
        time_steps: summary.steps,
        rejected_steps: summary.rejected,
        t_end: state.t,
        final_rate: summary.rate,
        newton_applied: false,
        newton_iterations: 0,
    };

    // A slowly dying infection can look steady; keep marching while the
    // infected mass is small and still shrinking.
    let omega = c.domain().total_measure();
    let mut mass = infected_mass(c, &state.i);
    let mut rounds = 0;
    while mass > ENDEMIC_FRACTION * omega && mass <= AMBIGUOUS_FRACTION * omega && rounds < opts.ambiguity_rounds {
        let cfg = RunConfig {
            t_final: Some(state.t + opts.ambiguity_chunk),
            steady_tol: None,
            ..opts.run
        };
        let (next, extra) = run(state, c, &cfg)?;
        state = next;
        method.time_steps += extra.steps;
        method.rejected_steps += extra.rejected;
        method.t_end = state.t;
        method.final_rate = extra.rate;
        let next_mass = infected_mass(c, &state.i);
        rounds += 1;
        if next_mass > 0.99 * mass {
            break;
        }
        mass = next_mass;
    }

    let s = project_onto_balance(c, &state.s, &state.i)?;
    let marched = EquilibriumResult::assemble(c, s, state.i, method.clone());
    if !opts.newton || !marched.endemic || marched.residual() <= opts.newton_tol {
        return Ok(marched);
    }
    match newton_refine(c, &marched.s, &marched.i, opts) {
        Some((s, i, iterations)) => {
            method.newton_applied = true;
            method.newton_iterations = iterations;
            let refined = EquilibriumResult::assemble(c, s, i, method);
            if refined.residual() < marched.residual() {
                Ok(refined)
            } else {
                Ok(marched)
            }
        }
        None => Ok(marched),
    }
}

/// Every steady state satisfies `integral (S + eta I) = integral Lambda`; a
/// marched state misses it by about the steady tolerance. Shifting S by a
/// constant of that size restores the identity without degrading the
/// residual beyond the same order.
fn project_onto_balance(
    c: &CoefficientSet,
    s: &ScalarField,
    i: &ScalarField,
) -> Result<ScalarField, EquilibriumError> {
    let m = c.domain().cell_measures();
    let (l, e) = (c.lambda().values(), c.eta().values());
    let mut defect = 0.0;
    for k in 0..m.len() {
        defect += m[k] * (l[k] - s.values()[k] - e[k] * i.values()[k]);
    }
    let shift = defect / c.domain().total_measure();
    let shifted = s.map(|v| v + shift)?;
    Ok(if shifted.min() > 0.0 { shifted } else { s.clone() })
}

/// Damped Newton on the cell-weighted steady system. Returns `None` when the
/// iteration fails to reach `opts.newton_tol`.
fn newton_refine(
    c: &CoefficientSet,
    s0: &ScalarField,
    i0: &ScalarField,
    opts: &EeOptions,
) -> Option<(ScalarField, ScalarField, usize)> {
    let dom = c.domain();
    let n = dom.len();
    let m = dom.cell_measures();
    let k = dom.stiffness();
    let kdiag = k.diagonal();
    let (g, e, beta) = (c.gamma().values(), c.eta().values(), c.beta().values());
    let (p, q, d_s, d_i) = (c.p(), c.q(), c.d_s(), c.d_i());
    let mut s = s0.values().to_vec();
    let mut i = i0.values().to_vec();

    let weighted = |s: &[f64], i: &[f64]| -> Vec<f64> {
        let (rs, ri) = elliptic_residuals(c, s, i);
        let mut f = Vec::with_capacity(2 * n);
        f.extend(rs.iter().zip(m).map(|(r, w)| r * w));
        f.extend(ri.iter().zip(m).map(|(r, w)| r * w));
        f
    };
    let unweighted_sup = |s: &[f64], i: &[f64]| {
        let (rs, ri) = elliptic_residuals(c, s, i);
        sup(&rs).max(sup(&ri))
    };
    let admissible = |s: &[f64], i: &[f64]| {
        s.iter().all(|&v| v > 0.0 && v.is_finite())
            && i.iter().all(|&v| v.is_finite() && if p < 1.0 { v > 0.0 } else { v >= 0.0 })
    };
    let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();

    for iteration in 1..=opts.newton_max_iter {
        let f = weighted(&s, &i);
        // Partial derivatives of beta S^q I^p.
        let mut ts = vec![0.0; n];
        let mut ti = vec![0.0; n];
        for j in 0..n {
            let sq = s[j].powf(q);
            let ip = if p == 1.0 { i[j] } else { i[j].powf(p) };
            ts[j] = q * beta[j] * s[j].powf(q - 1.0) * ip;
            ti[j] = if p == 1.0 { beta[j] * sq } else { p * beta[j] * sq * i[j].powf(p - 1.0) };
        }
        let jss: Vec<f64> = (0..n).map(|j| -m[j] * (1.0 + ts[j])).collect();
        let jsi: Vec<f64> = (0..n).map(|j| m[j] * (g[j] - ti[j])).collect();
        let jis: Vec<f64> = (0..n).map(|j| m[j] * ts[j]).collect();
        let jii: Vec<f64> = (0..n).map(|j| m[j] * (ti[j] - g[j] - e[j])).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            let (a, b) = x.split_at(n);
            let ka = k.mul(a);
            let kb = k.mul(b);
            for j in 0..n {
                y[j] = -d_s * ka[j] + jss[j] * a[j] + jsi[j] * b[j];
                y[n + j] = -d_i * kb[j] + jis[j] * a[j] + jii[j] * b[j];
            }
        };
        let blocks: Vec<[f64; 4]> = (0..n)
            .map(|j| {
                let a11 = jss[j] - d_s * kdiag[j];
                let a22 = jii[j] - d_i * kdiag[j];
                let det = a11 * a22 - jsi[j] * jis[j];
                [a22 / det, -jsi[j] / det, -jis[j] / det, a11 / det]
            })
            .collect();
        let precond = |r: &[f64], z: &mut [f64]| {
            for j in 0..n {
                let [b11, b12, b21, b22] = blocks[j];
                z[j] = b11 * r[j] + b12 * r[n + j];
                z[n + j] = b21 * r[j] + b22 * r[n + j];
            }
        };
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let (delta, rep) = gmres(apply, precond, &rhs, 60, 1e-8, 3000);
        if !rep.converged || blocks.iter().flatten().any(|v| !v.is_finite()) {
            return None;
        }
        let f_norm = norm(&f);
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1.0 / 1024.0 {
            let s_new: Vec<f64> = (0..n).map(|j| s[j] + lambda * delta[j]).collect();
            let i_new: Vec<f64> = (0..n).map(|j| i[j] + lambda * delta[n + j]).collect();
            if admissible(&s_new, &i_new) && norm(&weighted(&s_new, &i_new)) < f_norm {
                s = s_new;
                i = i_new;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return None;
        }
        if unweighted_sup(&s, &i) <= opts.newton_tol {
            let s = ScalarField::new(dom, s).ok()?;
            let i = ScalarField::new(dom, i).ok()?;
            return Some((s, i, iteration));
        }
    }
    None
}

/// `1e-6 + 2 h^2` with `h` the mesh size, the slack for discrete inequalities.
pub fn grid_tolerance(c: &CoefficientSet) -> f64 {
    let h = c.domain().mesh_size();
    1e-6 + 2.0 * h * h
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignCheck {
    pub name: &'static str,
    pub node: usize,
    /// Signed margin; non-negative when the check holds exactly.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub conservation_gap: f64,
    pub residual_s: f64,
    pub residual_i: f64,
    pub sign_checks: Vec<SignCheck>,
}

impl Diagnostics {
    pub fn all_signs_pass(&self) -> bool {
        self.sign_checks.iter().all(|c| c.passed)
    }
}

/// Conservation gap, residuals and the extremum sign conditions: at a maximum
/// of a component its reaction term is non-negative, at a minimum
/// non-positive.
pub fn diagnostics(c: &CoefficientSet, e: &EquilibriumResult) -> Result<Diagnostics, EquilibriumError> {
    c.check_domain(&e.s)?;
    c.check_domain(&e.i)?;
    let tol = grid_tolerance(c);
    let (s, i) = (e.s.values(), e.i.values());
    let (l, g, eta) = (c.lambda().values(), c.gamma().values(), c.eta().values());
    let react_s = |k: usize| l[k] - s[k] - c.incidence(k, s[k], i[k]) + g[k] * i[k];
    let react_i = |k: usize| c.incidence(k, s[k], i[k]) - (g[k] + eta[k]) * i[k];
    let check = |name, node, margin: f64| SignCheck {
        name,
        node,
        margin,
        passed: margin >= -tol,
    };
    let sign_checks = vec![
        check("S max: reaction >= 0", e.s.argmax(), react_s(e.s.argmax())),
        check("S min: reaction <= 0", e.s.argmin(), -react_s(e.s.argmin())),
        check("I max: reaction >= 0", e.i.argmax(), react_i(e.i.argmax())),
        check("I min: reaction <= 0", e.i.argmin(), -react_i(e.i.argmin())),
    ];
    Ok(Diagnostics {
        conservation_gap: e.conservation_gap,
        residual_s: e.residual_s,
        residual_i: e.residual_i,
        sign_checks,
    })
}
