//! Sparse symmetric positive-definite solves and the principal generalized
//! eigenpair.

use thiserror::Error;

use crate::grid::SparseOperator;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("linear solve did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolveFailed { iterations: usize, residual: f64 },
    #[error("eigen iteration did not converge: residual {residual:e} after {iterations} iterations")]
    EigenNotConverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: operator is {expected}, vector is {got}")]
    Dimension { expected: usize, got: usize },
}

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        SparseOperator::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        SparseOperator::apply(self, x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        SparseOperator::diagonal(self)
    }
}

/// `diag(shift) + scale * base`, applied without forming the sum.
#[derive(Debug, Clone)]
pub struct ShiftedOperator<'a> {
    base: &'a SparseOperator,
    scale: f64,
    shift: Vec<f64>,
}

impl<'a> ShiftedOperator<'a> {
    pub fn new(base: &'a SparseOperator, scale: f64, shift: Vec<f64>) -> Self {
        assert_eq!(base.dim(), shift.len());
        ShiftedOperator { base, scale, shift }
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }
}

impl LinearOperator for ShiftedOperator<'_> {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.base.apply(x, y);
        for ((yi, xi), s) in y.iter_mut().zip(x).zip(&self.shift) {
            *yi = self.scale * *yi + s * xi;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.base
            .diagonal()
            .iter()
            .zip(&self.shift)
            .map(|(d, s)| self.scale * d + s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final relative residual `||A x - b|| / ||b||` (absolute when `b = 0`).
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// Stop once `||r|| <= abs_tol` even if the relative target is not met.
    pub abs_tol: f64,
    /// Defaults to `10 N`.
    pub max_iter: Option<usize>,
}

impl CgOptions {
    pub fn relative(rel_tol: f64) -> Self {
        CgOptions {
            rel_tol,
            abs_tol: 0.0,
            max_iter: None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn spd_solve<A: LinearOperator + ?Sized>(a: &A, b: &[f64], tol: f64) -> (Vec<f64>, SolveReport) {
    spd_solve_from(a, b, vec![0.0; b.len()], &CgOptions::relative(tol))
}

/// Jacobi-preconditioned conjugate gradients from `x0`.
///
/// The residual is recomputed from scratch before convergence is declared, so
/// the reported residual is the true one.
pub fn spd_solve_from<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    mut x: Vec<f64>,
    opts: &CgOptions,
) -> (Vec<f64>, SolveReport) {
    let n = a.dim();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let b_norm = norm2(b);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let target = (opts.rel_tol * b_norm).max(opts.abs_tol);

    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], scratch: &mut [f64]| {
        a.apply(x, scratch);
        for i in 0..n {
            r[i] = b[i] - scratch[i];
        }
        norm2(r)
    };

    let mut iterations = 0;
    let mut res = true_residual(&x, &mut r, &mut ap);
    'restart: loop {
        if res <= target {
            return (
                x,
                SolveReport {
                    iterations,
                    residual: res / scale,
                    converged: true,
                },
            );
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            a.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                break 'restart;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm2(&r) <= target {
                res = true_residual(&x, &mut r, &mut ap);
                continue 'restart;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        break;
    }
    let res = true_residual(&x, &mut r, &mut ap);
    (
        x,
        SolveReport {
            iterations,
            residual: res / scale,
            converged: res <= target,
        },
    )
}

/// Forward Gauss-Seidel sweeps for `A x = b` with `A = diag(s) + c K`, where
/// `K` has non-positive off-diagonals and `c >= 0` (an M-matrix).
///
/// The iterate is first clipped at zero; with `b >= 0` every update is then a
/// sum of non-negative terms, so the result is non-negative in floating point.
pub fn gauss_seidel_nonnegative(a: &ShiftedOperator<'_>, b: &[f64], x: &mut [f64], sweeps: usize) {
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
    let n = a.dim();
    for _ in 0..sweeps {
        for i in 0..n {
            let mut off = 0.0;
            let mut diag = a.shift[i];
            for (j, v) in a.base.row(i) {
                if j == i {
                    diag += a.scale * v;
                } else {
                    off += a.scale * v * x[j];
                }
            }
            x[i] = (b[i] - off) / diag;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Non-negative, sup-norm one.
    pub vector: Vec<f64>,
    /// `||A v - mu B v|| / ||B v||`.
    pub residual: f64,
    pub iterations: usize,
    /// Set when `A` annihilates the iterate (e.g. `A = 0`); the value is then 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Bound on the total number of outer iterations.
    pub max_iter: usize,
    /// Relative tolerance of the inner SPD solves.
    pub inner_tol: f64,
    /// Accelerate with shifted inverse iteration once a bracket is available.
    pub shifted: bool,
    /// Plain iterations before the first shift.
    pub warmup: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            max_iter: 200_000,
            inner_tol: 1e-13,
            shifted: true,
            warmup: 20,
        }
    }
}

/// `tau B - A`.
struct Pencil<'a, A: ?Sized, B: ?Sized> {
    a: &'a A,
    b: &'a B,
    tau: f64,
}

impl<A: LinearOperator + ?Sized, B: LinearOperator + ?Sized> LinearOperator for Pencil<'_, A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut ax = vec![0.0; x.len()];
        self.a.apply(x, &mut ax);
        self.b.apply(x, y);
        for (yi, axi) in y.iter_mut().zip(&ax) {
            *yi = self.tau * *yi - axi;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let da = self.a.diagonal();
        self.b
            .diagonal()
            .iter()
            .zip(&da)
            .map(|(db, da)| self.tau * db - da)
            .collect()
    }
}

/// Largest `mu` with `A v = mu B v`.
///
/// `B` must be a symmetric positive definite M-matrix and `A` symmetric and
/// entrywise non-negative with `B^{-1} A` irreducible, so the principal
/// eigenvector is positive. Starts from the constant vector with plain power
/// iteration on `B^{-1} A`. When enabled, the Collatz-Wielandt bracket of the
/// plain iterates supplies a shift `tau` above `mu`, and the iteration
/// continues on `(tau B - A)^{-1} B`, again an inverse M-matrix times a
/// non-negative matrix. A shift that turns out too small shows up as a sign
/// change in the iterate and is backed off.
pub fn generalized_principal_eigenpair<A, B>(
    a: &A,
    b: &B,
    tol: f64,
) -> Result<EigenPair, LinalgError>
where
    A: LinearOperator + ?Sized,
    B: LinearOperator + ?Sized,
{
    generalized_principal_eigenpair_with(a, b, tol, &EigenOptions::default())
}

struct Probe {
    mu: f64,
    residual: f64,
}

fn probe<A, B>(a: &A, b: &B, v: &[f64]) -> Probe
where
    A: LinearOperator + ?Sized,
    B: LinearOperator + ?Sized,
{
    let n = v.len();
    let mut av = vec![0.0; n];
    let mut bv = vec![0.0; n];
    a.apply(v, &mut av);
    b.apply(v, &mut bv);
    let mu = dot(v, &av) / dot(v, &bv);
    let r: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x - mu * y).collect();
    Probe {
        mu,
        residual: norm2(&r) / norm2(&bv),
    }
}

fn sup_normalize(z: &[f64]) -> Option<Vec<f64>> {
    let peak = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return None;
    }
    // Orient so that the largest entry is positive.
    let sign = if z.contains(&peak) { 1.0 } else { -1.0 };
    Some(z.iter().map(|x| sign * x / peak).collect())
}

pub fn generalized_principal_eigenpair_with<A, B>(
    a: &A,
    b: &B,
    tol: f64,
    opts: &EigenOptions,
) -> Result<EigenPair, LinalgError>
where
    A: LinearOperator + ?Sized,
    B: LinearOperator + ?Sized,
{
    let n = a.dim();
    if b.dim() != n {
        return Err(LinalgError::Dimension {
            expected: n,
            got: b.dim(),
        });
    }
    let cg = CgOptions::relative(opts.inner_tol);
    let mut v = vec![1.0; n];
    let mut plain_guess = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    // Largest Rayleigh quotient seen: a lower bound for the principal value.
    let mut lower = f64::NEG_INFINITY;
    let mut margin = 1.0;
    let done = |v: Vec<f64>, p: &Probe, iterations| EigenPair {
        value: p.mu,
        vector: v,
        residual: p.residual,
        iterations,
        degenerate: false,
    };

    while iterations < opts.max_iter {
        // Plain power steps; the last one also yields an upper bound.
        let mut upper = f64::INFINITY;
        let plain_steps = if opts.shifted { opts.warmup.max(1) } else { opts.max_iter };
        for _ in 0..plain_steps {
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let mut av = vec![0.0; n];
            a.apply(&v, &mut av);
            if av.iter().all(|&x| x == 0.0) {
                return Ok(EigenPair {
                    value: 0.0,
                    vector: vec![1.0; n],
                    residual: 0.0,
                    iterations,
                    degenerate: true,
                });
            }
            let (z, report) = spd_solve_from(b, &av, std::mem::take(&mut plain_guess), &cg);
            if !report.converged {
                return Err(LinalgError::SolveFailed {
                    iterations: report.iterations,
                    residual: report.residual,
                });
            }
            let v_peak = v.iter().fold(0.0f64, |m, x| m.max(*x));
            upper = z
                .iter()
                .zip(&v)
                .filter(|(_, &vi)| vi > 1e-8 * v_peak)
                .map(|(zi, vi)| zi / vi)
                .fold(f64::NEG_INFINITY, f64::max);
            v = sup_normalize(&z).ok_or(LinalgError::EigenNotConverged { iterations, residual })?;
            let p = probe(a, b, &v);
            residual = p.residual;
            lower = lower.max(p.mu);
            plain_guess = v.iter().map(|x| x / p.mu).collect();
            if p.residual <= tol {
                return Ok(done(v, &p, iterations));
            }
        }
        if !opts.shifted || iterations >= opts.max_iter {
            continue;
        }

        let spread = (upper - lower).max(1e-10 * lower.abs()).max(f64::MIN_POSITIVE);
        let pencil = Pencil {
            a,
            b,
            tau: upper.max(lower) + margin * spread,
        };
        let mut w_guess = vec![0.0; n];
        let mut current = v.clone();
        for _ in 0..10 {
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let mut bv = vec![0.0; n];
            b.apply(&current, &mut bv);
            let (w, report) = spd_solve_from(&pencil, &bv, std::mem::take(&mut w_guess), &cg);
            let next = if report.residual <= 1e-6 { sup_normalize(&w) } else { None };
            let Some(next) = next.filter(|x| x.iter().all(|&e| e >= -1e-12)) else {
                // Shift below the principal value: back off and resume plain steps.
                margin *= 10.0;
                break;
            };
            let p = probe(a, b, &next);
            residual = p.residual;
            w_guess = next.iter().map(|x| x / (pencil.tau - p.mu)).collect();
            current = next;
            if p.residual <= tol && p.mu >= lower - 1e-12 * lower.abs() {
                return Ok(done(current, &p, iterations));
            }
            lower = lower.max(p.mu);
            v = current.clone();
        }
        plain_guess = v.iter().map(|x| x / lower).collect();
    }
    Err(LinalgError::EigenNotConverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Restarted GMRES with right preconditioning for a general square system.
///
/// `apply(x, y)` computes `y = A x` and `precond(r, z)` an approximation
/// `z ~ A^{-1} r`. Convergence is measured on the true residual relative to
/// `||b||`.
pub fn gmres(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    restart: usize,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    let restart = restart.clamp(1, n.max(1));
    let b_norm = norm2(b);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut scratch = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let beta = norm2(&r);
        if beta <= tol * scale || iterations >= max_iter {
            return (
                x,
                SolveReport {
                    iterations,
                    residual: beta / scale,
                    converged: beta <= tol * scale,
                },
            );
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut precond_basis: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut hess: Vec<Vec<f64>> = Vec::with_capacity(restart);
        let mut cs: Vec<f64> = Vec::with_capacity(restart);
        let mut sn: Vec<f64> = Vec::with_capacity(restart);
        let mut g = vec![beta];
        for j in 0..restart {
            iterations += 1;
            let mut z = vec![0.0; n];
            precond(&basis[j], &mut z);
            let mut w = vec![0.0; n];
            apply(&z, &mut w);
            precond_basis.push(z);
            // Modified Gram-Schmidt.
            let mut col = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[i] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let wn = norm2(&w);
            col[j + 1] = wn;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let rho = col[j].hypot(col[j + 1]);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[j] / rho, col[j + 1] / rho) };
            cs.push(c);
            sn.push(s);
            col[j] = rho;
            col[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            hess.push(col);
            let done = g[j + 1].abs() <= tol * scale || iterations >= max_iter || wn == 0.0;
            if !done {
                basis.push(w.iter().map(|v| v / wn).collect());
            }
            if done || j + 1 == restart {
                let k = j + 1;
                let mut y = vec![0.0; k];
                for i in (0..k).rev() {
                    let mut acc = g[i];
                    for l in i + 1..k {
                        acc -= hess[l][i] * y[l];
                    }
                    y[i] = acc / hess[i][i];
                }
                for (yi, z) in y.iter().zip(&precond_basis) {
                    for (xk, zk) in x.iter_mut().zip(z) {
                        *xk += yi * zk;
                    }
                }
                break;
            }
        }
        apply(&x, &mut scratch);
        for i in 0..n {
            r[i] = b[i] - scratch[i];
        }
    }
}
