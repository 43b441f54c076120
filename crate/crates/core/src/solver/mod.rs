//! Barrier interior-point solver for [`StructuredConvexProgram`].
//!
//! The method maximises `f` by minimising `phi_t(x) = -t f(x) + B(x)` for an
//! increasing sequence of barrier weights `t`, where `B` sums the
//! logarithmic barriers of every inequality row:
//!
//! | row                         | barrier                                   | weight |
//! |-----------------------------|-------------------------------------------|--------|
//! | `a.x <= b`, finite bounds   | `-ln(b - a.x)`                            | 1      |
//! | `‖A x + d‖ <= g.x + h`      | `-ln((g.x + h)^2 - ‖A x + d‖^2)`          | 2      |
//! | `x_i x_j >= k`, `k > 0`     | `-ln(x_i x_j - k)` on the branch `x_i > 0`| 2      |
//! | `x_i x_j >= 0`              | `-ln x_i - ln x_j`                        | 2      |
//!
//! Each centering runs damped Newton steps with a backtracking line search
//! that never leaves the strict interior. After centering at weight `t` the
//! objective is within `m / t` of the optimum, `m` being the summed barrier
//! weights; the outer loop stops once that certificate drops below
//! `gap_tol`.

mod linalg;

use linalg::{NewtonSystem, SymMatrix};

use crate::surrogate::{RowRef, StructuredConvexProgram};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Factor applied to the barrier weight after every centering.
    pub mu: f64,
    /// Initial barrier weight; `None` picks `m / max(s, 1e-3)` where `s` sums
    /// the magnitudes of the objective terms at the start point.
    pub t0: Option<f64>,
    /// Target for the certified optimality gap `m / t`.
    pub gap_tol: f64,
    /// Centering stops once half the squared Newton decrement is below this.
    pub newton_tol: f64,
    pub max_newton_steps: usize,
    pub max_outer_iterations: usize,
    /// Sufficient-decrease fraction of the Armijo test.
    pub armijo: f64,
    /// Step shrink factor of the backtracking search.
    pub shrink: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            mu: 10.0,
            t0: None,
            gap_tol: 1e-8,
            newton_tol: 1e-10,
            max_newton_steps: 200,
            max_outer_iterations: 60,
            armijo: 0.25,
            shrink: 0.5,
        }
    }
}

impl SolverSettings {
    fn check(&self) -> Result<(), SolverError> {
        let ok = self.mu > 1.0
            && self.gap_tol > 0.0
            && self.newton_tol > 0.0
            && self.armijo > 0.0
            && self.armijo < 0.5
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.t0.is_none_or(|t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SolverError::Settings)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Certified bound `m / t` on the distance to the optimal value.
    pub gap: f64,
    pub newton_steps: usize,
    pub outer_iterations: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid program: {0}")]
    Program(#[from] crate::surrogate::ProgramError),
    #[error("start point is not strictly feasible: {row} has margin {margin:e}")]
    InfeasibleStart { row: RowRef, margin: f64 },
    #[error("start point violates equality rows by {0:e}")]
    EqualityStart(f64),
    #[error("solver settings out of range")]
    Settings,
}

/// Equality residual tolerated at the start point.
const START_EQUALITY_TOL: f64 = 1e-9;
const MIN_STEP: f64 = 1e-18;
const MAX_REGULARISATION: f64 = 1e-2;

/// Maximises the program's objective from its bundled strictly feasible start.
pub fn solve(prog: &StructuredConvexProgram, settings: &SolverSettings) -> Result<Solution, SolverError> {
    settings.check()?;
    prog.check()?;
    let (margin, row) = prog.interior_margin(&prog.start);
    if !(margin > 0.0) {
        return Err(SolverError::InfeasibleStart { row: row.unwrap_or(RowRef::Lower(0)), margin });
    }
    let residual = prog.equality_residual(&prog.start);
    if residual > START_EQUALITY_TOL {
        return Err(SolverError::EqualityStart(residual));
    }

    let mut state = Barrier::new(prog);
    let m = prog.barrier_parameter();
    let mut x = prog.start.clone();
    let mut t = if m == 0.0 { 1.0 } else { settings.t0.unwrap_or(m / objective_scale(prog, &x).max(1e-3)) };

    let mut newton_steps = 0;
    let mut outer = 0;
    let status = loop {
        outer += 1;
        let centering = state.center(&mut x, t, settings, &mut newton_steps);
        match centering {
            Centering::Failed => break SolveStatus::NumericalFailure,
            Centering::Converged | Centering::Stalled => {}
            Centering::StepLimit => {
                if m / t <= settings.gap_tol {
                    break SolveStatus::MaxIterations;
                }
            }
        }
        if m / t <= settings.gap_tol {
            break SolveStatus::Optimal;
        }
        if outer >= settings.max_outer_iterations {
            break SolveStatus::MaxIterations;
        }
        t *= settings.mu;
    };

    Ok(Solution { objective: prog.objective_value(&x), gap: m / t, x, newton_steps, outer_iterations: outer, status })
}

/// Sum of the absolute values of the objective's terms at `x`; unlike
/// `|f(x)|` it does not vanish when terms cancel.
fn objective_scale(prog: &StructuredConvexProgram, x: &[f64]) -> f64 {
    let o = &prog.objective;
    let mut s = o.constant.abs();
    s += o.linear.iter().map(|&(i, c)| (c * x[i]).abs()).sum::<f64>();
    s += o.quadratic.iter().map(|q| q.eval(x).abs()).sum::<f64>();
    s += o.log.iter().map(|l| (l.weight * l.arg.eval(x).ln_1p()).abs()).sum::<f64>();
    s
}

enum Centering {
    Converged,
    /// Line search could not make progress; the point is as centered as
    /// floating point allows.
    Stalled,
    StepLimit,
    Failed,
}

/// How the Hessian is stored for one program.
struct Layout {
    banded: Option<usize>,
    /// Linear rows and log terms whose rank-one Hessian goes into the
    /// low-rank columns instead of the stored matrix.
    wide_linear: Vec<bool>,
    wide_log: Vec<bool>,
}

impl Layout {
    fn new(prog: &StructuredConvexProgram) -> Self {
        let n = prog.num_vars();
        let span = |ids: &mut dyn Iterator<Item = usize>| -> usize {
            let (mut lo, mut hi) = (usize::MAX, 0usize);
            for i in ids {
                lo = lo.min(i);
                hi = hi.max(i);
            }
            if lo == usize::MAX {
                0
            } else {
                hi - lo
            }
        };
        let mut core = 0usize;
        for q in &prog.objective.quadratic {
            core = core.max(span(&mut q.centers.iter().map(|c| c.0)));
        }
        for r in &prog.norms {
            core = core.max(span(
                &mut r.terms.iter().chain(std::iter::once(&r.bound)).flat_map(|e| e.coeffs.iter().map(|c| c.0)),
            ));
        }
        for h in &prog.hyperbolic {
            core = core.max(h.i.abs_diff(h.j));
        }
        let narrow = core.max(16);
        let lin_spans: Vec<usize> = prog.linear.iter().map(|r| span(&mut r.coeffs.iter().map(|c| c.0))).collect();
        let log_spans: Vec<usize> =
            prog.objective.log.iter().map(|l| span(&mut l.arg.coeffs.iter().map(|c| c.0))).collect();
        let mut bw = core;
        for &s in lin_spans.iter().chain(&log_spans) {
            if s <= narrow {
                bw = bw.max(s);
            }
        }
        let wide_linear: Vec<bool> = lin_spans.iter().map(|&s| s > narrow).collect();
        let wide_log: Vec<bool> = log_spans.iter().map(|&s| s > narrow).collect();
        let wide = wide_linear.iter().chain(&wide_log).filter(|w| **w).count();
        // Banded storage only pays off for long, thin problems.
        if n >= 48 && bw * 4 < n && wide * 8 < n {
            Self { banded: Some(bw), wide_linear, wide_log }
        } else {
            Self { banded: None, wide_linear: vec![false; lin_spans.len()], wide_log: vec![false; log_spans.len()] }
        }
    }
}

/// Quantities of every row at the current iterate.
#[derive(Default)]
struct Cache {
    linear: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    log_arg: Vec<f64>,
    norm_terms: Vec<Vec<f64>>,
    norm_bound: Vec<f64>,
    norm_psi: Vec<f64>,
    hyper_psi: Vec<f64>,
}

/// Directional slopes of every row along a Newton step.
#[derive(Default)]
struct Slopes {
    objective_linear: f64,
    linear: Vec<f64>,
    log: Vec<f64>,
    norm_terms: Vec<Vec<f64>>,
    norm_bound: Vec<f64>,
}

struct Barrier<'a> {
    prog: &'a StructuredConvexProgram,
    layout: Layout,
    hess: SymMatrix,
    cols: Vec<Vec<f64>>,
    grad: Vec<f64>,
    cache: Cache,
}

impl<'a> Barrier<'a> {
    fn new(prog: &'a StructuredConvexProgram) -> Self {
        let n = prog.num_vars();
        let layout = Layout::new(prog);
        let hess = match layout.banded {
            Some(bw) => SymMatrix::banded(n, bw),
            None => SymMatrix::dense(n),
        };
        Self { prog, layout, hess, cols: Vec::new(), grad: vec![0.0; n], cache: Cache::default() }
    }

    fn refresh_cache(&mut self, x: &[f64]) {
        let p = self.prog;
        let c = &mut self.cache;
        c.linear = p.linear.iter().map(|r| r.slack(x)).collect();
        c.lower = p.lower.iter().zip(x).map(|(lo, v)| v - lo).collect();
        c.upper = p.upper.iter().zip(x).map(|(up, v)| up - v).collect();
        c.log_arg = p.objective.log.iter().map(|l| 1.0 + l.arg.eval(x)).collect();
        c.norm_terms = p.norms.iter().map(|r| r.terms.iter().map(|e| e.eval(x)).collect()).collect();
        c.norm_bound = p.norms.iter().map(|r| r.bound.eval(x)).collect();
        c.norm_psi =
            c.norm_terms.iter().zip(&c.norm_bound).map(|(v, s)| s * s - v.iter().map(|a| a * a).sum::<f64>()).collect();
        c.hyper_psi = p.hyperbolic.iter().map(|h| x[h.i] * x[h.j] - h.k).collect();
    }

    /// Gradient and Hessian of `phi_t` at `x` (cache must be current).
    fn assemble(&mut self, x: &[f64], t: f64) {
        let p = self.prog;
        let n = p.num_vars();
        self.hess.clear();
        self.cols.clear();
        self.grad.fill(0.0);
        let Self { hess, cols, grad, cache, layout, .. } = self;

        let mut rank_one = |coeffs: &[(usize, f64)], w: f64, wide: bool, hess: &mut SymMatrix| {
            if wide {
                let mut c = vec![0.0; n];
                let s = w.sqrt();
                for &(i, a) in coeffs {
                    c[i] += s * a;
                }
                cols.push(c);
            } else {
                for (ai, &(i, a)) in coeffs.iter().enumerate() {
                    for &(j, b) in &coeffs[..=ai] {
                        hess.add(i, j, w * a * b);
                    }
                }
            }
        };

        for &(i, c) in &p.objective.linear {
            grad[i] -= t * c;
        }
        for q in &p.objective.quadratic {
            for &(v, c) in &q.centers {
                grad[v] += 2.0 * t * q.weight * (x[v] - c);
                hess.add(v, v, 2.0 * t * q.weight);
            }
        }
        for (k, l) in p.objective.log.iter().enumerate() {
            let s = cache.log_arg[k];
            for &(i, a) in &l.arg.coeffs {
                grad[i] -= t * l.weight * a / s;
            }
            rank_one(&l.arg.coeffs, t * l.weight / (s * s), layout.wide_log[k], hess);
        }
        for (k, r) in p.linear.iter().enumerate() {
            let s = cache.linear[k];
            for &(i, a) in &r.coeffs {
                grad[i] += a / s;
            }
            rank_one(&r.coeffs, 1.0 / (s * s), layout.wide_linear[k], hess);
        }
        for i in 0..n {
            if p.lower[i].is_finite() {
                let s = cache.lower[i];
                grad[i] -= 1.0 / s;
                hess.add(i, i, 1.0 / (s * s));
            }
            if p.upper[i].is_finite() {
                let s = cache.upper[i];
                grad[i] += 1.0 / s;
                hess.add(i, i, 1.0 / (s * s));
            }
        }
        for (k, r) in p.norms.iter().enumerate() {
            // local dense block over the variables this row touches
            let mut idx: Vec<usize> =
                r.terms.iter().chain(std::iter::once(&r.bound)).flat_map(|e| e.coeffs.iter().map(|c| c.0)).collect();
            idx.sort_unstable();
            idx.dedup();
            let m = idx.len();
            let pos = |i: usize| idx.binary_search(&i).unwrap();
            let psi = cache.norm_psi[k];
            let sigma = cache.norm_bound[k];
            let mut gb = vec![0.0; m];
            for &(i, a) in &r.bound.coeffs {
                gb[pos(i)] += a;
            }
            let mut dpsi: Vec<f64> = gb.iter().map(|g| 2.0 * sigma * g).collect();
            let mut d2 = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    d2[a * m + b] = 2.0 * gb[a] * gb[b];
                }
            }
            for (e, &v) in r.terms.iter().zip(&cache.norm_terms[k]) {
                let mut ae = vec![0.0; m];
                for &(i, a) in &e.coeffs {
                    ae[pos(i)] += a;
                }
                for a in 0..m {
                    dpsi[a] -= 2.0 * v * ae[a];
                    for b in 0..m {
                        d2[a * m + b] -= 2.0 * ae[a] * ae[b];
                    }
                }
            }
            for a in 0..m {
                grad[idx[a]] -= dpsi[a] / psi;
                for b in 0..=a {
                    let h = dpsi[a] * dpsi[b] / (psi * psi) - d2[a * m + b] / psi;
                    hess.add(idx[a], idx[b], h);
                }
            }
        }
        for (k, h) in p.hyperbolic.iter().enumerate() {
            let (xi, xj) = (x[h.i], x[h.j]);
            if h.k > 0.0 {
                let psi = cache.hyper_psi[k];
                grad[h.i] -= xj / psi;
                grad[h.j] -= xi / psi;
                hess.add(h.i, h.i, xj * xj / (psi * psi));
                hess.add(h.j, h.j, xi * xi / (psi * psi));
                hess.add(h.i, h.j, xi * xj / (psi * psi) - 1.0 / psi);
            } else {
                grad[h.i] -= 1.0 / xi;
                grad[h.j] -= 1.0 / xj;
                hess.add(h.i, h.i, 1.0 / (xi * xi));
                hess.add(h.j, h.j, 1.0 / (xj * xj));
            }
        }
    }

    fn slopes(&self, dx: &[f64]) -> Slopes {
        let p = self.prog;
        Slopes {
            objective_linear: crate::surrogate::dot(&p.objective.linear, dx),
            linear: p.linear.iter().map(|r| crate::surrogate::dot(&r.coeffs, dx)).collect(),
            log: p.objective.log.iter().map(|l| l.arg.slope(dx)).collect(),
            norm_terms: p.norms.iter().map(|r| r.terms.iter().map(|e| e.slope(dx)).collect()).collect(),
            norm_bound: p.norms.iter().map(|r| r.bound.slope(dx)).collect(),
        }
    }

    /// Largest step keeping linear rows and bounds strictly feasible.
    fn max_linear_step(&self, dx: &[f64], sl: &Slopes) -> f64 {
        let c = &self.cache;
        let mut s = f64::INFINITY;
        for (k, &d) in sl.linear.iter().enumerate() {
            if d > 0.0 {
                s = s.min(c.linear[k] / d);
            }
        }
        for (i, &d) in dx.iter().enumerate() {
            if d < 0.0 && self.prog.lower[i].is_finite() {
                s = s.min(c.lower[i] / -d);
            }
            if d > 0.0 && self.prog.upper[i].is_finite() {
                s = s.min(c.upper[i] / d);
            }
        }
        s
    }

    /// `phi_t(x + s dx) - phi_t(x)`, computed term by term from increments
    /// so that it stays accurate when `t f` is large. `None` if the step
    /// leaves the domain.
    fn phi_change(&self, x: &[f64], dx: &[f64], sl: &Slopes, s: f64, t: f64) -> Option<f64> {
        let p = self.prog;
        let c = &self.cache;
        let neg_log_ratio = |rel: f64| -> Option<f64> {
            if rel > -1.0 {
                Some(-rel.ln_1p())
            } else {
                None
            }
        };
        let mut barrier = 0.0;
        let mut obj = s * sl.objective_linear;
        for q in &p.objective.quadratic {
            let mut d = 0.0;
            for &(v, cv) in &q.centers {
                let step = s * dx[v];
                d += step * (2.0 * (x[v] - cv) + step);
            }
            obj -= q.weight * d;
        }
        for (k, l) in p.objective.log.iter().enumerate() {
            let rel = s * sl.log[k] / c.log_arg[k];
            obj -= l.weight * neg_log_ratio(rel)?;
        }
        for (k, &d) in sl.linear.iter().enumerate() {
            barrier += neg_log_ratio(-s * d / c.linear[k])?;
        }
        for (i, &d) in dx.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            if p.lower[i].is_finite() {
                barrier += neg_log_ratio(s * d / c.lower[i])?;
            }
            if p.upper[i].is_finite() {
                barrier += neg_log_ratio(-s * d / c.upper[i])?;
            }
        }
        for k in 0..p.norms.len() {
            let gs = s * sl.norm_bound[k];
            if !(c.norm_bound[k] + gs > 0.0) {
                return None;
            }
            let mut dpsi = gs * (2.0 * c.norm_bound[k] + gs);
            for (v, a) in c.norm_terms[k].iter().zip(&sl.norm_terms[k]) {
                let st = s * a;
                dpsi -= st * (2.0 * v + st);
            }
            barrier += neg_log_ratio(dpsi / c.norm_psi[k])?;
        }
        for (k, h) in p.hyperbolic.iter().enumerate() {
            let (di, dj) = (s * dx[h.i], s * dx[h.j]);
            if h.k > 0.0 {
                if !(x[h.i] + di > 0.0) {
                    return None;
                }
                let dpsi = di * x[h.j] + dj * x[h.i] + di * dj;
                barrier += neg_log_ratio(dpsi / c.hyper_psi[k])?;
            } else {
                barrier += neg_log_ratio(di / x[h.i])?;
                barrier += neg_log_ratio(dj / x[h.j])?;
            }
        }
        Some(-t * obj + barrier)
    }

    fn factor(&self, reg0: f64) -> Option<linalg::Cholesky> {
        let mut reg = reg0;
        loop {
            if let Some(f) = self.hess.cholesky(reg) {
                return Some(f);
            }
            reg *= 100.0;
            if reg > MAX_REGULARISATION {
                return None;
            }
        }
    }

    fn center(&mut self, x: &mut [f64], t: f64, settings: &SolverSettings, steps: &mut usize) -> Centering {
        for _ in 0..settings.max_newton_steps {
            self.refresh_cache(x);
            self.assemble(x, t);
            let Some(factor) = self.factor(1e-12) else {
                return Centering::Failed;
            };
            let Ok(system) = NewtonSystem::new(factor, &self.cols, &self.prog.equalities) else {
                return Centering::Failed;
            };
            let (dx, nu) = system.direction(&self.grad);
            let slope: f64 = self.grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
            if !slope.is_finite() || dx.iter().any(|v| !v.is_finite()) {
                return Centering::Failed;
            }
            // -(g + A^T nu) . dx = dx^T H dx; the multiplier part of g only
            // contributes rounding noise through A dx
            let normal: f64 = self
                .prog
                .equalities
                .iter()
                .zip(&nu)
                .map(|(row, n)| n * row.coeffs.iter().map(|&(k, a)| a * dx[k]).sum::<f64>())
                .sum();
            let decrement = -slope - normal;
            if decrement / 2.0 <= settings.newton_tol {
                return Centering::Converged;
            }
            if slope >= 0.0 {
                // regularisation swamped the direction; nothing left to gain
                return Centering::Stalled;
            }
            let sl = self.slopes(&dx);
            let mut s = (0.99 * self.max_linear_step(&dx, &sl)).min(1.0);
            let accepted = loop {
                if s < MIN_STEP {
                    break false;
                }
                if let Some(change) = self.phi_change(x, &dx, &sl, s, t) {
                    if change <= settings.armijo * s * slope {
                        break true;
                    }
                }
                s *= settings.shrink;
            };
            *steps += 1;
            if !accepted {
                return Centering::Stalled;
            }
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += s * d;
            }
        }
        Centering::StepLimit
    }
}
