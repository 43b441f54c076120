//! Checks shared by the integration tests and the acceptance report.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use uav_secrecy::driver::line_segment_trajectory;
use uav_secrecy::model::{
    dispersion, q_inv, secrecy_rate_lb, PowerProfile, RateModel, ScenarioConfig, SlackState, Trajectory,
};
use uav_secrecy::solver::{solve, SolveStatus, SolverSettings};
use uav_secrecy::surrogate::{
    build_power_subproblem, build_trajectory_subproblem, init_slacks, relaxed_objective, surrogate_value_p,
    surrogate_value_q, AffineExpr, ExpansionPoint, Iterate, LogTerm, QuadraticTerm, StructuredConvexProgram, Z_MIN,
};

pub const ORACLE_CSV: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/formula_oracle.csv");

// ---------------------------------------------------------------- formulas

pub struct OracleReport {
    pub rows: usize,
    pub worst_q_inv_abs: f64,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

/// Compares the closed forms with the high-precision table.
pub fn formula_oracle() -> OracleReport {
    let mut rdr = csv::Reader::from_path(ORACLE_CSV).expect("oracle table");
    let mut rep = OracleReport { rows: 0, worst_q_inv_abs: 0.0, worst_rel: 0.0, failures: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let num = |i: usize| rec[i].parse::<f64>().unwrap();
        let want = num(6);
        rep.rows += 1;
        match &rec[0] {
            "q_inv" => {
                let got = q_inv(num(1)).unwrap();
                let err = (got - want).abs();
                rep.worst_q_inv_abs = rep.worst_q_inv_abs.max(err);
                if err > 1e-9 {
                    rep.failures.push(format!("q_inv({}) = {got}, want {want}", &rec[1]));
                }
            }
            name => {
                let got = if name == "dispersion" {
                    dispersion(num(1)).unwrap()
                } else {
                    let mut cfg = ScenarioConfig::reference();
                    cfg.blocklength = num(3);
                    cfg.eps_b = num(4);
                    cfg.eps_e = num(5);
                    secrecy_rate_lb(num(1), num(2), &cfg).unwrap()
                };
                let ok = if want == 0.0 {
                    got == 0.0
                } else {
                    let rel = ((got - want) / want).abs();
                    rep.worst_rel = rep.worst_rel.max(rel);
                    rel <= 1e-6
                };
                if !ok {
                    rep.failures
                        .push(format!("{name}{:?} = {got}, want {want}", &rec.iter().collect::<Vec<_>>()[1..6]));
                }
            }
        }
    }
    rep
}

// ---------------------------------------------------------------- scenarios

/// A random trajectory obeying the mobility constraints: the straight
/// segment plus a few random sine bumps, scaled down until every step fits.
pub fn random_trajectory(cfg: &ScenarioConfig, rng: &mut StdRng) -> Trajectory {
    let base = line_segment_trajectory(cfg).unwrap();
    let n = cfg.n_slots;
    let mut dev = vec![[0.0f64; 2]; n];
    for _ in 0..3 {
        let k = rng.gen_range(1..=4) as f64;
        let (ax, ay) = (rng.gen_range(-300.0..300.0), rng.gen_range(-150.0..150.0));
        for (i, d) in dev.iter_mut().enumerate() {
            let s = (std::f64::consts::PI * k * i as f64 / (n - 1) as f64).sin();
            d[0] += ax * s;
            d[1] += ay * s;
        }
    }
    let build = |a: f64| {
        Trajectory::new(base.points.iter().zip(&dev).map(|(p, d)| [p[0] + a * d[0], p[1] + a * d[1]]).collect())
    };
    let fits = |t: &Trajectory| {
        t.points.windows(2).all(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) <= cfg.step_limit() * (1.0 - 1e-9))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if fits(&build(1.0)) {
        lo = 1.0;
    } else {
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if fits(&build(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let t = build(lo * rng.gen_range(0.0..=1.0));
    let mut pts = t.points;
    pts[0] = cfg.q_init.horizontal();
    pts[n - 1] = cfg.q_final.horizontal();
    Trajectory::new(pts)
}

/// Random powers in `[0, p_max]` with mean at most `p_bar`; some slots off.
pub fn random_power(cfg: &ScenarioConfig, rng: &mut StdRng) -> PowerProfile {
    let n = cfg.n_slots;
    let mut p: Vec<f64> =
        (0..n).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..=cfg.p_max) }).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    if mean > cfg.p_bar {
        for v in &mut p {
            *v *= cfg.p_bar / mean;
        }
    }
    PowerProfile::new(p)
}

/// Random expansion point: tight slacks, with some `z` raised above tight.
pub fn random_expansion(cfg: &ScenarioConfig, rng: &mut StdRng) -> ExpansionPoint {
    let traj = random_trajectory(cfg, rng);
    let pw = random_power(cfg, rng);
    let mut s = init_slacks(&traj, &pw, cfg).unwrap();
    for z in s.z_b.iter_mut().chain(s.z_e.iter_mut()) {
        if rng.gen_bool(0.3) {
            *z *= rng.gen_range(1.0..1.5);
        }
    }
    ExpansionPoint::new(traj, pw, &s).unwrap()
}

pub fn at_expansion(ep: &ExpansionPoint) -> Iterate {
    Iterate {
        trajectory: ep.q_hat.clone(),
        power: ep.p_hat.clone(),
        slacks: SlackState {
            u_b: ep.u_hat_b.clone(),
            u_e: ep.u_hat_e.clone(),
            z_b: ep.z_hat_b.clone(),
            z_e: ep.z_hat_e.clone(),
            l_b: None,
            l_e: None,
        },
    }
}

// ---------------------------------------------------------------- surrogates

pub struct SurrogateReport {
    pub worst_tangency: f64,
    /// Largest `|fd_sur - fd_exact| / (1e-4 |fd_exact| + 1e-9)`; at most 1 passes.
    pub worst_gradient_ratio: f64,
    pub worst_bound_excess: f64,
    pub bound_points: usize,
    pub worst_program_mismatch: f64,
}

/// Vector view of the variables both objectives share: x, y, P, u_e, z_b, z_e.
fn perturb(it: &Iterate, var: usize, slot: usize, h: f64) -> Iterate {
    let mut p = it.clone();
    match var {
        0 => p.trajectory.points[slot][0] += h,
        1 => p.trajectory.points[slot][1] += h,
        2 => p.power.p[slot] += h,
        3 => p.slacks.u_e[slot] += h,
        4 => p.slacks.z_b[slot] += h,
        _ => p.slacks.z_e[slot] += h,
    }
    p
}

/// Tangency, gradient agreement and the global lower bound, for `n_eps`
/// random expansion points and `n_points` random feasible points.
pub fn surrogate_properties(cfg: &ScenarioConfig, n_eps: usize, n_points: usize, seed: u64) -> SurrogateReport {
    let model = RateModel::FiniteBlocklength;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rep = SurrogateReport {
        worst_tangency: 0.0,
        worst_gradient_ratio: 0.0,
        worst_bound_excess: f64::NEG_INFINITY,
        bound_points: 0,
        worst_program_mismatch: 0.0,
    };
    let eps: Vec<ExpansionPoint> = (0..n_eps).map(|_| random_expansion(cfg, &mut rng)).collect();
    let h = 1e-6;
    for ep in &eps {
        let here = at_expansion(ep);
        let exact = relaxed_objective(&here.trajectory, &here.power, &here.slacks, cfg, model).unwrap();
        let sq = surrogate_value_q(ep, &here, &ep.p_hat, cfg, model).unwrap();
        let sp = surrogate_value_p(&ep.q_hat, ep, &here, cfg, model).unwrap();
        rep.worst_tangency = rep.worst_tangency.max((sq - exact).abs()).max((sp - exact).abs());

        for slot in 0..cfg.n_slots {
            for var in 0..6 {
                let hh = if var < 2 { h * 100.0 } else { h };
                let up = perturb(&here, var, slot, hh);
                let dn = perturb(&here, var, slot, -hh);
                if var == 2 && dn.power.p[slot] < 0.0 || var == 3 && dn.slacks.u_e[slot] < 0.0 {
                    continue;
                }
                let fd = |f: &dyn Fn(&Iterate) -> f64| (f(&up) - f(&dn)) / (2.0 * hh);
                let g_exact = fd(&|it| relaxed_objective(&it.trajectory, &it.power, &it.slacks, cfg, model).unwrap());
                let g_sur = if var == 2 {
                    fd(&|it| surrogate_value_p(&ep.q_hat, ep, it, cfg, model).unwrap())
                } else {
                    fd(&|it| surrogate_value_q(ep, it, &ep.p_hat, cfg, model).unwrap())
                };
                let ratio = (g_sur - g_exact).abs() / (1e-4 * g_exact.abs() + 1e-9);
                rep.worst_gradient_ratio = rep.worst_gradient_ratio.max(ratio);
            }
        }
    }
    for i in 0..n_points {
        let ep = &eps[i % eps.len()];
        let traj = random_trajectory(cfg, &mut rng);
        let pw = random_power(cfg, &mut rng);
        let tight = init_slacks(&traj, &pw, cfg).unwrap();
        let widen = |v: &[f64], rng: &mut StdRng| v.iter().map(|x| x * rng.gen_range(1.0..2.0) + Z_MIN).collect();
        let slacks = SlackState {
            u_b: tight.u_b.clone(),
            u_e: widen(&tight.u_e, &mut rng),
            z_b: widen(&tight.z_b, &mut rng),
            z_e: widen(&tight.z_e, &mut rng),
            l_b: tight.l_b.clone(),
            l_e: tight.l_e.clone(),
        };
        // trajectory surrogate: moves q under the expansion power
        let pt_q = Iterate { trajectory: traj.clone(), power: ep.p_hat.clone(), slacks: slacks.clone() };
        let exact_q = relaxed_objective(&traj, &ep.p_hat, &slacks, cfg, model).unwrap();
        let sur_q = surrogate_value_q(ep, &pt_q, &ep.p_hat, cfg, model).unwrap();
        // power surrogate: moves P on the expansion trajectory
        let pt_p = Iterate { trajectory: ep.q_hat.clone(), power: pw.clone(), slacks: slacks.clone() };
        let exact_p = relaxed_objective(&ep.q_hat, &pw, &slacks, cfg, model).unwrap();
        let sur_p = surrogate_value_p(&ep.q_hat, ep, &pt_p, cfg, model).unwrap();
        rep.worst_bound_excess = rep.worst_bound_excess.max(sur_q - exact_q).max(sur_p - exact_p);
        rep.bound_points += 1;

        if i < n_eps {
            let prog_q = build_trajectory_subproblem(ep, &ep.p_hat, cfg, model).unwrap();
            let prog_p = build_power_subproblem(&ep.q_hat, ep, cfg, model).unwrap();
            let vq = prog_q.program.objective_value(&prog_q.encode(&pt_q));
            let vp = prog_p.program.objective_value(&prog_p.encode(&pt_p));
            rep.worst_program_mismatch = rep.worst_program_mismatch.max((vq - sur_q).abs()).max((vp - sur_p).abs());
        }
    }
    rep
}

// ---------------------------------------------------------------- solver oracle

pub struct SolverReport {
    pub instances: usize,
    pub worst_gap: f64,
    pub worst_violation: f64,
    pub non_optimal: usize,
    pub failures: Vec<String>,
}

/// Maximiser of a concave function on `[lo, hi]` by golden-section search,
/// seeded by a coarse grid.
pub fn golden_max(lo: f64, hi: f64, f: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let steps = 64;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        let v = f(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    let w = (hi - lo) / steps as f64;
    let (mut a, mut b) = ((best.1 - w).max(lo), (best.1 + w).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc < fd {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        } else {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v >= best.0 {
        (v, x)
    } else {
        best
    }
}

/// Maximum of a jointly concave `f(x, y)` over `{lo <= x <= hi, y in
/// fibre(x)}`, where the fibre is an interval (or empty) and the set is
/// convex. The inner maximum is concave in `x`, so nested line searches
/// give the optimum to rounding accuracy.
pub fn max_over_fibres(
    lo: f64,
    hi: f64,
    fibre: &dyn Fn(f64) -> Option<(f64, f64)>,
    f: &dyn Fn(f64, f64) -> f64,
) -> f64 {
    let ok = |x: f64| fibre(x).is_some_and(|(a, b)| a <= b);
    let scan = 4000;
    let xs: Vec<f64> = (0..=scan).map(|i| lo + (hi - lo) * i as f64 / scan as f64).filter(|&x| ok(x)).collect();
    let (Some(&first), Some(&last)) = (xs.first(), xs.last()) else {
        return f64::NEG_INFINITY;
    };
    let edge = |inside: f64, outside: f64| {
        let (mut i, mut o) = (inside, outside);
        for _ in 0..100 {
            let m = 0.5 * (i + o);
            if ok(m) {
                i = m;
            } else {
                o = m;
            }
        }
        i
    };
    let step = (hi - lo) / scan as f64;
    let a = if ok(lo) { lo } else { edge(first, (first - step).max(lo)) };
    let b = if ok(hi) { hi } else { edge(last, (last + step).min(hi)) };
    let inner = |x: f64| match fibre(x) {
        Some((ya, yb)) if ya <= yb => golden_max(ya, yb, &|y| f(x, y)).0,
        _ => f64::NEG_INFINITY,
    };
    golden_max(a, b, &inner).0
}

fn quad(weight: f64, centers: Vec<(usize, f64)>) -> QuadraticTerm {
    QuadraticTerm { weight, centers, offset: 0.0 }
}

fn intersect(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.max(b.0), a.1.min(b.1))
}

/// A random program of one of four families together with its brute-force
/// optimal value.
pub fn random_instance(family: usize, rng: &mut StdRng) -> (StructuredConvexProgram, f64) {
    match family {
        // separable: box-constrained quadratic + log + linear terms
        0 => {
            let n = rng.gen_range(1..=10);
            let mut p = StructuredConvexProgram::new(n);
            let mut best = 0.0;
            for i in 0..n {
                let lo = rng.gen_range(-2.0..1.0);
                let hi = lo + rng.gen_range(0.2..3.0);
                p.lower[i] = lo;
                p.upper[i] = hi;
                p.start[i] = lo + (hi - lo) * rng.gen_range(0.2..0.8);
                let a = rng.gen_range(0.0..2.0);
                let c = rng.gen_range(-3.0..3.0);
                let b = rng.gen_range(-2.0..2.0);
                let w = if rng.gen_bool(0.5) { rng.gen_range(0.0..3.0) } else { 0.0 };
                let k = rng.gen_range(0.5..20.0);
                let shift = 2.5 * k; // keeps 1 + k (x + 2.5) > 0 on the box
                p.objective.quadratic.push(quad(a, vec![(i, c)]));
                p.objective.linear.push((i, b));
                if w > 0.0 {
                    p.objective.log.push(LogTerm { weight: w, arg: AffineExpr::new(vec![(i, k)], shift) });
                }
                best += golden_max(lo, hi, &|x| -a * (x - c).powi(2) + b * x + w * (k * x + shift).ln_1p()).0;
            }
            (p, best)
        }
        // 2-D: quadratic + log objective, a disc and random cuts
        1 => {
            let mut p = StructuredConvexProgram::new(2);
            let (cx, cy) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let a = rng.gen_range(0.2..2.0);
            p.objective.quadratic.push(quad(a, vec![(0, cx), (1, cy)]));
            let (lx, ly) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let w = rng.gen_range(0.0..2.0);
            p.objective.log.push(LogTerm { weight: w, arg: AffineExpr::new(vec![(0, lx), (1, ly)], 0.0) });
            p.lower = vec![0.0, 0.0];
            p.upper = vec![4.0, 4.0];
            let r = rng.gen_range(1.0..3.0);
            let (ox, oy) = (rng.gen_range(1.5..2.5), rng.gen_range(1.5..2.5));
            p.add_norm(
                vec![AffineExpr::new(vec![(0, 1.0)], -ox), AffineExpr::new(vec![(1, 1.0)], -oy)],
                AffineExpr::new(vec![], r),
            );
            let mut cuts = Vec::new();
            for _ in 0..rng.gen_range(0..3) {
                let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let rhs = gx * ox + gy * oy + rng.gen_range(0.2..1.0);
                p.add_le(vec![(0, gx), (1, gy)], rhs);
                cuts.push((gx, gy, rhs));
            }
            p.start = vec![ox, oy];
            let fibre = |x: f64| {
                let h2 = r * r - (x - ox).powi(2);
                if h2 < 0.0 {
                    return None;
                }
                let mut iv = intersect((0.0, 4.0), (oy - h2.sqrt(), oy + h2.sqrt()));
                for &(gx, gy, rhs) in &cuts {
                    let t = rhs - gx * x;
                    iv = if gy > 0.0 {
                        intersect(iv, (f64::NEG_INFINITY, t / gy))
                    } else if gy < 0.0 {
                        intersect(iv, (t / gy, f64::INFINITY))
                    } else if t < 0.0 {
                        return None;
                    } else {
                        iv
                    };
                }
                Some(iv)
            };
            let f = |x: f64, y: f64| -a * ((x - cx).powi(2) + (y - cy).powi(2)) + w * (lx * x + ly * y).ln_1p();
            (p, max_over_fibres(0.0, 4.0, &fibre, &f))
        }
        // 2-D: hyperbolic region with a linear cut
        2 => {
            let mut p = StructuredConvexProgram::new(2);
            let k = rng.gen_range(0.5..4.0);
            p.add_hyperbolic(0, 1, k);
            p.upper = vec![5.0, 5.0];
            let (cx, cy) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
            let a = rng.gen_range(0.2..2.0);
            p.objective.quadratic.push(quad(a, vec![(0, cx), (1, cy)]));
            let lin = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            p.objective.linear = vec![(0, lin.0), (1, lin.1)];
            let rhs = rng.gen_range(6.0..9.0);
            p.add_le(vec![(0, 1.0), (1, 1.0)], rhs);
            p.start = vec![(k.sqrt() * 1.5).min(4.5), (k.sqrt() * 1.5).min(4.5)];
            let fibre = |x: f64| (x > 0.0).then(|| intersect((k / x, 5.0), (0.0, rhs - x)));
            let f = |x: f64, y: f64| -a * ((x - cx).powi(2) + (y - cy).powi(2)) + lin.0 * x + lin.1 * y;
            (p, max_over_fibres(0.0, 5.0, &fibre, &f))
        }
        // 3-D with an equality row: x0 + x1 + x2 = s eliminates x2
        _ => {
            let mut p = StructuredConvexProgram::new(3);
            let s = rng.gen_range(2.0..5.0);
            p.add_eq(vec![(0, 1.0), (1, 1.0), (2, 1.0)], s);
            p.lower = vec![0.0, 0.0, 0.0];
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let a = rng.gen_range(0.2..2.0);
            p.objective.quadratic.push(quad(a, vec![(0, c[0]), (1, c[1]), (2, c[2])]));
            let k = rng.gen_range(0.1..0.5) * s * s / 9.0;
            p.add_hyperbolic(0, 1, k);
            let r = rng.gen_range(0.5..1.5) * s;
            p.add_norm(
                vec![AffineExpr::new(vec![(0, 1.0)], 0.0), AffineExpr::new(vec![(2, 1.0)], 0.0)],
                AffineExpr::new(vec![], r),
            );
            p.start = vec![s / 3.0, s / 3.0, s / 3.0];
            // for fixed x0: x1 >= k / x0, x2 = s - x0 - x1 >= 0, |x2| <= sqrt(r^2 - x0^2)
            let fibre = |x: f64| {
                let h2 = r * r - x * x;
                (x > 0.0 && h2 >= 0.0).then(|| {
                    let iv = intersect((k / x, s - x), (s - x - h2.sqrt(), s - x + h2.sqrt()));
                    intersect(iv, (0.0, f64::INFINITY))
                })
            };
            let f = |x: f64, y: f64| {
                let z = s - x - y;
                -a * ((x - c[0]).powi(2) + (y - c[1]).powi(2) + (z - c[2]).powi(2))
            };
            (p, max_over_fibres(0.0, s, &fibre, &f))
        }
    }
}

/// Solves `n` random instances (cycling through the families) and compares
/// with the brute-force optimum.
pub fn solver_oracle(n: usize, seed: u64) -> SolverReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut rep = SolverReport { instances: 0, worst_gap: 0.0, worst_violation: 0.0, non_optimal: 0, failures: vec![] };
    for i in 0..n {
        let family = i % 4;
        let (p, best) = random_instance(family, &mut rng);
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        let gap = (sol.objective - best).abs();
        let violation = p.max_violation(&sol.x);
        rep.instances += 1;
        rep.worst_gap = rep.worst_gap.max(gap);
        rep.worst_violation = rep.worst_violation.max(violation);
        if sol.status != SolveStatus::Optimal {
            rep.non_optimal += 1;
        }
        if gap > 1e-4 || violation > 1e-9 || sol.status != SolveStatus::Optimal {
            rep.failures.push(format!(
                "instance {i} (family {family}): {:?}, objective {} vs oracle {best}, violation {violation:e}",
                sol.status, sol.objective
            ));
        }
    }
    rep
}

// ---------------------------------------------------------------- runs

/// Length of the longest run of consecutive positions joined by steps of
/// speed at most `limit`, with the mean of those positions.
pub fn longest_slow_run(traj: &Trajectory, delta_t: f64, limit: f64) -> (usize, [f64; 2]) {
    let speeds = traj.speeds(delta_t);
    // the final entry is 0 by convention; only real steps count
    let steps = &speeds[..speeds.len().saturating_sub(1)];
    let mut best = (0, [0.0, 0.0]);
    let mut start = 0;
    for k in 0..=steps.len() {
        if k < steps.len() && steps[k] <= limit {
            continue;
        }
        if k > start && k - start + 1 > best.0 {
            let pts = &traj.points[start..=k];
            let m = pts.len() as f64;
            best = (pts.len(), [pts.iter().map(|p| p[0]).sum::<f64>() / m, pts.iter().map(|p| p[1]).sum::<f64>() / m]);
        }
        start = k + 1;
    }
    best
}

/// Number of slots before the first one with power above `floor`.
pub fn leading_zero_slots(pw: &PowerProfile, floor: f64) -> usize {
    pw.p.iter().take_while(|&&p| p <= floor).count()
}
