//! Convex surrogates of the trajectory and power subproblems.
//!
//! Both subproblems keep the slack reformulation of the secrecy rate: `u_i`
//! upper-bounds the SNR at node `i`, `z_i` upper-bounds the square root of
//! the channel dispersion and, while the trajectory moves, `l_i`
//! lower-bounds the squared distance. Around an [`ExpansionPoint`] the
//! non-convex pieces are replaced by first-order expansions that are tight
//! at the point and conservative everywhere else, so every optimal solution
//! of a surrogate is feasible for the original problem and at least as good
//! as the expansion point.
//!
//! Variables are laid out slot by slot, which keeps the Newton systems of
//! the solver banded.

mod program;

pub(crate) use program::dot;
pub use program::{
    AffineExpr, HyperbolicRow, LinearRow, LogTerm, NormRow, Objective, ProgramError, QuadraticTerm, RowRef,
    StructuredConvexProgram,
};

use std::f64::consts::LN_2;

use crate::model::{
    dispersion_unchecked, ModelError, Penalty, Position, PowerProfile, RateModel, ScenarioConfig, SlackState,
    Trajectory,
};

/// Floor on the dispersion-root slacks of an expansion point.
pub const Z_MIN: f64 = 1e-6;

/// Relative inflation used when building strictly feasible start points.
const INFLATE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurrogateError {
    #[error("expansion point has {got} slots, scenario has {want}")]
    Length { got: usize, want: usize },
    #[error("z_hat_{node}[{slot}] = {value:e} is below the floor {Z_MIN:e}")]
    ZBelowFloor { node: char, slot: usize, value: f64 },
    #[error("u_hat_{node}[{slot}] = {value:e} must be non-negative")]
    NegativeU { node: char, slot: usize, value: f64 },
    #[error("no strictly feasible start: {0}")]
    Start(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The iterate around which the surrogates are expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionPoint {
    pub q_hat: Trajectory,
    pub p_hat: PowerProfile,
    pub u_hat_b: Vec<f64>,
    pub u_hat_e: Vec<f64>,
    pub z_hat_b: Vec<f64>,
    pub z_hat_e: Vec<f64>,
}

impl ExpansionPoint {
    /// Checks lengths, `u_hat >= 0` and `z_hat >= Z_MIN`.
    pub fn new(q_hat: Trajectory, p_hat: PowerProfile, slacks: &SlackState) -> Result<Self, SurrogateError> {
        let n = q_hat.len();
        for got in [p_hat.len(), slacks.u_b.len(), slacks.u_e.len(), slacks.z_b.len(), slacks.z_e.len()] {
            if got != n {
                return Err(SurrogateError::Length { got, want: n });
            }
        }
        for (node, u) in [('b', &slacks.u_b), ('e', &slacks.u_e)] {
            if let Some((slot, &value)) = u.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(SurrogateError::NegativeU { node, slot, value });
            }
        }
        for (node, z) in [('b', &slacks.z_b), ('e', &slacks.z_e)] {
            if let Some((slot, &value)) = z.iter().enumerate().find(|(_, v)| !(**v >= Z_MIN)) {
                return Err(SurrogateError::ZBelowFloor { node, slot, value });
            }
        }
        Ok(Self {
            q_hat,
            p_hat,
            u_hat_b: slacks.u_b.clone(),
            u_hat_e: slacks.u_e.clone(),
            z_hat_b: slacks.z_b.clone(),
            z_hat_e: slacks.z_e.clone(),
        })
    }

    /// Like [`ExpansionPoint::new`] but clips `u` at zero and floors `z` at
    /// [`Z_MIN`] instead of rejecting them.
    pub fn from_iterate(q_hat: Trajectory, p_hat: PowerProfile, slacks: &SlackState) -> Result<Self, SurrogateError> {
        let clip = |v: &[f64], lo: f64| v.iter().map(|x| x.max(lo)).collect::<Vec<_>>();
        let slacks = SlackState {
            u_b: clip(&slacks.u_b, 0.0),
            u_e: clip(&slacks.u_e, 0.0),
            z_b: clip(&slacks.z_b, Z_MIN),
            z_e: clip(&slacks.z_e, Z_MIN),
            l_b: None,
            l_e: None,
        };
        Self::new(q_hat, p_hat, &slacks)
    }

    /// Expansion point with every slack at its tight value.
    pub fn tight(traj: &Trajectory, pw: &PowerProfile, cfg: &ScenarioConfig) -> Result<Self, SurrogateError> {
        let slacks = init_slacks(traj, pw, cfg)?;
        Self::new(traj.clone(), pw.clone(), &slacks)
    }

    pub fn len(&self) -> usize {
        self.q_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_hat.is_empty()
    }
}

/// Slacks at their tight values for the given design, `z` floored at
/// [`Z_MIN`].
pub fn init_slacks(traj: &Trajectory, pw: &PowerProfile, cfg: &ScenarioConfig) -> Result<SlackState, ModelError> {
    crate::model::check_lengths(traj, pw)?;
    let d_b: Vec<f64> = traj.points.iter().map(|&q| cfg.distance_sq(q, &cfg.w_b)).collect();
    let d_e: Vec<f64> = traj.points.iter().map(|&q| cfg.distance_sq(q, &cfg.w_e)).collect();
    let u = |d: &[f64]| pw.p.iter().zip(d).map(|(p, d)| cfg.xi0 * p / d).collect::<Vec<_>>();
    let (u_b, u_e) = (u(&d_b), u(&d_e));
    let z = |u: &[f64]| u.iter().map(|&u| tight_z(u)).collect::<Vec<_>>();
    Ok(SlackState { z_b: z(&u_b), z_e: z(&u_e), u_b, u_e, l_b: Some(d_b), l_e: Some(d_e) })
}

fn tight_z(u: f64) -> f64 {
    dispersion_unchecked(u.max(0.0)).sqrt().max(Z_MIN)
}

/// `1 - (1 + u)^-2` and its derivative.
fn disp_and_slope(u: f64) -> (f64, f64) {
    (dispersion_unchecked(u), 2.0 / (1.0 + u).powi(3))
}

/// Per-slot weight `(1 - eps_b) / N` of the averaged objective.
fn slot_weight(cfg: &ScenarioConfig, n: usize) -> f64 {
    (1.0 - cfg.eps_b) / n as f64
}

/// The relaxed objective: averaged `log2(1 + gamma_b) - log2(1 + u_e) -
/// c_b z_b - c_e z_e`, with `gamma_b` evaluated exactly at `(traj, pw)`.
pub fn relaxed_objective(
    traj: &Trajectory,
    pw: &PowerProfile,
    slacks: &SlackState,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<f64, ModelError> {
    crate::model::check_lengths(traj, pw)?;
    let pen = Penalty::new(cfg, model)?;
    let n = traj.len();
    let mut total = 0.0;
    for k in 0..n {
        let gb = cfg.xi0 * pw.p[k] / cfg.distance_sq(traj.points[k], &cfg.w_b);
        total += gb.ln_1p() / LN_2 - slacks.u_e[k].ln_1p() / LN_2 - pen.bob * slacks.z_b[k] - pen.eve * slacks.z_e[k];
    }
    Ok(total * slot_weight(cfg, n))
}

/// A candidate point of the trajectory or power subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub trajectory: Trajectory,
    pub power: PowerProfile,
    pub slacks: SlackState,
}

/// Trajectory surrogate at `point` (only its trajectory and slacks are read;
/// the power is `pw`).
pub fn surrogate_value_q(
    ep: &ExpansionPoint,
    point: &Iterate,
    pw: &PowerProfile,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<f64, ModelError> {
    let pen = Penalty::new(cfg, model)?;
    let n = ep.len();
    let mut total = 0.0;
    for k in 0..n {
        let d_hat = cfg.distance_sq(ep.q_hat.points[k], &cfg.w_b);
        let d = cfg.distance_sq(point.trajectory.points[k], &cfg.w_b);
        let s = cfg.xi0 * pw.p[k];
        let a = (s / d_hat).ln_1p() / LN_2;
        let b = s / (d_hat * (d_hat + s) * LN_2);
        let ue_hat = ep.u_hat_e[k];
        total += a
            - b * (d - d_hat)
            - ue_hat.ln_1p() / LN_2
            - (point.slacks.u_e[k] - ue_hat) / ((1.0 + ue_hat) * LN_2)
            - pen.bob * point.slacks.z_b[k]
            - pen.eve * point.slacks.z_e[k];
    }
    Ok(total * slot_weight(cfg, n))
}

/// Power surrogate at `point` on the fixed trajectory `traj`.
pub fn surrogate_value_p(
    traj: &Trajectory,
    ep: &ExpansionPoint,
    point: &Iterate,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<f64, ModelError> {
    let pen = Penalty::new(cfg, model)?;
    let n = ep.len();
    let mut total = 0.0;
    for k in 0..n {
        let d = cfg.distance_sq(traj.points[k], &cfg.w_b);
        let ue_hat = ep.u_hat_e[k];
        total += (cfg.xi0 * point.power.p[k] / d).ln_1p() / LN_2
            - ue_hat.ln_1p() / LN_2
            - (point.slacks.u_e[k] - ue_hat) / ((1.0 + ue_hat) * LN_2)
            - pen.bob * point.slacks.z_b[k]
            - pen.eve * point.slacks.z_e[k];
    }
    Ok(total * slot_weight(cfg, n))
}

/// Offsets of the per-slot variables inside one slot's block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotLayout {
    pub stride: usize,
    pub x: Option<usize>,
    pub y: Option<usize>,
    pub p: Option<usize>,
    pub u_b: Option<usize>,
    pub u_e: usize,
    pub z_b: Option<usize>,
    pub z_e: Option<usize>,
    pub l_b: Option<usize>,
    pub l_e: Option<usize>,
}

impl SlotLayout {
    fn trajectory(model: RateModel) -> Self {
        match model {
            RateModel::FiniteBlocklength => Self {
                stride: 8,
                x: Some(0),
                y: Some(1),
                p: None,
                u_b: Some(2),
                u_e: 3,
                z_b: Some(4),
                z_e: Some(5),
                l_b: Some(6),
                l_e: Some(7),
            },
            RateModel::InfiniteBlocklength => Self {
                stride: 4,
                x: Some(0),
                y: Some(1),
                p: None,
                u_b: None,
                u_e: 2,
                z_b: None,
                z_e: None,
                l_b: None,
                l_e: Some(3),
            },
        }
    }

    fn power(model: RateModel) -> Self {
        match model {
            RateModel::FiniteBlocklength => Self {
                stride: 5,
                x: None,
                y: None,
                p: Some(0),
                u_b: Some(1),
                u_e: 2,
                z_b: Some(3),
                z_e: Some(4),
                l_b: None,
                l_e: None,
            },
            RateModel::InfiniteBlocklength => Self {
                stride: 2,
                x: None,
                y: None,
                p: Some(0),
                u_b: None,
                u_e: 1,
                z_b: None,
                z_e: None,
                l_b: None,
                l_e: None,
            },
        }
    }

    /// Global index of the variable at `offset` in slot `n`.
    pub fn at(&self, n: usize, offset: usize) -> usize {
        n * self.stride + offset
    }
}

/// One convexified subproblem together with its variable layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    pub program: StructuredConvexProgram,
    pub layout: SlotLayout,
    pub model: RateModel,
    /// Trajectory (fixed or expansion) and power (fixed or expansion) used
    /// to fill in the quantities that are not variables.
    trajectory: Trajectory,
    power: PowerProfile,
}

impl Subproblem {
    /// Reads a solver vector back into trajectory, power and slacks.
    /// Slacks that are not variables under the rate model are filled in at
    /// their tight values.
    pub fn decode(&self, x: &[f64], cfg: &ScenarioConfig) -> Iterate {
        let lay = &self.layout;
        let n = self.trajectory.len();
        let get = |k: usize, off: Option<usize>| off.map(|o| x[lay.at(k, o)]);
        let points: Vec<[f64; 2]> = (0..n)
            .map(|k| match (get(k, lay.x), get(k, lay.y)) {
                (Some(a), Some(b)) => [a, b],
                _ => self.trajectory.points[k],
            })
            .collect();
        let trajectory = Trajectory::new(points);
        let power = PowerProfile::new((0..n).map(|k| get(k, lay.p).unwrap_or(self.power.p[k])).collect());
        let tight = init_slacks(&trajectory, &power, cfg).expect("lengths match by construction");
        let pick = |off: Option<usize>, fallback: &[f64]| -> Vec<f64> {
            (0..n).map(|k| get(k, off).unwrap_or(fallback[k])).collect()
        };
        let slacks = SlackState {
            u_b: pick(lay.u_b, &tight.u_b),
            u_e: pick(Some(lay.u_e), &tight.u_e),
            z_b: pick(lay.z_b, &tight.z_b),
            z_e: pick(lay.z_e, &tight.z_e),
            l_b: lay.x.map(|_| pick(lay.l_b, tight.l_b.as_deref().unwrap())),
            l_e: lay.x.map(|_| pick(lay.l_e, tight.l_e.as_deref().unwrap())),
        };
        Iterate { trajectory, power, slacks }
    }

    /// Inverse of [`Subproblem::decode`] on the variables that exist.
    pub fn encode(&self, it: &Iterate) -> Vec<f64> {
        let lay = &self.layout;
        let n = self.trajectory.len();
        let mut x = vec![0.0; n * lay.stride];
        for k in 0..n {
            let mut put = |off: Option<usize>, v: f64| {
                if let Some(o) = off {
                    x[lay.at(k, o)] = v;
                }
            };
            put(lay.x, it.trajectory.points[k][0]);
            put(lay.y, it.trajectory.points[k][1]);
            put(lay.p, it.power.p[k]);
            put(lay.u_b, it.slacks.u_b[k]);
            put(Some(lay.u_e), it.slacks.u_e[k]);
            put(lay.z_b, it.slacks.z_b[k]);
            put(lay.z_e, it.slacks.z_e[k]);
            if let Some(l) = &it.slacks.l_b {
                put(lay.l_b, l[k]);
            }
            if let Some(l) = &it.slacks.l_e {
                put(lay.l_e, l[k]);
            }
        }
        x
    }
}

/// Adds the dispersion cut `z^2 >= 1 - (1+u)^-2`, linearised on both sides
/// at `(u_hat, z_hat)`, as a linear row.
fn add_dispersion_row(prog: &mut StructuredConvexProgram, u: usize, z: usize, u_hat: f64, z_hat: f64) {
    let (f, fp) = disp_and_slope(u_hat);
    prog.add_le(vec![(u, fp), (z, -2.0 * z_hat)], -z_hat * z_hat - f + fp * u_hat);
}

/// Smallest `z` that satisfies the dispersion row for `u`, inflated to lie
/// strictly inside.
fn start_z(u: f64, u_hat: f64, z_hat: f64) -> f64 {
    let (f, fp) = disp_and_slope(u_hat);
    let needed = (f + fp * (u - u_hat) + z_hat * z_hat) / (2.0 * z_hat);
    (z_hat * (1.0 + INFLATE)).max(needed * (1.0 + INFLATE) + f64::MIN_POSITIVE)
}

/// Start positions for the trajectory subproblem: the expansion trajectory
/// itself when every step lies strictly inside the speed limit, otherwise
/// the first blend towards the straight segment that does.
fn trajectory_start(q_hat: &Trajectory, cfg: &ScenarioConfig) -> Result<Vec<[f64; 2]>, SurrogateError> {
    let limit = cfg.step_limit();
    let strict = |pts: &[[f64; 2]]| {
        pts.windows(2).all(|w| {
            let d2 = (w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2);
            limit * limit - d2 > 1e-9 * limit * limit
        })
    };
    if strict(&q_hat.points) {
        return Ok(q_hat.points.clone());
    }
    let line = crate::driver::line_segment_trajectory(cfg)
        .map_err(|_| SurrogateError::Start("endpoints are not reachable"))?;
    for theta in [1e-9, 1e-7, 1e-5, 1e-3, 1e-2, 1e-1, 0.5, 1.0] {
        let pts: Vec<[f64; 2]> = q_hat
            .points
            .iter()
            .zip(&line.points)
            .map(|(a, b)| [(1.0 - theta) * a[0] + theta * b[0], (1.0 - theta) * a[1] + theta * b[1]])
            .collect();
        if strict(&pts) {
            return Ok(pts);
        }
    }
    Err(SurrogateError::Start("endpoints need full speed on every step"))
}

fn check_ep(ep: &ExpansionPoint, cfg: &ScenarioConfig) -> Result<(), SurrogateError> {
    if ep.len() != cfg.n_slots {
        return Err(SurrogateError::Length { got: ep.len(), want: cfg.n_slots });
    }
    for (node, z) in [('b', &ep.z_hat_b), ('e', &ep.z_hat_e)] {
        if let Some((slot, &value)) = z.iter().enumerate().find(|(_, v)| !(**v >= Z_MIN)) {
            return Err(SurrogateError::ZBelowFloor { node, slot, value });
        }
    }
    for (node, u) in [('b', &ep.u_hat_b), ('e', &ep.u_hat_e)] {
        if let Some((slot, &value)) = u.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(SurrogateError::NegativeU { node, slot, value });
        }
    }
    Ok(())
}

/// Convexified trajectory subproblem for the fixed power profile `pw`.
pub fn build_trajectory_subproblem(
    ep: &ExpansionPoint,
    pw: &PowerProfile,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<Subproblem, SurrogateError> {
    check_ep(ep, cfg)?;
    if pw.len() != ep.len() {
        return Err(SurrogateError::Length { got: pw.len(), want: ep.len() });
    }
    let n = ep.len();
    let lay = SlotLayout::trajectory(model);
    let pen = Penalty::new(cfg, model)?;
    let w = slot_weight(cfg, n);
    let h2 = (cfg.altitude - cfg.w_b.z).powi(2);
    let l_lo = cfg.altitude * cfg.altitude * (1.0 - INFLATE);
    let q_start = trajectory_start(&ep.q_hat, cfg)?;

    let mut prog = StructuredConvexProgram::new(n * lay.stride);
    let mut start = vec![0.0; n * lay.stride];
    for k in 0..n {
        let (ix, iy) = (lay.at(k, lay.x.unwrap()), lay.at(k, lay.y.unwrap()));
        let q_hat = ep.q_hat.points[k];
        let s = cfg.xi0 * pw.p[k];
        start[ix] = q_start[k][0];
        start[iy] = q_start[k][1];

        // objective
        let d_hat = cfg.distance_sq(q_hat, &cfg.w_b);
        let a = (s / d_hat).ln_1p() / LN_2;
        let b = s / (d_hat * (d_hat + s) * LN_2);
        let ue_hat = ep.u_hat_e[k];
        let ue_slope = 1.0 / ((1.0 + ue_hat) * LN_2);
        prog.objective.constant += w * (a + b * d_hat - ue_hat.ln_1p() / LN_2 + ue_hat * ue_slope);
        if b > 0.0 {
            prog.objective.quadratic.push(QuadraticTerm {
                weight: w * b,
                centers: vec![(ix, cfg.w_b.x), (iy, cfg.w_b.y)],
                offset: h2,
            });
        }
        let iue = lay.at(k, lay.u_e);
        prog.objective.linear.push((iue, -w * ue_slope));

        // distance cuts and SNR rows
        let nodes = [
            ('b', &cfg.w_b, lay.u_b, lay.l_b, lay.z_b, ep.u_hat_b[k], ep.z_hat_b[k], pen.bob),
            ('e', &cfg.w_e, Some(lay.u_e), lay.l_e, lay.z_e, ep.u_hat_e[k], ep.z_hat_e[k], pen.eve),
        ];
        for (_, node, u_off, l_off, z_off, u_hat, z_hat, c) in nodes {
            let (Some(u_off), Some(l_off)) = (u_off, l_off) else { continue };
            let (iu, il) = (lay.at(k, u_off), lay.at(k, l_off));
            let r = [q_hat[0] - node.x, q_hat[1] - node.y];
            let d_hat_i = cfg.distance_sq(q_hat, node);
            // l - 2 r.q <= d_hat - 2 r.q_hat
            prog.add_le(
                vec![(il, 1.0), (ix, -2.0 * r[0]), (iy, -2.0 * r[1])],
                d_hat_i - 2.0 * (r[0] * q_hat[0] + r[1] * q_hat[1]),
            );
            prog.lower[il] = l_lo;
            let lin = d_hat_i + 2.0 * (r[0] * (q_start[k][0] - q_hat[0]) + r[1] * (q_start[k][1] - q_hat[1]));
            if !(lin > l_lo) {
                return Err(SurrogateError::Start("distance cut leaves no room above the altitude floor"));
            }
            let l0 = lin - INFLATE * (lin - l_lo);
            start[il] = l0;
            let u0 = if s > 0.0 {
                prog.add_hyperbolic(iu, il, s);
                u_hat.max(s / l0) * (1.0 + INFLATE)
            } else {
                prog.lower[iu] = 0.0;
                u_hat.max(1e-9) * (1.0 + INFLATE)
            };
            start[iu] = u0;
            if let Some(z_off) = z_off {
                let iz = lay.at(k, z_off);
                prog.objective.linear.push((iz, -w * c));
                prog.lower[iz] = 0.0;
                add_dispersion_row(&mut prog, iu, iz, u_hat, z_hat);
                start[iz] = start_z(u0, u_hat, z_hat);
            }
        }
    }
    // mobility
    let limit = cfg.step_limit();
    for k in 0..n.saturating_sub(1) {
        let (x0, y0) = (lay.at(k, 0), lay.at(k, 1));
        let (x1, y1) = (lay.at(k + 1, 0), lay.at(k + 1, 1));
        prog.add_norm(
            vec![AffineExpr::new(vec![(x1, 1.0), (x0, -1.0)], 0.0), AffineExpr::new(vec![(y1, 1.0), (y0, -1.0)], 0.0)],
            AffineExpr::new(vec![], limit),
        );
    }
    let last = n - 1;
    let ends: &[(usize, &Position)] =
        if last == 0 { &[(0, &cfg.q_init)] } else { &[(0, &cfg.q_init), (last, &cfg.q_final)] };
    for &(k, target) in ends {
        prog.add_eq(vec![(lay.at(k, 0), 1.0)], target.x);
        prog.add_eq(vec![(lay.at(k, 1), 1.0)], target.y);
        start[lay.at(k, 0)] = target.x;
        start[lay.at(k, 1)] = target.y;
    }
    prog.start = start;
    Ok(Subproblem { program: prog, layout: lay, model, trajectory: ep.q_hat.clone(), power: pw.clone() })
}

/// Convexified power subproblem on the fixed trajectory `traj`.
pub fn build_power_subproblem(
    traj: &Trajectory,
    ep: &ExpansionPoint,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<Subproblem, SurrogateError> {
    check_ep(ep, cfg)?;
    if traj.len() != ep.len() {
        return Err(SurrogateError::Length { got: traj.len(), want: ep.len() });
    }
    let n = ep.len();
    let lay = SlotLayout::power(model);
    let pen = Penalty::new(cfg, model)?;
    let w = slot_weight(cfg, n);
    let p0 = cfg.p_bar / 2.0;

    let mut prog = StructuredConvexProgram::new(n * lay.stride);
    let mut start = vec![0.0; n * lay.stride];
    let mut budget = Vec::with_capacity(n);
    for k in 0..n {
        let ip = lay.at(k, lay.p.unwrap());
        prog.lower[ip] = 0.0;
        prog.upper[ip] = cfg.p_max;
        start[ip] = p0;
        budget.push((ip, 1.0));

        let q = traj.points[k];
        let a_b = cfg.xi0 / cfg.distance_sq(q, &cfg.w_b);
        prog.objective.log.push(LogTerm { weight: w / LN_2, arg: AffineExpr::new(vec![(ip, a_b)], 0.0) });
        let ue_hat = ep.u_hat_e[k];
        let ue_slope = 1.0 / ((1.0 + ue_hat) * LN_2);
        prog.objective.constant += w * (-ue_hat.ln_1p() / LN_2 + ue_hat * ue_slope);
        prog.objective.linear.push((lay.at(k, lay.u_e), -w * ue_slope));

        let nodes = [
            (&cfg.w_b, lay.u_b, lay.z_b, ep.u_hat_b[k], ep.z_hat_b[k], pen.bob),
            (&cfg.w_e, Some(lay.u_e), lay.z_e, ep.u_hat_e[k], ep.z_hat_e[k], pen.eve),
        ];
        for (node, u_off, z_off, u_hat, z_hat, c) in nodes {
            let Some(u_off) = u_off else { continue };
            let iu = lay.at(k, u_off);
            let a = cfg.xi0 / cfg.distance_sq(q, node);
            // a P - u <= 0
            prog.add_le(vec![(ip, a), (iu, -1.0)], 0.0);
            let u0 = a * p0 * (1.0 + INFLATE);
            start[iu] = u0;
            if let Some(z_off) = z_off {
                let iz = lay.at(k, z_off);
                prog.objective.linear.push((iz, -w * c));
                prog.lower[iz] = 0.0;
                add_dispersion_row(&mut prog, iu, iz, u_hat, z_hat);
                start[iz] = start_z(u0, u_hat, z_hat);
            }
        }
    }
    prog.add_le(budget, n as f64 * cfg.p_bar);
    prog.start = start;
    Ok(Subproblem { program: prog, layout: lay, model, trajectory: traj.clone(), power: ep.p_hat.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Position;

    fn three_slot() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference();
        cfg.v_max = 200.0;
        cfg.with_period(3.0).unwrap()
    }

    fn segment(cfg: &ScenarioConfig) -> Trajectory {
        crate::driver::line_segment_trajectory(cfg).unwrap()
    }

    #[test]
    fn init_slacks_examples() {
        let mut cfg = ScenarioConfig::reference();
        cfg.q_init = Position::new(0.0, 0.0, 100.0);
        cfg.q_final = cfg.q_init;
        let cfg = cfg.with_period(1.0).unwrap();
        let traj = Trajectory::new(vec![[0.0, 0.0], [200.0, 100.0]]);
        let s = init_slacks(&traj, &PowerProfile::new(vec![0.1, 0.1]), &cfg).unwrap();
        assert!((s.u_b[0] - 10.0).abs() < 1e-12);
        assert!((s.z_b[0] - (120f64 / 121.0).sqrt()).abs() < 1e-12);
        assert!((s.u_e[1] - 1e5 / 60000.0).abs() < 1e-12);
        let s = init_slacks(&traj, &PowerProfile::new(vec![0.0, 0.0]), &cfg).unwrap();
        assert_eq!(s.u_b, vec![0.0, 0.0]);
        assert_eq!(s.z_e, vec![Z_MIN, Z_MIN]);
    }

    #[test]
    fn expansion_point_rejects_small_z() {
        let cfg = three_slot();
        let traj = segment(&cfg);
        let pw = PowerProfile::uniform(3, 0.05);
        let mut s = init_slacks(&traj, &pw, &cfg).unwrap();
        s.z_e[1] = 1e-9;
        assert!(matches!(
            ExpansionPoint::new(traj.clone(), pw.clone(), &s),
            Err(SurrogateError::ZBelowFloor { node: 'e', slot: 1, .. })
        ));
        let ep = ExpansionPoint::from_iterate(traj, pw, &s).unwrap();
        assert_eq!(ep.z_hat_e[1], Z_MIN);
    }

    #[test]
    fn programs_are_tangent_at_the_expansion_point() {
        let cfg = three_slot();
        for model in [RateModel::FiniteBlocklength, RateModel::InfiniteBlocklength] {
            let traj = Trajectory::new(vec![[200.0, 100.0], [150.0, 20.0], [200.0, -100.0]]);
            let pw = PowerProfile::new(vec![0.03, 0.07, 0.0]);
            let ep = ExpansionPoint::tight(&traj, &pw, &cfg).unwrap();
            let here = Iterate {
                trajectory: traj.clone(),
                power: pw.clone(),
                slacks: SlackState {
                    u_b: ep.u_hat_b.clone(),
                    u_e: ep.u_hat_e.clone(),
                    z_b: ep.z_hat_b.clone(),
                    z_e: ep.z_hat_e.clone(),
                    l_b: None,
                    l_e: None,
                },
            };
            let exact = relaxed_objective(&traj, &pw, &here.slacks, &cfg, model).unwrap();
            let sq = build_trajectory_subproblem(&ep, &pw, &cfg, model).unwrap();
            let sp = build_power_subproblem(&traj, &ep, &cfg, model).unwrap();
            assert!((surrogate_value_q(&ep, &here, &pw, &cfg, model).unwrap() - exact).abs() < 1e-12);
            assert!((surrogate_value_p(&traj, &ep, &here, &cfg, model).unwrap() - exact).abs() < 1e-12);
            let mut full = here.clone();
            full.slacks = init_slacks(&traj, &pw, &cfg).unwrap();
            full.slacks.u_e = here.slacks.u_e.clone();
            full.slacks.z_b = here.slacks.z_b.clone();
            full.slacks.z_e = here.slacks.z_e.clone();
            assert!((sq.program.objective_value(&sq.encode(&full)) - exact).abs() < 1e-12);
            assert!((sp.program.objective_value(&sp.encode(&full)) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn starts_are_strictly_feasible() {
        let cfg = ScenarioConfig::reference();
        // a path that runs at the speed limit on its first steps
        let mut pts = segment(&cfg).points;
        let step = cfg.step_limit();
        for k in 1..5 {
            pts[k] = [200.0 - step * k as f64, 100.0];
        }
        let traj = Trajectory::new(pts);
        let pw = PowerProfile::uniform(cfg.n_slots, cfg.p_bar);
        let ep = ExpansionPoint::tight(&traj, &pw, &cfg).unwrap();
        for model in [RateModel::FiniteBlocklength, RateModel::InfiniteBlocklength] {
            let sq = build_trajectory_subproblem(&ep, &pw, &cfg, model).unwrap();
            assert!(sq.program.interior_margin(&sq.program.start).0 > 0.0);
            assert!(sq.program.equality_residual(&sq.program.start) < 1e-9);
            let sp = build_power_subproblem(&traj, &ep, &cfg, model).unwrap();
            assert!(sp.program.interior_margin(&sp.program.start).0 > 0.0);
        }
    }

    #[test]
    fn directly_above_a_node_has_a_start() {
        let cfg = three_slot();
        let traj = Trajectory::new(vec![[200.0, 100.0], [0.0, 0.0], [200.0, -100.0]]);
        let pw = PowerProfile::uniform(3, 0.05);
        let ep = ExpansionPoint::tight(&traj, &pw, &cfg).unwrap();
        let sq = build_trajectory_subproblem(&ep, &pw, &cfg, RateModel::FiniteBlocklength).unwrap();
        assert!(sq.program.interior_margin(&sq.program.start).0 > 0.0);
    }

    #[test]
    fn zero_power_slots_exert_no_pull() {
        let cfg = three_slot();
        let traj = segment(&cfg);
        let pw = PowerProfile::new(vec![0.05, 0.0, 0.05]);
        let ep = ExpansionPoint::tight(&traj, &pw, &cfg).unwrap();
        let sq = build_trajectory_subproblem(&ep, &pw, &cfg, RateModel::FiniteBlocklength).unwrap();
        let lay = sq.layout;
        let mid = [lay.at(1, 0), lay.at(1, 1)];
        for q in &sq.program.objective.quadratic {
            assert!(q.centers.iter().all(|(i, _)| !mid.contains(i)));
        }
        assert!(sq.program.objective.linear.iter().all(|(i, _)| !mid.contains(i)));
        assert!(sq.program.hyperbolic.iter().all(|h| h.i / lay.stride != 1));
    }

    #[test]
    fn u_e_coefficient() {
        let cfg = three_slot();
        let traj = segment(&cfg);
        let pw = PowerProfile::uniform(3, 0.05);
        let ep = ExpansionPoint::tight(&traj, &pw, &cfg).unwrap();
        let mut pt =
            Iterate { trajectory: traj.clone(), power: pw.clone(), slacks: init_slacks(&traj, &pw, &cfg).unwrap() };
        let model = RateModel::FiniteBlocklength;
        let v0 = surrogate_value_q(&ep, &pt, &pw, &cfg, model).unwrap();
        let delta = 0.01;
        pt.slacks.u_e[2] += delta;
        let v1 = surrogate_value_q(&ep, &pt, &pw, &cfg, model).unwrap();
        let want = delta / ((1.0 + ep.u_hat_e[2]) * LN_2) * (1.0 - cfg.eps_b) / 3.0;
        assert!(((v0 - v1) - want).abs() < 1e-14);
    }
}
