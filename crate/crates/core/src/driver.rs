//! The alternating trajectory/power loop and the two benchmark schemes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::model::{aesr, slot_rates, ModelError, PowerProfile, RateModel, ScenarioConfig, ScenarioError, Trajectory};
use crate::solver::{solve, SolveStatus, SolverSettings};
use crate::surrogate::{
    build_power_subproblem, build_trajectory_subproblem, init_slacks, relaxed_objective, ExpansionPoint, Iterate,
    Subproblem, SurrogateError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    /// Joint trajectory and power optimisation.
    Jtpo,
    /// Power optimisation on the straight segment.
    Poft,
    /// Joint design for the infinite-blocklength rate.
    FtpInf,
}

impl SchemeId {
    pub const ALL: [SchemeId; 3] = [SchemeId::Jtpo, SchemeId::Poft, SchemeId::FtpInf];

    /// Tag used in output files.
    pub fn tag(&self) -> &'static str {
        match self {
            SchemeId::Jtpo => "JTPO",
            SchemeId::Poft => "POFT",
            SchemeId::FtpInf => "FTP_INF",
        }
    }

    /// Rate model the scheme optimises.
    pub fn design_model(&self) -> RateModel {
        match self {
            SchemeId::FtpInf => RateModel::InfiniteBlocklength,
            _ => RateModel::FiniteBlocklength,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "jtpo" => Ok(SchemeId::Jtpo),
            "poft" => Ok(SchemeId::Poft),
            "ftp-inf" => Ok(SchemeId::FtpInf),
            _ => Err(format!("unknown scheme `{s}` (expected jtpo, poft or ftp-inf)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Surrogate objective after the iteration's last subproblem; for
    /// iteration 0 the relaxed objective at the initial point.
    pub surrogate: f64,
    /// Average effective secrecy rate of the iterate.
    pub aesr: f64,
    /// Fractional increase of the surrogate over the previous iteration.
    pub frac_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scheme: SchemeId,
    pub trajectory: Trajectory,
    pub power: PowerProfile,
    /// Final average effective secrecy rate, after switching off slots with
    /// a negative rate.
    pub aesr: f64,
    pub iterations: Vec<IterationRecord>,
    /// Whether the fractional increase dropped below `tau`.
    pub converged: bool,
    /// Set when a subproblem could not be solved; the result then holds the
    /// last good iterate.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Denominator floor of the fractional increase.
const FRAC_FLOOR: f64 = 1e-3;

/// Settings used for every subproblem solve.
fn subproblem_settings() -> SolverSettings {
    SolverSettings { gap_tol: 1e-10, ..SolverSettings::default() }
}

/// The straight segment from `q_init` to `q_final` at constant speed.
pub fn line_segment_trajectory(cfg: &ScenarioConfig) -> Result<Trajectory, ScenarioError> {
    let (a, b) = (cfg.q_init, cfg.q_final);
    let n = cfg.n_slots;
    let distance = (b.x - a.x).hypot(b.y - a.y);
    if n <= 1 {
        if distance != 0.0 {
            return Err(ScenarioError::SingleSlot);
        }
        return Ok(Trajectory::new(vec![[a.x, a.y]; n]));
    }
    let reach = cfg.step_limit() * (n - 1) as f64;
    if distance > reach {
        return Err(ScenarioError::Unreachable { distance, reach });
    }
    let mut pts: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let s = k as f64 / (n - 1) as f64;
            [a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)]
        })
        .collect();
    pts[n - 1] = [b.x, b.y];
    Ok(Trajectory::new(pts))
}

pub fn run_jtpo(cfg: &ScenarioConfig) -> Result<RunResult, DriverError> {
    run_scheme(cfg, SchemeId::Jtpo)
}

pub fn run_poft(cfg: &ScenarioConfig) -> Result<RunResult, DriverError> {
    run_scheme(cfg, SchemeId::Poft)
}

pub fn run_ftp_inf(cfg: &ScenarioConfig) -> Result<RunResult, DriverError> {
    run_scheme(cfg, SchemeId::FtpInf)
}

pub fn run_scheme(cfg: &ScenarioConfig, scheme: SchemeId) -> Result<RunResult, DriverError> {
    run_scheme_observed(cfg, scheme, |_, _, _| {})
}

/// Like [`run_scheme`], calling `observer` with every iterate (the initial
/// point included) before post-processing.
pub fn run_scheme_observed<F>(cfg: &ScenarioConfig, scheme: SchemeId, mut observer: F) -> Result<RunResult, DriverError>
where
    F: FnMut(&IterationRecord, &Trajectory, &PowerProfile),
{
    cfg.validate()?;
    let model = scheme.design_model();
    let moves = scheme != SchemeId::Poft;

    let mut traj = line_segment_trajectory(cfg)?;
    let mut power = PowerProfile::uniform(cfg.n_slots, cfg.p_bar);
    let mut ep = ExpansionPoint::tight(&traj, &power, cfg)?;
    let slacks = init_slacks(&traj, &power, cfg)?;
    let mut surrogate = relaxed_objective(&traj, &power, &slacks, cfg, model)?;
    let mut iterations =
        vec![IterationRecord { iter: 0, surrogate, aesr: aesr(&traj, &power, cfg)?, frac_increase: None }];
    observer(&iterations[0], &traj, &power);
    let mut converged = false;
    let mut failure = None;
    let settings = subproblem_settings();

    for iter in 1..=cfg.max_iter {
        if moves {
            let sub = build_trajectory_subproblem(&ep, &power, cfg, model)?;
            let it = match solve_subproblem(&sub, cfg, &settings) {
                Ok(it) => it,
                Err(e) => {
                    failure = Some(format!("trajectory subproblem at iteration {iter}: {e}"));
                    break;
                }
            };
            ep = ExpansionPoint::from_iterate(it.trajectory, power.clone(), &it.slacks)?;
        }
        let sub = build_power_subproblem(&ep.q_hat, &ep, cfg, model)?;
        let (it, value) = match solve_subproblem_with_value(&sub, cfg, &settings) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(format!("power subproblem at iteration {iter}: {e}"));
                break;
            }
        };
        traj = ep.q_hat.clone();
        power = it.power.clone();
        ep = ExpansionPoint::from_iterate(traj.clone(), power.clone(), &it.slacks)?;

        let frac = (value - surrogate) / surrogate.abs().max(FRAC_FLOOR);
        surrogate = value;
        iterations.push(IterationRecord {
            iter,
            surrogate,
            aesr: aesr(&traj, &power, cfg)?,
            frac_increase: Some(frac),
        });
        observer(iterations.last().unwrap(), &traj, &power);
        if frac < cfg.tau {
            converged = true;
            break;
        }
    }

    let power = switch_off_negative_slots(&traj, &power, cfg, model)?;
    let final_aesr = aesr(&traj, &power, cfg)?;
    Ok(RunResult { scheme, trajectory: traj, power, aesr: final_aesr, iterations, converged, failure })
}

fn solve_subproblem(sub: &Subproblem, cfg: &ScenarioConfig, settings: &SolverSettings) -> Result<Iterate, String> {
    solve_subproblem_with_value(sub, cfg, settings).map(|(it, _)| it)
}

/// Solves `sub` and returns the decoded, cleaned-up iterate together with
/// the optimal surrogate value.
fn solve_subproblem_with_value(
    sub: &Subproblem,
    cfg: &ScenarioConfig,
    settings: &SolverSettings,
) -> Result<(Iterate, f64), String> {
    let sol = solve(&sub.program, settings).map_err(|e| e.to_string())?;
    if sol.status == SolveStatus::NumericalFailure {
        return Err(format!("numerical failure after {} Newton steps", sol.newton_steps));
    }
    let mut it = sub.decode(&sol.x, cfg);
    tidy(&mut it, cfg);
    Ok((it, sol.objective))
}

/// Removes rounding noise from a solver iterate: endpoints are set exactly
/// and powers are clipped to their box.
fn tidy(it: &mut Iterate, cfg: &ScenarioConfig) {
    let pts = &mut it.trajectory.points;
    if let Some(first) = pts.first_mut() {
        *first = cfg.q_init.horizontal();
    }
    if let Some(last) = pts.last_mut() {
        *last = cfg.q_final.horizontal();
    }
    for p in &mut it.power.p {
        *p = p.clamp(0.0, cfg.p_max);
    }
    let mean = it.power.mean();
    if mean > cfg.p_bar {
        let scale = cfg.p_bar / mean;
        for p in &mut it.power.p {
            *p *= scale;
        }
    }
}

/// Sets `P[n] = 0` wherever the slot rate under `model` is negative.
fn switch_off_negative_slots(
    traj: &Trajectory,
    power: &PowerProfile,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<PowerProfile, ModelError> {
    let rates = slot_rates(traj, power, cfg, model)?;
    Ok(PowerProfile::new(power.p.iter().zip(&rates).map(|(&p, &r)| if r < 0.0 { 0.0 } else { p }).collect()))
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Flight period, s (slot duration kept).
    Period,
    /// Blocklength, channel uses.
    Blocklength,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Period => "T",
            SweepParam::Blocklength => "L",
        }
    }

    pub fn apply(&self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig, ScenarioError> {
        match self {
            SweepParam::Period => cfg.with_period(value),
            SweepParam::Blocklength => cfg.with_blocklength(value),
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T" | "t" => Ok(SweepParam::Period),
            "L" | "l" => Ok(SweepParam::Blocklength),
            _ => Err(format!("unknown sweep parameter `{s}` (expected T or L)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: SchemeId,
    pub param: SweepParam,
    pub value: f64,
    /// Final AESR, or the reason the row failed.
    pub aesr: Result<f64, String>,
}

/// Runs every scheme at every value. Rows come out value by value, schemes
/// in [`SchemeId::ALL`] order, whatever order they finish in.
pub fn sweep(cfg: &ScenarioConfig, param: SweepParam, values: &[f64]) -> Vec<SweepRow> {
    let jobs: Vec<(f64, SchemeId)> =
        values.iter().flat_map(|&v| SchemeId::ALL.into_iter().map(move |s| (v, s))).collect();
    jobs.into_par_iter()
        .map(|(value, scheme)| {
            let aesr = param
                .apply(cfg, value)
                .map_err(|e| e.to_string())
                .and_then(|c| run_scheme(&c, scheme).map_err(|e| e.to_string()))
                .and_then(|r| match r.failure {
                    Some(f) => Err(f),
                    None => Ok(r.aesr),
                });
            SweepRow { scheme, param, value, aesr }
        })
        .collect()
}
