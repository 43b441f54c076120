use std::fmt;

use super::units::{db_to_linear, dbm_to_watt};
use super::ModelError;

/// A point in the 3-D Cartesian frame, metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn horizontal(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_sq(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.z)
    }
}

/// Every physical and algorithmic parameter of one scenario.
///
/// Powers are in watts and `xi0` is a linear ratio; logarithmic units only
/// appear at the configuration-file boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Legitimate receiver (ground level).
    pub w_b: Position,
    /// Eavesdropper (ground level).
    pub w_e: Position,
    pub q_init: Position,
    pub q_final: Position,
    /// Fixed flight altitude, m.
    pub altitude: f64,
    /// Flight period, s. Always equal to `n_slots * delta_t`.
    pub period: f64,
    /// Slot duration, s.
    pub delta_t: f64,
    pub n_slots: usize,
    /// Maximum horizontal speed, m/s.
    pub v_max: f64,
    /// Instantaneous power limit, W.
    pub p_max: f64,
    /// Average power limit, W.
    pub p_bar: f64,
    /// Reference SNR at 1 m (channel gain over noise power), linear.
    pub xi0: f64,
    /// Blocklength in channel uses.
    pub blocklength: f64,
    /// Decoding error probability at the legitimate receiver.
    pub eps_b: f64,
    /// Information leakage allowed at the eavesdropper.
    pub eps_e: f64,
    /// Fractional-increase threshold of the alternating loop.
    pub tau: f64,
    pub max_iter: usize,
}

/// A violated scenario invariant.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("altitude must be positive (got {0})")]
    Altitude(f64),
    #[error("slot duration must be positive (got {0})")]
    SlotDuration(f64),
    #[error("flight period {period} s is not a positive whole number of {delta_t} s slots")]
    Period { period: f64, delta_t: f64 },
    #[error("maximum speed must be positive (got {0})")]
    Speed(f64),
    #[error("power limits must satisfy 0 < p_bar <= p_max (got p_bar={p_bar}, p_max={p_max})")]
    Power { p_bar: f64, p_max: f64 },
    #[error("xi0 must be positive and finite (got {0})")]
    ReferenceSnr(f64),
    #[error("blocklength must be at least 1 (got {0})")]
    Blocklength(f64),
    #[error("{name} must lie in (0, 0.5) (got {value})")]
    Probability { name: &'static str, value: f64 },
    #[error("convergence threshold must be positive (got {0})")]
    Tau(f64),
    #[error("iteration cap must be at least 1")]
    MaxIter,
    #[error("{name} must be at altitude {altitude} (got z={z})")]
    UavAltitude { name: &'static str, altitude: f64, z: f64 },
    #[error("{name} must be on the ground (got z={z})")]
    GroundNode { name: &'static str, z: f64 },
    #[error("endpoints are {distance} m apart but at most {reach} m can be flown")]
    Unreachable { distance: f64, reach: f64 },
    #[error("a single-slot flight needs identical initial and final positions")]
    SingleSlot,
}

impl ScenarioConfig {
    /// The reference scenario: two ground nodes 400 m apart, the UAV
    /// flying a 60 s mission between two points 200 m apart.
    pub fn reference() -> Self {
        let altitude = 100.0;
        let p_max = dbm_to_watt(20.0);
        Self {
            w_b: Position::new(0.0, 0.0, 0.0),
            w_e: Position::new(400.0, 0.0, 0.0),
            q_init: Position::new(200.0, 100.0, altitude),
            q_final: Position::new(200.0, -100.0, altitude),
            altitude,
            period: 60.0,
            delta_t: 1.0,
            n_slots: 60,
            v_max: 10.0,
            p_max,
            p_bar: p_max / 2.0,
            xi0: db_to_linear(60.0),
            blocklength: 400.0,
            eps_b: 1e-5,
            eps_e: 1e-2,
            tau: 1e-6,
            max_iter: 100,
        }
    }

    /// Same scenario with a different flight period; the slot count is
    /// recomputed and the slot duration kept.
    pub fn with_period(&self, period: f64) -> Result<Self, ScenarioError> {
        let mut cfg = self.clone();
        cfg.period = period;
        cfg.n_slots = slots_for(period, self.delta_t)?;
        cfg.period = cfg.n_slots as f64 * cfg.delta_t;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_blocklength(&self, blocklength: f64) -> Result<Self, ScenarioError> {
        let mut cfg = self.clone();
        cfg.blocklength = blocklength;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Longest distance the UAV can cover: `v_max * delta_t` per step.
    pub fn step_limit(&self) -> f64 {
        self.v_max * self.delta_t
    }

    /// Squared 3-D distance from horizontal point `xy` at the flight
    /// altitude to a ground node.
    pub fn distance_sq(&self, xy: [f64; 2], node: &Position) -> f64 {
        let dx = xy[0] - node.x;
        let dy = xy[1] - node.y;
        let dz = self.altitude - node.z;
        dx * dx + dy * dy + dz * dz
    }

    /// Checks every invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.altitude > 0.0 && self.altitude.is_finite()) {
            return Err(ScenarioError::Altitude(self.altitude));
        }
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(ScenarioError::SlotDuration(self.delta_t));
        }
        let n = slots_for(self.period, self.delta_t)?;
        if n != self.n_slots || self.period != n as f64 * self.delta_t {
            return Err(ScenarioError::Period { period: self.period, delta_t: self.delta_t });
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(ScenarioError::Speed(self.v_max));
        }
        if !(self.p_bar > 0.0 && self.p_bar <= self.p_max && self.p_max.is_finite()) {
            return Err(ScenarioError::Power { p_bar: self.p_bar, p_max: self.p_max });
        }
        if !(self.xi0 > 0.0 && self.xi0.is_finite()) {
            return Err(ScenarioError::ReferenceSnr(self.xi0));
        }
        if !(self.blocklength >= 1.0 && self.blocklength.is_finite()) {
            return Err(ScenarioError::Blocklength(self.blocklength));
        }
        for (name, value) in [("eps_b", self.eps_b), ("eps_e", self.eps_e)] {
            if !(value > 0.0 && value < 0.5) {
                return Err(ScenarioError::Probability { name, value });
            }
        }
        if !(self.tau > 0.0) {
            return Err(ScenarioError::Tau(self.tau));
        }
        if self.max_iter == 0 {
            return Err(ScenarioError::MaxIter);
        }
        for (name, q) in [("q_I", &self.q_init), ("q_F", &self.q_final)] {
            if q.z != self.altitude {
                return Err(ScenarioError::UavAltitude { name, altitude: self.altitude, z: q.z });
            }
        }
        for (name, w) in [("w_b", &self.w_b), ("w_e", &self.w_e)] {
            if w.z != 0.0 {
                return Err(ScenarioError::GroundNode { name, z: w.z });
            }
        }
        let distance = self.q_init.distance_sq(&self.q_final).sqrt();
        if self.n_slots == 1 {
            if distance != 0.0 {
                return Err(ScenarioError::SingleSlot);
            }
        } else {
            let reach = self.step_limit() * (self.n_slots - 1) as f64;
            if distance > reach {
                return Err(ScenarioError::Unreachable { distance, reach });
            }
        }
        Ok(())
    }
}

fn slots_for(period: f64, delta_t: f64) -> Result<usize, ScenarioError> {
    let err = ScenarioError::Period { period, delta_t };
    if !(period > 0.0 && period.is_finite()) {
        return Err(err);
    }
    let n = (period / delta_t).round();
    if n < 1.0 || (n * delta_t - period).abs() > 1e-9 * period {
        return Err(err);
    }
    Ok(n as usize)
}

/// Horizontal UAV positions, one per slot, at the scenario altitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Per-slot speed `|q[n+1] - q[n]| / delta_t`; the last slot reports 0.
    pub fn speeds(&self, delta_t: f64) -> Vec<f64> {
        let mut out: Vec<f64> =
            self.points.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) / delta_t).collect();
        if !self.points.is_empty() {
            out.push(0.0);
        }
        out
    }

    pub fn reversed(&self) -> Self {
        Self { points: self.points.iter().rev().copied().collect() }
    }
}

/// Per-slot transmit power, W.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile {
    pub p: Vec<f64>,
}

impl PowerProfile {
    pub fn new(p: Vec<f64>) -> Self {
        Self { p }
    }

    pub fn uniform(n: usize, power: f64) -> Self {
        Self { p: vec![power; n] }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.p.is_empty() {
            return 0.0;
        }
        self.p.iter().sum::<f64>() / self.p.len() as f64
    }

    pub fn reversed(&self) -> Self {
        Self { p: self.p.iter().rev().copied().collect() }
    }
}

/// Slack variables of the relaxed problem.
///
/// `u_*` upper-bound the SNRs, `z_*` upper-bound the square roots of the
/// channel dispersions, and `l_*` lower-bound the squared distances (the
/// latter only exist while the trajectory is a decision variable).
#[derive(Debug, Clone, PartialEq)]
pub struct SlackState {
    pub u_b: Vec<f64>,
    pub u_e: Vec<f64>,
    pub z_b: Vec<f64>,
    pub z_e: Vec<f64>,
    pub l_b: Option<Vec<f64>>,
    pub l_e: Option<Vec<f64>>,
}

impl SlackState {
    pub fn len(&self) -> usize {
        self.u_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_b.is_empty()
    }
}

/// Which constraint a [`Violation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    SlotCount,
    MaxSpeed,
    InitialPosition,
    FinalPosition,
    InstantaneousPower,
    AveragePower,
}

impl ConstraintKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::SlotCount => "slot-count",
            ConstraintKind::MaxSpeed => "max-speed",
            ConstraintKind::InitialPosition => "initial-position",
            ConstraintKind::FinalPosition => "final-position",
            ConstraintKind::InstantaneousPower => "instantaneous-power",
            ConstraintKind::AveragePower => "average-power",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ConstraintKind,
    /// Zero-based slot, or `None` for constraints over the whole flight.
    pub slot: Option<usize>,
    pub excess: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(n) => write!(f, "{} violated at slot {} by {:e}", self.kind.name(), n, self.excess),
            None => write!(f, "{} violated by {:e}", self.kind.name(), self.excess),
        }
    }
}

/// Slack allowed on the per-step displacement and endpoint checks, m.
pub const POSITION_SLACK: f64 = 1e-9;
/// Slack allowed on the power checks, W.
pub const POWER_SLACK: f64 = 1e-12;

/// Lists every mobility and power constraint that `traj` and `pw` break.
pub fn validate(traj: &Trajectory, pw: &PowerProfile, cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = cfg.n_slots;
    if traj.len() != n || pw.len() != n {
        out.push(Violation {
            kind: ConstraintKind::SlotCount,
            slot: None,
            excess: (traj.len().abs_diff(n) + pw.len().abs_diff(n)) as f64,
        });
        return out;
    }
    let limit = cfg.step_limit();
    for (k, w) in traj.points.windows(2).enumerate() {
        let step = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if step > limit + POSITION_SLACK {
            out.push(Violation { kind: ConstraintKind::MaxSpeed, slot: Some(k), excess: step - limit });
        }
    }
    let endpoint = |xy: [f64; 2], target: &Position| (xy[0] - target.x).hypot(xy[1] - target.y);
    if let (Some(first), Some(last)) = (traj.points.first(), traj.points.last()) {
        let d = endpoint(*first, &cfg.q_init);
        if d > POSITION_SLACK {
            out.push(Violation { kind: ConstraintKind::InitialPosition, slot: Some(0), excess: d });
        }
        let d = endpoint(*last, &cfg.q_final);
        if d > POSITION_SLACK {
            out.push(Violation { kind: ConstraintKind::FinalPosition, slot: Some(n - 1), excess: d });
        }
    }
    for (k, &p) in pw.p.iter().enumerate() {
        if p.is_nan() || p < -POWER_SLACK || p > cfg.p_max + POWER_SLACK {
            let excess = if p < 0.0 { -p } else { p - cfg.p_max };
            out.push(Violation { kind: ConstraintKind::InstantaneousPower, slot: Some(k), excess });
        }
    }
    let mean = pw.mean();
    if mean > cfg.p_bar + POWER_SLACK {
        out.push(Violation { kind: ConstraintKind::AveragePower, slot: None, excess: mean - cfg.p_bar });
    }
    out
}

pub(crate) fn check_lengths(traj: &Trajectory, pw: &PowerProfile) -> Result<(), ModelError> {
    if traj.len() != pw.len() {
        return Err(ModelError::LengthMismatch { trajectory: traj.len(), power: pw.len() });
    }
    Ok(())
}
