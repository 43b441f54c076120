//! Scenario description and every closed-form quantity of the link model.

mod rate;
mod scenario;
mod units;

pub(crate) use rate::dispersion_unchecked;
pub use rate::{
    aesr, aesr_with, dispersion, q_function, q_inv, secrecy_rate_lb, secrecy_rate_raw, slot_rates, slot_snrs, snr,
    Penalty, RateModel,
};
pub(crate) use scenario::check_lengths;
pub use scenario::{
    validate, ConstraintKind, Position, PowerProfile, ScenarioConfig, ScenarioError, SlackState, Trajectory, Violation,
    POSITION_SLACK, POWER_SLACK,
};
pub use units::{db_to_linear, dbm_to_watt, linear_to_db, watt_to_dbm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{what}: argument {value} outside the domain")]
    Domain { what: &'static str, value: f64 },
    #[error("trajectory has {trajectory} slots but power profile has {power}")]
    LengthMismatch { trajectory: usize, power: usize },
}
