//! Closed-form link quantities: SNR, channel dispersion, the
//! finite-blocklength secrecy-rate bound and its flight average.

use std::f64::consts::{LN_2, SQRT_2};

use super::scenario::{check_lengths, PowerProfile, ScenarioConfig, Trajectory};
use super::ModelError;

/// Gaussian tail probability `Q(x) = P[N(0,1) > x]`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Inverse of [`q_function`] on (0, 1).
///
/// A rational approximation of the normal quantile gives a starting point
/// good to about 1e-9 relative; Newton steps on `Q(x) - p`, guarded by a
/// shrinking bisection bracket, then finish the job.
pub fn q_inv(p: f64) -> Result<f64, ModelError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ModelError::Domain { what: "q_inv", value: p });
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return q_inv(1.0 - p).map(|x| -x);
    }
    let target = |x: f64| q_function(x) - p;
    let mut x = -normal_quantile_guess(p);
    // Q is decreasing: target(lo) > 0 > target(hi).
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    for _ in 0..100 {
        let r = target(x);
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut next = x + r / density;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) || hi - lo <= 1e-15 * hi {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Acklam's rational approximation to the standard normal quantile.
fn normal_quantile_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Received SNR `xi0 * P / |q - w|^2` for 3-D positions.
pub fn snr(power: f64, q: [f64; 3], w: [f64; 3], xi0: f64) -> Result<f64, ModelError> {
    let d2: f64 = (0..3).map(|k| (q[k] - w[k]).powi(2)).sum();
    if d2 == 0.0 {
        return Err(ModelError::Domain { what: "snr distance", value: d2 });
    }
    if power < 0.0 {
        return Err(ModelError::Domain { what: "snr power", value: power });
    }
    Ok(xi0 * power / d2)
}

/// Channel dispersion `1 - (1 + gamma)^-2`.
pub fn dispersion(gamma: f64) -> Result<f64, ModelError> {
    if !(gamma >= 0.0) {
        return Err(ModelError::Domain { what: "dispersion", value: gamma });
    }
    Ok(dispersion_unchecked(gamma))
}

#[inline]
pub(crate) fn dispersion_unchecked(gamma: f64) -> f64 {
    // 1 - 1/(1+g)^2 = g (2 + g) / (1 + g)^2, without cancellation at small g
    gamma * (2.0 + gamma) / ((1.0 + gamma) * (1.0 + gamma))
}

/// Whether the rate carries the finite-blocklength back-off terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateModel {
    #[default]
    FiniteBlocklength,
    /// The `L -> infinity` limit: plain log-difference secrecy rate.
    InfiniteBlocklength,
}

/// Coefficients multiplying `sqrt(V_b)` and `sqrt(V_e)` in the rate,
/// `Q^-1(eps) / (sqrt(L) ln 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub bob: f64,
    pub eve: f64,
}

impl Penalty {
    pub fn new(cfg: &ScenarioConfig, model: RateModel) -> Result<Self, ModelError> {
        match model {
            RateModel::InfiniteBlocklength => Ok(Self { bob: 0.0, eve: 0.0 }),
            RateModel::FiniteBlocklength => {
                let scale = 1.0 / (cfg.blocklength.sqrt() * LN_2);
                Ok(Self { bob: q_inv(cfg.eps_b)? * scale, eve: q_inv(cfg.eps_e)? * scale })
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bob == 0.0 && self.eve == 0.0
    }
}

/// Secrecy rate before the `max(., 0)` clamp, bits per channel use.
pub fn secrecy_rate_raw(gamma_b: f64, gamma_e: f64, penalty: &Penalty) -> f64 {
    (gamma_b.ln_1p() - gamma_e.ln_1p()) / LN_2
        - penalty.bob * dispersion_unchecked(gamma_b).sqrt()
        - penalty.eve * dispersion_unchecked(gamma_e).sqrt()
}

/// Finite-blocklength secrecy-rate lower bound, clamped at zero.
pub fn secrecy_rate_lb(gamma_b: f64, gamma_e: f64, cfg: &ScenarioConfig) -> Result<f64, ModelError> {
    for g in [gamma_b, gamma_e] {
        if !(g >= 0.0) {
            return Err(ModelError::Domain { what: "secrecy_rate_lb snr", value: g });
        }
    }
    let penalty = Penalty::new(cfg, RateModel::FiniteBlocklength)?;
    Ok(secrecy_rate_raw(gamma_b, gamma_e, &penalty).max(0.0))
}

/// SNRs at the legitimate receiver and the eavesdropper, slot by slot.
pub fn slot_snrs(traj: &Trajectory, pw: &PowerProfile, cfg: &ScenarioConfig) -> Vec<(f64, f64)> {
    traj.points
        .iter()
        .zip(&pw.p)
        .map(|(&xy, &p)| (cfg.xi0 * p / cfg.distance_sq(xy, &cfg.w_b), cfg.xi0 * p / cfg.distance_sq(xy, &cfg.w_e)))
        .collect()
}

/// Unclamped per-slot secrecy rate under `model`.
pub fn slot_rates(
    traj: &Trajectory,
    pw: &PowerProfile,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<Vec<f64>, ModelError> {
    check_lengths(traj, pw)?;
    let penalty = Penalty::new(cfg, model)?;
    Ok(slot_snrs(traj, pw, cfg).into_iter().map(|(gb, ge)| secrecy_rate_raw(gb, ge, &penalty)).collect())
}

/// Average effective secrecy rate: the clamped slot rates averaged over the
/// flight and discounted by the decoding success probability `1 - eps_b`.
pub fn aesr(traj: &Trajectory, pw: &PowerProfile, cfg: &ScenarioConfig) -> Result<f64, ModelError> {
    aesr_with(traj, pw, cfg, RateModel::FiniteBlocklength)
}

pub fn aesr_with(
    traj: &Trajectory,
    pw: &PowerProfile,
    cfg: &ScenarioConfig,
    model: RateModel,
) -> Result<f64, ModelError> {
    let rates = slot_rates(traj, pw, cfg, model)?;
    if rates.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = rates.iter().map(|r| r.max(0.0)).sum();
    Ok(total / rates.len() as f64 * (1.0 - cfg.eps_b))
}
