//! Flat `key = value` scenario files.
//!
//! ```text
//! # comments start with '#'
//! T       = 60          # flight period, s
//! P_max   = 20dbm       # or plain watts: 0.1
//! xi0     = 60db        # or a linear ratio: 1e6
//! q_I     = 200,100     # a third component must equal H
//! ```
//!
//! Keys are case-insensitive. Missing keys take the reference values.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::model::{db_to_linear, dbm_to_watt, Position, ScenarioConfig, ScenarioError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
}

const KEYS: [&str; 16] = [
    "t", "delta_t", "h", "v_max", "p_max", "p_bar", "xi0", "l", "eps_b", "eps_e", "tau", "max_iter", "w_b", "w_e",
    "q_i", "q_f",
];

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let key = key.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line, key });
        }
        if !seen.insert(key.clone()) {
            return Err(ConfigError::Duplicate { line, key });
        }
        entries.push((line, key, value.trim().to_string()));
    }
    let get = |k: &str| entries.iter().find(|e| e.1 == k);
    let bad = |e: &(usize, String, String), msg: String| ConfigError::Value { line: e.0, key: e.1.clone(), msg };
    let real = |k: &str, default: f64| -> Result<f64, ConfigError> {
        match get(k) {
            None => Ok(default),
            Some(e) => parse_real(&e.2).map_err(|m| bad(e, m)),
        }
    };

    let reference = ScenarioConfig::reference();
    let altitude = real("h", reference.altitude)?;
    let delta_t = real("delta_t", reference.delta_t)?;
    let period = real("t", reference.period)?;
    let v_max = real("v_max", reference.v_max)?;
    let p_max = match get("p_max") {
        None => reference.p_max,
        Some(e) => parse_power(&e.2).map_err(|m| bad(e, m))?,
    };
    let p_bar = match get("p_bar") {
        None => p_max / 2.0,
        Some(e) => parse_power(&e.2).map_err(|m| bad(e, m))?,
    };
    let xi0 = match get("xi0") {
        None => reference.xi0,
        Some(e) => parse_ratio(&e.2).map_err(|m| bad(e, m))?,
    };
    let position = |k: &str, default: Position, z_default: f64| -> Result<Position, ConfigError> {
        match get(k) {
            None => Ok(Position::new(default.x, default.y, z_default)),
            Some(e) => parse_position(&e.2, z_default).map_err(|m| bad(e, m)),
        }
    };
    let max_iter = match get("max_iter") {
        None => reference.max_iter,
        Some(e) => e.2.parse::<usize>().map_err(|err| bad(e, err.to_string()))?,
    };

    let mut cfg = ScenarioConfig {
        w_b: position("w_b", reference.w_b, 0.0)?,
        w_e: position("w_e", reference.w_e, 0.0)?,
        q_init: position("q_i", reference.q_init, altitude)?,
        q_final: position("q_f", reference.q_final, altitude)?,
        altitude,
        period,
        delta_t,
        n_slots: 0,
        v_max,
        p_max,
        p_bar,
        xi0,
        blocklength: real("l", reference.blocklength)?,
        eps_b: real("eps_b", reference.eps_b)?,
        eps_e: real("eps_e", reference.eps_e)?,
        tau: real("tau", reference.tau)?,
        max_iter,
    };
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(ScenarioError::SlotDuration(delta_t).into());
    }
    cfg = cfg.with_period(period)?;
    Ok(cfg)
}

fn parse_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_nan() {
        return Err("NaN is not allowed".into());
    }
    Ok(v)
}

/// Watts, or dBm with a `dbm` suffix; a trailing `w` is accepted.
fn parse_power(s: &str) -> Result<f64, String> {
    let lower = s.trim().to_ascii_lowercase();
    if let Some(v) = lower.strip_suffix("dbm") {
        return parse_real(v).map(dbm_to_watt);
    }
    parse_real(lower.strip_suffix('w').unwrap_or(&lower))
}

/// Linear ratio, or decibels with a `db` suffix.
fn parse_ratio(s: &str) -> Result<f64, String> {
    let lower = s.trim().to_ascii_lowercase();
    match lower.strip_suffix("db") {
        Some(v) => parse_real(v).map(db_to_linear),
        None => parse_real(&lower),
    }
}

fn parse_position(s: &str, z_default: f64) -> Result<Position, String> {
    let parts: Vec<f64> = s.split(',').map(parse_real).collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y] => Ok(Position::new(*x, *y, z_default)),
        [x, y, z] => Ok(Position::new(*x, *y, *z)),
        _ => Err(format!("expected 2 or 3 comma-separated numbers, got {}", parts.len())),
    }
}

/// Resolved scenario in the same format, in base units, so that
/// [`parse_config_str`] reproduces it exactly.
pub fn echo_config(cfg: &ScenarioConfig) -> String {
    let mut s = String::new();
    let pos = |p: &Position| format!("{:?},{:?},{:?}", p.x, p.y, p.z);
    let _ = writeln!(s, "# resolved scenario; powers in W, xi0 linear, N = {}", cfg.n_slots);
    let _ = writeln!(s, "T = {:?}", cfg.period);
    let _ = writeln!(s, "delta_t = {:?}", cfg.delta_t);
    let _ = writeln!(s, "H = {:?}", cfg.altitude);
    let _ = writeln!(s, "V_max = {:?}", cfg.v_max);
    let _ = writeln!(s, "P_max = {:?}", cfg.p_max);
    let _ = writeln!(s, "P_bar = {:?}", cfg.p_bar);
    let _ = writeln!(s, "xi0 = {:?}", cfg.xi0);
    let _ = writeln!(s, "L = {:?}", cfg.blocklength);
    let _ = writeln!(s, "eps_b = {:?}", cfg.eps_b);
    let _ = writeln!(s, "eps_e = {:?}", cfg.eps_e);
    let _ = writeln!(s, "tau = {:?}", cfg.tau);
    let _ = writeln!(s, "max_iter = {}", cfg.max_iter);
    let _ = writeln!(s, "w_b = {}", pos(&cfg.w_b));
    let _ = writeln!(s, "w_e = {}", pos(&cfg.w_e));
    let _ = writeln!(s, "q_I = {}", pos(&cfg.q_init));
    let _ = writeln!(s, "q_F = {}", pos(&cfg.q_final));
    s
}
