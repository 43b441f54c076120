//! Command-line front end: `run`, `sweep` and `validate`.
//!
//! Exit codes follow the BSD `sysexits` convention where one applies:
//!
//! | code | meaning                                           |
//! |------|---------------------------------------------------|
//! | 0    | success                                           |
//! | 1    | a solver failure, or `validate` found violations  |
//! | 2    | the output directory could not be written         |
//! | 64   | bad command line                                  |
//! | 65   | bad configuration or input data                   |

mod config;
mod output;

pub use config::{echo_config, parse_config, parse_config_str, ConfigError};
pub use output::{
    iterations_csv, power_csv, read_power, read_trajectory, real, sweep_csv, trajectory_csv, write_bundle,
};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::driver::{run_scheme, sweep, SchemeId, SweepParam};
use crate::model::{validate, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_OUTPUT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;

/// Name of the resolved-scenario file written next to every result.
pub const SCENARIO_FILE: &str = "scenario.cfg";

#[derive(Debug, Parser)]
#[command(name = "uav-secrecy", version, about = "Secure UAV trajectory and power design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Scenario file; reference values are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Overrides the fractional-increase threshold.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimise one scheme and write trajectory, power and iteration logs.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "jtpo", value_parser = parse_scheme)]
        scheme: SchemeId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all schemes over a list of flight periods or blocklengths.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        /// Comma-separated values, e.g. `42,48,54,60`.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a trajectory/power pair against the mobility and power limits.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        power: PathBuf,
    },
}

fn parse_scheme(s: &str) -> Result<SchemeId, String> {
    s.parse()
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    s.parse()
}

/// Runs the command line `args` (program name first), writing to the given
/// streams, and returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(stderr, "{e}") } else { write!(stdout, "{e}") };
            return code;
        }
    };
    match cli.command {
        Command::Run { common, scheme, out } => match load(&common, stderr) {
            Ok(cfg) => cmd_run(&cfg, scheme, &out, stdout, stderr),
            Err(code) => code,
        },
        Command::Sweep { common, param, values, out } => {
            let values = match parse_values(&values) {
                Ok(v) => v,
                Err(msg) => {
                    let _ = writeln!(stderr, "error: {msg}");
                    return EXIT_USAGE;
                }
            };
            match load(&common, stderr) {
                Ok(cfg) => cmd_sweep(&cfg, param, &values, &out, stderr),
                Err(code) => code,
            }
        }
        Command::Validate { common, trajectory, power } => match load(&common, stderr) {
            Ok(cfg) => cmd_validate(&cfg, &trajectory, &power, stdout, stderr),
            Err(code) => code,
        },
    }
}

fn parse_values(s: &str) -> Result<Vec<f64>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if items.is_empty() {
        return Err("--values needs at least one number".into());
    }
    items.iter().map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` in --values is not a number"))).collect()
}

fn load(common: &Common, stderr: &mut dyn Write) -> Result<ScenarioConfig, i32> {
    let parsed = match &common.config {
        Some(path) => parse_config(path),
        None => parse_config_str(""),
    };
    let mut cfg = parsed.map_err(|e| {
        let _ = writeln!(stderr, "error: {e}");
        EXIT_DATA
    })?;
    if let Some(m) = common.max_iter {
        cfg.max_iter = m;
    }
    if let Some(t) = common.tol {
        cfg.tau = t;
    }
    cfg.validate().map_err(|e| {
        let _ = writeln!(stderr, "error: invalid scenario: {e}");
        EXIT_DATA
    })?;
    Ok(cfg)
}

/// Optimises `scheme` and writes `trajectory.csv`, `power.csv`,
/// `iterations.csv` and the scenario echo into `out`.
pub fn cmd_run(
    cfg: &ScenarioConfig,
    scheme: SchemeId,
    out: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let run = match run_scheme(cfg, scheme) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_DATA;
        }
    };
    if let Some(f) = &run.failure {
        let _ = writeln!(stderr, "error: solver failure: {f}");
        return EXIT_FAILURE;
    }
    let files = (|| -> Result<_, csv::Error> {
        Ok(vec![
            ("trajectory.csv", trajectory_csv(&run.trajectory, cfg)?),
            ("power.csv", power_csv(&run.power)?),
            ("iterations.csv", iterations_csv(&run)?),
            (SCENARIO_FILE, echo_config(cfg).into_bytes()),
        ])
    })();
    let files = match files {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_FAILURE;
        }
    };
    if let Err(e) = write_bundle(out, &files) {
        let _ = writeln!(stderr, "error: cannot write {}: {e}", out.display());
        return EXIT_OUTPUT;
    }
    let _ = writeln!(stdout, "{:.6}", run.aesr);
    EXIT_OK
}

/// Runs every scheme at every value and writes `sweep.csv` and the scenario
/// echo. Succeeds when at least one row does.
pub fn cmd_sweep(cfg: &ScenarioConfig, param: SweepParam, values: &[f64], out: &Path, stderr: &mut dyn Write) -> i32 {
    if values.is_empty() {
        let _ = writeln!(stderr, "error: no sweep values");
        return EXIT_USAGE;
    }
    let rows = sweep(cfg, param, values);
    for r in &rows {
        if let Err(e) = &r.aesr {
            let _ = writeln!(stderr, "warning: {} at {}={}: {e}", r.scheme, param.name(), r.value);
        }
    }
    let csv = match sweep_csv(&rows) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_FAILURE;
        }
    };
    if let Err(e) = write_bundle(out, &[("sweep.csv", csv), (SCENARIO_FILE, echo_config(cfg).into_bytes())]) {
        let _ = writeln!(stderr, "error: cannot write {}: {e}", out.display());
        return EXIT_OUTPUT;
    }
    if rows.iter().any(|r| r.aesr.is_ok()) {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

/// Lists every violated constraint of a trajectory/power pair.
pub fn cmd_validate(
    cfg: &ScenarioConfig,
    trajectory: &Path,
    power: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let (traj, pw) = match (read_trajectory(trajectory), read_power(power)) {
        (Ok(t), Ok(p)) => (t, p),
        (Err(e), _) | (_, Err(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_DATA;
        }
    };
    let violations = validate(&traj, &pw, cfg);
    if violations.is_empty() {
        let _ = writeln!(stdout, "ok");
        return EXIT_OK;
    }
    for v in &violations {
        let _ = writeln!(stdout, "{v}");
    }
    EXIT_FAILURE
}
