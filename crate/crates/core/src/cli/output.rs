//! CSV emission and the atomic output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::driver::{RunResult, SweepRow};
use crate::model::{watt_to_dbm, PowerProfile, ScenarioConfig, Trajectory};

/// Number format of every real-valued CSV field (17 significant digits).
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_csv(traj: &Trajectory, cfg: &ScenarioConfig) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "x_m", "y_m", "speed_mps"])?;
    for (k, (p, s)) in traj.points.iter().zip(traj.speeds(cfg.delta_t)).enumerate() {
        w.write_record([(k + 1).to_string(), real(p[0]), real(p[1]), real(s)])?;
    }
    finish(w)
}

pub fn power_csv(pw: &PowerProfile) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "p_watt", "p_dbm"])?;
    for (k, &p) in pw.p.iter().enumerate() {
        w.write_record([(k + 1).to_string(), real(p), real(watt_to_dbm(p))])?;
    }
    finish(w)
}

pub fn iterations_csv(run: &RunResult) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iter", "surrogate_bpcu", "aesr_bpcu", "frac_increase"])?;
    for r in &run.iterations {
        w.write_record([
            r.iter.to_string(),
            real(r.surrogate),
            real(r.aesr),
            r.frac_increase.map(real).unwrap_or_default(),
        ])?;
    }
    finish(w)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scheme", "param_name", "param_value", "aesr_bpcu", "error"])?;
    for r in rows {
        let (aesr, err) = match &r.aesr {
            Ok(v) => (real(*v), String::new()),
            Err(e) => (String::new(), e.clone()),
        };
        w.write_record([r.scheme.tag().to_string(), r.param.name().to_string(), real(r.value), aesr, err])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, csv::Error> {
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Reads the `x_m`/`y_m` columns of a trajectory file.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, String> {
    let cols = read_columns(path, &["x_m", "y_m"])?;
    Ok(Trajectory::new(cols.into_iter().map(|r| [r[0], r[1]]).collect()))
}

/// Reads the `p_watt` column of a power file.
pub fn read_power(path: &Path) -> Result<PowerProfile, String> {
    let cols = read_columns(path, &["p_watt"])?;
    Ok(PowerProfile::new(cols.into_iter().map(|r| r[0]).collect()))
}

fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>, String> {
    let shown = path.display();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{shown}: {e}"))?;
    let headers = rdr.headers().map_err(|e| format!("{shown}: {e}"))?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| headers.iter().position(|h| h.trim() == *n).ok_or(format!("{shown}: missing column `{n}`")))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("{shown}: {e}"))?;
        let vals = idx
            .iter()
            .map(|&i| {
                let field = rec.get(i).unwrap_or("").trim();
                field.parse::<f64>().map_err(|_| format!("{shown}: row {}: `{field}` is not a number", row + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(vals);
    }
    Ok(out)
}

/// Writes a set of files into `dir` so that either all of them appear or
/// none do. Each file goes through a temporary name and a rename.
pub fn write_bundle(dir: &Path, files: &[(&str, Vec<u8>)]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let result = (|| {
        for (name, data) in files {
            let tmp = dir.join(format!(".{name}.tmp"));
            staged.push((tmp.clone(), dir.join(name)));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(data)?;
            f.sync_all()?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        for (tmp, _) in &staged {
            let _ = fs::remove_file(tmp);
        }
        return Err(e);
    }
    let mut done = Vec::new();
    for (tmp, target) in &staged {
        if let Err(e) = fs::rename(tmp, target) {
            for t in &done {
                let _ = fs::remove_file(t);
            }
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            return Err(e);
        }
        done.push(target.clone());
    }
    Ok(())
}
