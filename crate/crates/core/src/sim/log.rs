//! Run logs (CSV with a `#` header block), metrics summaries (JSON) and
//! solver timing files.
//!
//! Floats are written in Rust's shortest round-trip form, so parsing a log
//! reproduces every stored value exactly. Wall-clock timing lives in its own
//! file; the run log is a pure function of scenario and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{Failure, LogRow, RunRecord};
use crate::error::{Error, Result};

pub const LOG_MAGIC: &str = "# tightstack run log v1";

const COLUMNS: [&str; 33] = [
    "vehicle",
    "t",
    "px",
    "py",
    "pz",
    "vx",
    "vy",
    "vz",
    "qx",
    "qy",
    "qz",
    "qw",
    "px_ref",
    "py_ref",
    "pz_ref",
    "u_gamma",
    "wx",
    "wy",
    "wz",
    "sigma_hat_x",
    "sigma_hat_y",
    "sigma_hat_z",
    "u_sigma_x",
    "u_sigma_y",
    "u_sigma_z",
    "force_x",
    "force_y",
    "force_z",
    "kkt",
    "qp_iterations",
    "active_set",
    "status",
    "l1_reset",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub index: usize,
    pub role: String,
    pub variant: String,
    pub rate_hz: f64,
    pub control_updates: usize,
    pub rmse: f64,
    pub z_max: f64,
}

/// Contents of a metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub group: String,
    pub config_hash: String,
    pub seed: u64,
    pub failure: Option<Failure>,
    pub vehicles: Vec<VehicleSummary>,
}

impl RunSummary {
    pub fn from_record(record: &RunRecord) -> Self {
        Self {
            group: record.group.clone(),
            config_hash: record.config_hash.clone(),
            seed: record.seed,
            failure: record.failure.clone(),
            vehicles: record
                .vehicles
                .iter()
                .zip(&record.metrics)
                .enumerate()
                .map(|(i, (s, m))| VehicleSummary {
                    index: i,
                    role: s.role.clone(),
                    variant: s.variant.as_str().into(),
                    rate_hz: s.rate_hz,
                    control_updates: s.rows.len(),
                    rmse: m.rmse,
                    z_max: m.z_max,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunFiles {
    pub log: PathBuf,
    pub metrics: PathBuf,
    pub timing: PathBuf,
}

pub fn run_stem(record: &RunRecord) -> String {
    format!("{}_seed{}", record.group, record.seed)
}

pub fn format_log(record: &RunRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{LOG_MAGIC}");
    let _ = writeln!(out, "# group {}", record.group);
    let _ = writeln!(out, "# config_hash {}", record.config_hash);
    let _ = writeln!(out, "# seed {}", record.seed);
    let _ = writeln!(out, "# duration {}", record.duration);
    let _ = writeln!(
        out,
        "# tracking_window {} {}",
        record.tracking_window.0, record.tracking_window.1
    );
    for (i, s) in record.vehicles.iter().enumerate() {
        let sign = record.compensation_signs.get(i).cloned().flatten();
        let _ = writeln!(
            out,
            "# vehicle {i} role={} variant={} rate_hz={} compensation_sign={}",
            s.role,
            s.variant.as_str(),
            s.rate_hz,
            sign.as_deref().unwrap_or("none")
        );
    }
    match &record.failure {
        None => out.push_str("# failure none\n"),
        Some(f) => {
            let ids: Vec<String> = f.vehicles.iter().map(|v| v.to_string()).collect();
            let kind = serde_json::to_value(f.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "# failure {kind} t={} vehicles={}",
                f.time,
                ids.join(",")
            );
        }
    }
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for (i, s) in record.vehicles.iter().enumerate() {
        for r in &s.rows {
            let mut fields: Vec<String> = vec![i.to_string(), r.t.to_string()];
            let floats =
                r.p.iter()
                    .chain(r.v.iter())
                    .chain(r.q.iter())
                    .chain(r.p_ref.iter())
                    .chain(r.u.iter())
                    .chain(r.sigma_hat.iter())
                    .chain(r.u_sigma.iter())
                    .chain(r.plant_force.iter())
                    .chain(std::iter::once(&r.kkt));
            fields.extend(floats.map(|v| v.to_string()));
            fields.push(r.qp_iterations.to_string());
            fields.push(r.active_set.to_string());
            fields.push(r.status.to_string());
            fields.push(u8::from(r.l1_reset).to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    out
}

/// Write `<group>_seed<seed>.csv`, `.metrics.json` and `.timing.csv` into `dir`.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<RunFiles> {
    std::fs::create_dir_all(dir)?;
    let stem = run_stem(record);
    let files = RunFiles {
        log: dir.join(format!("{stem}.csv")),
        metrics: dir.join(format!("{stem}.metrics.json")),
        timing: dir.join(format!("{stem}.timing.csv")),
    };
    std::fs::write(&files.log, format_log(record))?;
    let summary = RunSummary::from_record(record);
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidState(e.to_string()))?;
    std::fs::write(&files.metrics, json + "\n")?;
    let mut timing = String::from("vehicle,tick,solve_seconds\n");
    for (i, times) in record.solve_times.iter().enumerate() {
        for (k, s) in times.iter().enumerate() {
            let _ = writeln!(timing, "{i},{k},{s}");
        }
    }
    std::fs::write(&files.timing, timing)?;
    Ok(files)
}

pub fn read_metrics(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Log {
        path: path.to_path_buf(),
        row: e.line(),
        message: e.to_string(),
    })
}

/// A parsed run log.
#[derive(Clone, Debug)]
pub struct LogFile {
    pub header: Vec<(String, String)>,
    /// Rows per vehicle index.
    pub rows: Vec<Vec<LogRow>>,
}

impl LogFile {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tracking_window(&self) -> Option<(f64, f64)> {
        let v = self.header_value("tracking_window")?;
        let mut it = v.split_whitespace().map(|s| s.parse::<f64>());
        match (it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b))) => Some((a, b)),
            _ => None,
        }
    }
}

pub fn read_log(path: &Path) -> Result<LogFile> {
    let text = std::fs::read_to_string(path)?;
    let err = |row: usize, message: String| Error::Log {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == LOG_MAGIC => {}
        _ => return Err(err(1, "missing run-log header".into())),
    }
    let mut header = Vec::new();
    let mut saw_columns = false;
    let mut rows: Vec<Vec<LogRow>> = Vec::new();
    for (idx, line) in lines {
        let row_no = idx + 1;
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            header.push((k.to_string(), v.to_string()));
            continue;
        }
        if !saw_columns {
            if line != COLUMNS.join(",") {
                return Err(err(row_no, "unexpected column header".into()));
            }
            saw_columns = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(err(
                row_no,
                format!("expected {} fields, found {}", COLUMNS.len(), fields.len()),
            ));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| err(row_no, format!("column {}: {e}", COLUMNS[i])))
        };
        let u = |i: usize| -> Result<usize> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| err(row_no, format!("column {}: {e}", COLUMNS[i])))
        };
        let v3 =
            |i: usize| -> Result<Vector3<f64>> { Ok(Vector3::new(f(i)?, f(i + 1)?, f(i + 2)?)) };
        let vehicle = u(0)?;
        let row = LogRow {
            t: f(1)?,
            p: v3(2)?,
            v: v3(5)?,
            q: Vector4::new(f(8)?, f(9)?, f(10)?, f(11)?),
            p_ref: v3(12)?,
            u: Vector4::new(f(15)?, f(16)?, f(17)?, f(18)?),
            sigma_hat: v3(19)?,
            u_sigma: v3(22)?,
            plant_force: v3(25)?,
            kkt: f(28)?,
            qp_iterations: u(29)?,
            active_set: u(30)?,
            status: u(31)? as u8,
            l1_reset: u(32)? != 0,
        };
        if vehicle >= rows.len() {
            rows.resize(vehicle + 1, Vec::new());
        }
        rows[vehicle].push(row);
    }
    if !saw_columns {
        return Err(err(text.lines().count(), "no column header".into()));
    }
    Ok(LogFile { header, rows })
}

fn parse_failure(v: &str) -> Option<Failure> {
    if v == "none" {
        return None;
    }
    let mut parts = v.split_whitespace();
    let kind = serde_json::from_value(serde_json::Value::String(parts.next()?.to_string())).ok()?;
    let time = parts.next()?.strip_prefix("t=")?.parse().ok()?;
    let vehicles = parts
        .next()?
        .strip_prefix("vehicles=")?
        .split(',')
        .map(|s| s.parse().ok())
        .collect::<Option<Vec<usize>>>()?;
    Some(Failure {
        kind,
        time,
        vehicles,
    })
}

/// Read a run log and recompute its summary from the logged series alone.
pub fn summarize_log(path: &Path) -> Result<(LogFile, RunSummary)> {
    let log = read_log(path)?;
    let bad = |message: String| Error::Log {
        path: path.to_path_buf(),
        row: 0,
        message,
    };
    let get = |key: &str| {
        log.header_value(key)
            .ok_or_else(|| bad(format!("header lacks `{key}`")))
    };
    let seed = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
    let window = log
        .tracking_window()
        .ok_or_else(|| bad("bad tracking_window".into()))?;
    let failure = match get("failure")? {
        "none" => None,
        v => Some(parse_failure(v).ok_or_else(|| bad(format!("bad failure line `{v}`")))?),
    };
    let mut vehicles = Vec::new();
    for (k, v) in &log.header {
        if k != "vehicle" {
            continue;
        }
        let mut it = v.split_whitespace();
        let index: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad vehicle line `{v}`")))?;
        let field = |name: &str| {
            v.split_whitespace()
                .find_map(|kv| kv.strip_prefix(name)?.strip_prefix('='))
                .ok_or_else(|| bad(format!("vehicle line lacks `{name}`")))
        };
        let rows = log.rows.get(index).map(Vec::as_slice).unwrap_or(&[]);
        let errors: Vec<(f64, Vector3<f64>)> = rows.iter().map(|r| (r.t, r.p - r.p_ref)).collect();
        let m = super::compute_metrics(&errors, window)
            .map_err(|e| bad(format!("vehicle {index}: {e}")))?;
        vehicles.push(VehicleSummary {
            index,
            role: field("role")?.to_string(),
            variant: field("variant")?.to_string(),
            rate_hz: field("rate_hz")?
                .parse()
                .map_err(|_| bad("bad rate_hz".into()))?,
            control_updates: rows.len(),
            rmse: m.rmse,
            z_max: m.z_max,
        });
    }
    let summary = RunSummary {
        group: get("group")?.to_string(),
        config_hash: get("config_hash")?.to_string(),
        seed,
        failure,
        vehicles,
    };
    Ok((log, summary))
}
