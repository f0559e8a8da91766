//! Tables and time series built from run logs alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tightstack::sim::{aggregate_stats, summarize_log, Failure, GroupStats, RunSummary};

#[derive(Serialize)]
struct RunEntry {
    file: String,
    #[serde(flatten)]
    summary: RunSummary,
}

#[derive(Serialize)]
struct Bundle {
    groups: Vec<GroupStats>,
    runs: Vec<RunEntry>,
}

/// Run logs directly inside `dir`, sorted by name.
pub fn find_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    let mut logs = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_file() && name.ends_with(".csv") && !name.ends_with(".timing.csv") {
            logs.push(path);
        }
    }
    logs.sort();
    Ok(logs)
}

fn failure_text(f: &Option<Failure>) -> String {
    match f {
        None => String::new(),
        Some(f) => {
            let kind = serde_json::to_value(f.kind)
                .ok()
                .and_then(|v| v.as_str().map(String::from));
            kind.unwrap_or_default()
        }
    }
}

/// Write `summary.csv`, `runs.csv`, `failures.csv`, `report.json` and one
/// z/thrust series per run into `out`. Returns the group statistics.
pub fn write_report(logs: &[PathBuf], out: &Path) -> Result<Vec<GroupStats>> {
    if logs.is_empty() {
        bail!("no runs found");
    }
    let series_dir = out.join("series");
    std::fs::create_dir_all(&series_dir)
        .with_context(|| format!("cannot create {}", series_dir.display()))?;

    let mut runs = Vec::with_capacity(logs.len());
    let mut runs_csv = String::from("file,group,seed,vehicle,role,variant,rmse,z_max,failure\n");
    let mut failures_csv = String::from("file,group,seed,kind,time,vehicles\n");
    for path in logs {
        let (log, summary) = summarize_log(path)?;
        let file = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        for v in &summary.vehicles {
            let _ = writeln!(
                runs_csv,
                "{file},{},{},{},{},{},{},{},{}",
                summary.group,
                summary.seed,
                v.index,
                v.role,
                v.variant,
                v.rmse,
                v.z_max,
                failure_text(&summary.failure)
            );
        }
        if let Some(f) = &summary.failure {
            let ids: Vec<String> = f.vehicles.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                failures_csv,
                "{file},{},{},{},{},{}",
                summary.group,
                summary.seed,
                failure_text(&summary.failure),
                f.time,
                ids.join(" ")
            );
        }
        let mut series = String::from("t,vehicle,role,z,z_ref,u_gamma\n");
        for (i, rows) in log.rows.iter().enumerate() {
            let role = summary
                .vehicles
                .iter()
                .find(|v| v.index == i)
                .map_or("", |v| v.role.as_str());
            for r in rows {
                let _ = writeln!(
                    series,
                    "{},{i},{role},{},{},{}",
                    r.t, r.p.z, r.p_ref.z, r.u[0]
                );
            }
        }
        let stem = file.trim_end_matches(".csv");
        std::fs::write(series_dir.join(format!("{stem}.z_thrust.csv")), series)?;
        runs.push(RunEntry { file, summary });
    }

    let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let groups = aggregate_stats(&summaries)?;
    let mut summary_csv = String::from(
        "group,config_hash,role,variant,runs,failed,rmse_mean,rmse_std,z_max_mean,z_max_std\n",
    );
    for g in &groups {
        for v in &g.vehicles {
            let _ = writeln!(
                summary_csv,
                "{},{},{},{},{},{},{},{},{},{}",
                g.group,
                g.config_hash,
                v.role,
                v.variant,
                g.runs,
                g.failed,
                v.rmse_mean,
                v.rmse_std,
                v.z_max_mean,
                v.z_max_std
            );
        }
    }
    std::fs::write(out.join("summary.csv"), summary_csv)?;
    std::fs::write(out.join("runs.csv"), runs_csv)?;
    std::fs::write(out.join("failures.csv"), failures_csv)?;
    let bundle = Bundle {
        groups: groups.clone(),
        runs,
    };
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&bundle)? + "\n",
    )?;
    Ok(groups)
}

/// Human-readable table of the group statistics.
pub fn format_table(groups: &[GroupStats]) -> String {
    let mut out = String::new();
    for g in groups {
        let _ = writeln!(out, "{} ({} runs, {} failed)", g.group, g.runs, g.failed);
        for v in &g.vehicles {
            let _ = writeln!(
                out,
                "  {:<7} {:<16} rmse {:.4} ± {:.4} m   z_max {:.4} ± {:.4} m",
                v.role, v.variant, v.rmse_mean, v.rmse_std, v.z_max_mean, v.z_max_std
            );
        }
    }
    out
}
