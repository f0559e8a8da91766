use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::log::RunSummary;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Root-mean-square 3-D position error over the tracking window, m.
    pub rmse: f64,
    /// Largest absolute vertical error over the whole run, m.
    pub z_max: f64,
}

/// Metrics from `(t, position error)` samples.
///
/// If no sample falls inside `window` (a run that failed early), the RMSE is
/// taken over every sample instead.
pub fn compute_metrics(samples: &[(f64, Vector3<f64>)], window: (f64, f64)) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::InvalidState("no samples to score".into()));
    }
    let inside: Vec<&Vector3<f64>> = samples
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .map(|(_, e)| e)
        .collect();
    let scored: Vec<&Vector3<f64>> = if inside.is_empty() {
        samples.iter().map(|(_, e)| e).collect()
    } else {
        inside
    };
    let mse = scored.iter().map(|e| e.norm_squared()).sum::<f64>() / scored.len() as f64;
    let z_max = samples.iter().map(|(_, e)| e.z.abs()).fold(0.0, f64::max);
    Ok(Metrics {
        rmse: mse.sqrt(),
        z_max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleStats {
    pub role: String,
    pub variant: String,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub z_max_mean: f64,
    pub z_max_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub config_hash: String,
    /// Successful runs contributing to the statistics.
    pub runs: usize,
    pub failed: usize,
    pub vehicles: Vec<VehicleStats>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-group, per-vehicle sample mean and standard deviation of the metrics.
/// Failed runs are counted but excluded. Groups come out sorted by name.
pub fn aggregate_stats(records: &[RunSummary]) -> Result<Vec<GroupStats>> {
    let mut groups: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in records {
        groups.entry(r.group.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (name, runs) in groups {
        let hash = &runs[0].config_hash;
        if let Some(other) = runs.iter().find(|r| &r.config_hash != hash) {
            return Err(Error::Grouping(format!(
                "group `{name}` mixes configs {hash} and {}",
                other.config_hash
            )));
        }
        let layout: Vec<(&str, &str)> = runs[0]
            .vehicles
            .iter()
            .map(|v| (v.role.as_str(), v.variant.as_str()))
            .collect();
        let ok: Vec<&&RunSummary> = runs.iter().filter(|r| r.failure.is_none()).collect();
        let vehicles = layout
            .iter()
            .enumerate()
            .map(|(i, (role, variant))| {
                let rmse: Vec<f64> = ok.iter().map(|r| r.vehicles[i].rmse).collect();
                let z: Vec<f64> = ok.iter().map(|r| r.vehicles[i].z_max).collect();
                let (rmse_mean, rmse_std) = mean_std(&rmse);
                let (z_max_mean, z_max_std) = mean_std(&z);
                VehicleStats {
                    role: role.to_string(),
                    variant: variant.to_string(),
                    rmse_mean,
                    rmse_std,
                    z_max_mean,
                    z_max_std,
                }
            })
            .collect();
        out.push(GroupStats {
            group: name.to_string(),
            config_hash: hash.clone(),
            runs: ok.len(),
            failed: runs.len() - ok.len(),
            vehicles,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Failure, FailureKind, VehicleSummary};

    fn summary(group: &str, hash: &str, rmse: f64, failed: bool) -> RunSummary {
        RunSummary {
            group: group.into(),
            config_hash: hash.into(),
            seed: 1,
            failure: failed.then(|| Failure {
                kind: FailureKind::Collision,
                time: 1.0,
                vehicles: vec![0, 1],
            }),
            vehicles: vec![VehicleSummary {
                index: 0,
                role: "center".into(),
                variant: "mpc".into(),
                rate_hz: 400.0,
                control_updates: 10,
                rmse,
                z_max: 2.0 * rmse,
            }],
        }
    }

    #[test]
    fn constant_and_zero_error() {
        let e = 0.03;
        let s: Vec<_> = (0..100)
            .map(|k| (k as f64 * 0.01, Vector3::new(0.0, 0.0, e)))
            .collect();
        let m = compute_metrics(&s, (0.0, 1.0)).unwrap();
        assert!((m.rmse - e).abs() < 1e-15 && (m.z_max - e).abs() < 1e-15);
        let z: Vec<_> = (0..10).map(|k| (k as f64, Vector3::zeros())).collect();
        assert_eq!(
            compute_metrics(&z, (0.0, 9.0)).unwrap(),
            Metrics {
                rmse: 0.0,
                z_max: 0.0
            }
        );
        assert!(compute_metrics(&[], (0.0, 1.0)).is_err());
    }

    #[test]
    fn sine_error_rms() {
        let a = 0.02;
        let n = 4000;
        let s: Vec<_> = (0..n)
            .map(|k| {
                let t = k as f64 / n as f64;
                (
                    t,
                    Vector3::new(0.0, 0.0, a * (std::f64::consts::TAU * 4.0 * t).sin()),
                )
            })
            .collect();
        let m = compute_metrics(&s, (0.0, 1.0)).unwrap();
        assert!((m.rmse - a / 2f64.sqrt()).abs() < 1e-12);
        assert!((m.z_max - a).abs() < 1e-6);
    }

    #[test]
    fn two_record_statistics() {
        let recs = [
            summary("g", "h", 0.04, false),
            summary("g", "h", 0.06, false),
        ];
        let g = aggregate_stats(&recs).unwrap();
        assert!((g[0].vehicles[0].rmse_mean - 0.05).abs() < 1e-15);
        assert!((g[0].vehicles[0].rmse_std - 0.014_142_135_623_730_95).abs() < 1e-12);
        let same = [
            summary("g", "h", 0.04, false),
            summary("g", "h", 0.04, false),
        ];
        assert_eq!(aggregate_stats(&same).unwrap()[0].vehicles[0].rmse_std, 0.0);
    }

    #[test]
    fn failures_excluded_and_counted() {
        let recs = [summary("g", "h", 0.04, false), summary("g", "h", 9.0, true)];
        let g = aggregate_stats(&recs).unwrap();
        assert_eq!((g[0].runs, g[0].failed), (1, 1));
        assert_eq!(g[0].vehicles[0].rmse_mean, 0.04);
    }

    #[test]
    fn mixed_configs_are_a_grouping_error() {
        let recs = [
            summary("g", "h1", 0.04, false),
            summary("g", "h2", 0.04, false),
        ];
        assert!(matches!(aggregate_stats(&recs), Err(Error::Grouping(_))));
    }
}
