use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::StateVec;

/// Base reference trajectory; vehicles add their formation offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Hover, straight line with a trapezoidal speed profile, hover.
    Line {
        #[serde(default = "default_start")]
        start: [f64; 3],
        #[serde(default = "default_hover")]
        hover_before: f64,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default = "default_speed")]
        speed: f64,
        #[serde(default = "default_accel")]
        accel: f64,
        #[serde(default = "default_hover")]
        hover_after: f64,
        /// Direction of travel in the horizontal plane, degrees from +x.
        #[serde(default)]
        heading_deg: f64,
    },
    Hover {
        #[serde(default = "default_start")]
        start: [f64; 3],
    },
    /// Horizontal figure eight `(a sin wt, a sin wt cos wt)` around `start`.
    Lemniscate {
        #[serde(default = "default_start")]
        start: [f64; 3],
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_period")]
        period: f64,
    },
}

fn default_start() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_hover() -> f64 {
    3.0
}
fn default_length() -> f64 {
    2.0
}
fn default_speed() -> f64 {
    0.5
}
fn default_accel() -> f64 {
    1.0
}
fn default_amplitude() -> f64 {
    0.5
}
fn default_period() -> f64 {
    8.0
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self::line_from(default_start())
    }
}

/// Desired position and velocity; the attitude reference is always identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefPoint {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl RefPoint {
    pub fn offset(&self, d: &Vector3<f64>) -> Self {
        Self {
            p: self.p + d,
            v: self.v,
        }
    }

    pub fn to_state(&self) -> StateVec {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x[9] = 1.0;
        x
    }
}

impl TrajectorySpec {
    pub fn line_from(start: [f64; 3]) -> Self {
        Self::Line {
            start,
            hover_before: default_hover(),
            length: default_length(),
            speed: default_speed(),
            accel: default_accel(),
            hover_after: default_hover(),
            heading_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Line {
                hover_before,
                length,
                speed,
                accel,
                hover_after,
                ..
            } => {
                *hover_before >= 0.0
                    && *hover_after >= 0.0
                    && *length >= 0.0
                    && *speed > 0.0
                    && *accel > 0.0
            }
            Self::Hover { .. } => true,
            Self::Lemniscate {
                amplitude, period, ..
            } => *amplitude >= 0.0 && *period > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid trajectory parameters: {self:?}"
            )))
        }
    }

    /// Natural length of the trajectory, s (infinite for periodic ones).
    pub fn natural_duration(&self) -> f64 {
        match self {
            Self::Line {
                hover_before,
                hover_after,
                ..
            } => hover_before + self.transit_time() + hover_after,
            _ => f64::INFINITY,
        }
    }

    fn transit_time(&self) -> f64 {
        match self {
            Self::Line {
                length,
                speed,
                accel,
                ..
            } => {
                let (t_acc, cruise, _) = profile(*length, *speed, *accel);
                2.0 * t_acc + cruise
            }
            _ => 0.0,
        }
    }

    /// Interval over which tracking error is scored.
    pub fn tracking_window(&self, duration: f64) -> (f64, f64) {
        match self {
            Self::Line { hover_before, .. } => (
                *hover_before,
                (hover_before + self.transit_time()).min(duration),
            ),
            _ => (0.0, duration),
        }
    }

    pub fn at(&self, t: f64) -> RefPoint {
        match self {
            Self::Hover { start } => RefPoint {
                p: Vector3::from(*start),
                v: Vector3::zeros(),
            },
            Self::Line {
                start,
                hover_before,
                length,
                speed,
                accel,
                heading_deg,
                ..
            } => {
                let dir = Vector3::new(
                    heading_deg.to_radians().cos(),
                    heading_deg.to_radians().sin(),
                    0.0,
                );
                let (s, v) = along_track(t - hover_before, *length, *speed, *accel);
                RefPoint {
                    p: Vector3::from(*start) + dir * s,
                    v: dir * v,
                }
            }
            Self::Lemniscate {
                start,
                amplitude,
                period,
            } => {
                let w = std::f64::consts::TAU / period;
                let (s, c) = (w * t).sin_cos();
                RefPoint {
                    p: Vector3::from(*start) + Vector3::new(amplitude * s, amplitude * s * c, 0.0),
                    v: Vector3::new(amplitude * w * c, amplitude * w * (c * c - s * s), 0.0),
                }
            }
        }
    }
}

/// `(accel time, cruise time, peak speed)`; triangular when too short to cruise.
fn profile(length: f64, speed: f64, accel: f64) -> (f64, f64, f64) {
    let d_acc = speed * speed / (2.0 * accel);
    if 2.0 * d_acc <= length {
        (speed / accel, (length - 2.0 * d_acc) / speed, speed)
    } else {
        let peak = (accel * length).sqrt();
        (peak / accel, 0.0, peak)
    }
}

/// Distance and speed along the track `tau` seconds after departure.
fn along_track(tau: f64, length: f64, speed: f64, accel: f64) -> (f64, f64) {
    let (t_acc, cruise, peak) = profile(length, speed, accel);
    if tau <= 0.0 {
        return (0.0, 0.0);
    }
    let d_acc = 0.5 * accel * t_acc * t_acc;
    if tau < t_acc {
        return (0.5 * accel * tau * tau, accel * tau);
    }
    if tau < t_acc + cruise {
        return (d_acc + peak * (tau - t_acc), peak);
    }
    let td = tau - t_acc - cruise;
    if td < t_acc {
        return (
            d_acc + peak * cruise + peak * td - 0.5 * accel * td * td,
            peak - accel * td,
        );
    }
    (length, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_profile_examples() {
        let spec = TrajectorySpec::default();
        let p0 = spec.at(0.0);
        assert_eq!(p0.p, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(p0.v, Vector3::zeros());
        // Mid-cruise
        assert_eq!(spec.at(3.0 + 2.0).v.norm(), 0.5);
        let end = spec.at(spec.natural_duration());
        assert!(((end.p - p0.p).norm() - 2.0).abs() < 1e-12);
        assert!((spec.natural_duration() - 10.5).abs() < 1e-12);
        assert_eq!(spec.tracking_window(10.5), (3.0, 7.5));
    }

    #[test]
    fn integrated_velocity_matches_displacement() {
        let spec = TrajectorySpec::default();
        let dt = 1e-4;
        let mut s = 0.0;
        let mut t = 0.0;
        while t < 10.5 {
            // midpoint rule is exact for the piecewise-linear speed
            s += spec.at(t + 0.5 * dt).v.x * dt;
            t += dt;
        }
        assert!((s - 2.0).abs() < 1e-6);
    }

    #[test]
    fn velocity_is_continuous() {
        let spec = TrajectorySpec::default();
        let mut prev = spec.at(0.0).v;
        let mut t = 0.0;
        while t < 10.5 {
            t += 1e-4;
            let v = spec.at(t).v;
            assert!((v - prev).norm() < 2e-4);
            prev = v;
        }
    }

    #[test]
    fn short_line_is_triangular() {
        let (s, v) = along_track(10.0, 0.1, 0.5, 1.0);
        assert_eq!((s, v), (0.1, 0.0));
        let (t_acc, cruise, peak) = profile(0.1, 0.5, 1.0);
        assert_eq!(cruise, 0.0);
        assert!((peak - 0.1f64.sqrt()).abs() < 1e-15 && t_acc > 0.0);
    }

    #[test]
    fn unknown_tag_is_rejected() {
        let r: std::result::Result<TrajectorySpec, _> = toml::from_str("kind = \"spiral\"");
        assert!(r.is_err());
    }
}
