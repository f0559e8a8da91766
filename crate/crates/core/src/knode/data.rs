//! Two-vehicle training data from the simulated plant.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::downwash::Neighbor;
use crate::error::{Error, Result};
use crate::ocp::OcpConfig;
use crate::rigid_body::{ControlInput, QuadState};
use crate::sim::{
    run_scenario, ControllerVariant, PlantConfig, Scenario, TrajectorySpec, VehicleSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingScenario {
    /// One vehicle hovers while the ego flies a straight line beneath it.
    StaticTop,
    /// Two vertically aligned vehicles fly the same line.
    Stacked,
    Both,
}

impl TrainingScenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "static_top" => Some(Self::StaticTop),
            "stacked" => Some(Self::Stacked),
            "both" => Some(Self::Both),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub plant: PlantConfig,
    pub solver: OcpConfig,
    pub rate_hz: f64,
    pub static_top_separations: Vec<f64>,
    pub stacked_separations: Vec<f64>,
    /// Hover before and after the line, s.
    pub hover: f64,
    pub altitude: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            solver: OcpConfig::default(),
            rate_hz: 200.0,
            static_top_separations: vec![0.2, 0.3, 0.4],
            stacked_separations: vec![0.2, 0.3, 0.4, 0.5, 1.2],
            hover: 1.0,
            altitude: 1.0,
        }
    }
}

/// Synchronized samples of the ego (lower vehicle) and its partner.
#[derive(Clone, Debug)]
pub struct Segment {
    pub label: String,
    pub dt: f64,
    pub states: Vec<QuadState>,
    pub inputs: Vec<ControlInput>,
    pub neighbors: Vec<Neighbor>,
    /// Plant interaction force on the ego over the step preceding each sample, N.
    pub plant_force: Vec<Vector3<f64>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let n = self.states.len();
        if self.inputs.len() != n || self.neighbors.len() != n || self.plant_force.len() != n {
            return Err(Error::Dimension(format!(
                "segment `{}` has ragged series",
                self.label
            )));
        }
        if n < horizon + 1 {
            return Err(Error::Dimension(format!(
                "segment `{}` has {n} samples, fewer than horizon + 1",
                self.label
            )));
        }
        let finite = self.states.iter().all(|s| s.is_finite())
            && self.inputs.iter().all(|u| u.is_finite())
            && self
                .neighbors
                .iter()
                .all(|m| m.state.is_finite() && m.thrust.is_finite());
        if !finite || !(self.dt > 0.0) {
            return Err(Error::InvalidState(format!(
                "segment `{}` has non-finite samples",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub segments: Vec<Segment>,
    /// Segments dropped because the simulation failed: `(label, reason)`.
    pub aborted: Vec<(String, String)>,
}

impl TrainingSet {
    pub fn samples(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }
}

fn two_vehicle(
    label: &str,
    config: &DataConfig,
    ego_path: TrajectorySpec,
    top: VehicleSpec,
) -> Scenario {
    let mut ego = VehicleSpec::new(ControllerVariant::Mpc, config.rate_hz);
    ego.trajectory = None;
    let mut s = Scenario::new(label, None, vec![ego, top]);
    s.trajectory = ego_path;
    s.plant = config.plant.clone();
    s.solver = config.solver.clone();
    s.duration = s.trajectory.natural_duration();
    s
}

fn line(config: &DataConfig) -> TrajectorySpec {
    TrajectorySpec::Line {
        start: [0.0, 0.0, config.altitude],
        hover_before: config.hover,
        length: 2.0,
        speed: 0.5,
        accel: 1.0,
        hover_after: config.hover,
        heading_deg: 0.0,
    }
}

/// The two-vehicle scenarios for one training-scenario choice.
pub fn training_scenarios(kind: TrainingScenario, config: &DataConfig) -> Vec<Scenario> {
    let mut out = Vec::new();
    if matches!(kind, TrainingScenario::StaticTop | TrainingScenario::Both) {
        for &sep in &config.static_top_separations {
            let mut top = VehicleSpec::new(ControllerVariant::Mpc, config.rate_hz);
            // Hover over the middle of the ego's line.
            top.trajectory = Some(TrajectorySpec::Hover {
                start: [1.0, 0.0, config.altitude + sep],
            });
            out.push(two_vehicle(
                &format!("static_top_s{sep}"),
                config,
                line(config),
                top,
            ));
        }
    }
    if matches!(kind, TrainingScenario::Stacked | TrainingScenario::Both) {
        for &sep in &config.stacked_separations {
            let mut top = VehicleSpec::new(ControllerVariant::Mpc, config.rate_hz);
            top.offset = Some([0.0, 0.0, sep]);
            out.push(two_vehicle(
                &format!("stacked_s{sep}"),
                config,
                line(config),
                top,
            ));
        }
    }
    out
}

/// Simulate the training scenarios under nominal MPC and log the lower
/// vehicle. Failed simulations are dropped and listed in `aborted`.
pub fn generate_training_data(
    kind: TrainingScenario,
    config: &DataConfig,
    seeds: &[u64],
) -> Result<TrainingSet> {
    let mut set = TrainingSet::default();
    for scenario in training_scenarios(kind, config) {
        for &seed in seeds {
            let label = format!("{}_seed{seed}", scenario.name);
            let record = run_scenario(&scenario, seed)?;
            if let Some(f) = &record.failure {
                let reason = format!("{:?} at t={}", f.kind, f.time);
                set.aborted.push((label, reason));
                continue;
            }
            let ego = &record.vehicles[0].rows;
            let other = &record.vehicles[1].rows;
            let n = ego.len().min(other.len());
            let segment = Segment {
                label,
                dt: 1.0 / config.rate_hz,
                states: ego[..n]
                    .iter()
                    .map(|r| QuadState {
                        p: r.p,
                        v: r.v,
                        q: r.q,
                    })
                    .collect(),
                inputs: ego[..n]
                    .iter()
                    .map(|r| ControlInput {
                        u_gamma: r.u[0],
                        omega: Vector3::new(r.u[1], r.u[2], r.u[3]),
                    })
                    .collect(),
                neighbors: other[..n]
                    .iter()
                    .map(|r| Neighbor {
                        id: 1,
                        state: QuadState {
                            p: r.p,
                            v: r.v,
                            q: r.q,
                        },
                        thrust: r.u[0],
                    })
                    .collect(),
                plant_force: ego[..n].iter().map(|r| r.plant_force).collect(),
            };
            set.segments.push(segment);
        }
    }
    Ok(set)
}
