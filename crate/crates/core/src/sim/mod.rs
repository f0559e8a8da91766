//! Multi-vehicle closed-loop simulation.
//!
//! The plant steps at a fixed rate; each vehicle's controller fires on its own
//! divisor of that rate using the latest plant state. Random draws come from a
//! single ChaCha8 stream seeded per run, consumed in this order at every plant
//! step: position-noise draws for each vehicle whose controller fires (vehicle
//! index order, three normals each, only when position noise is enabled), then
//! the turbulence update of each vehicle (index order, three normals each).

mod log;
mod metrics;
mod sweep;
mod trajectory;

pub use log::{
    format_log, read_log, read_metrics, run_stem, summarize_log, write_run, LogFile, RunFiles,
    RunSummary, VehicleSummary,
};
pub use metrics::{aggregate_stats, compute_metrics, GroupStats, Metrics, VehicleStats};
pub use sweep::{
    experiment_grid, stack_scenario, Experiment, BOTTOM_RATE_HZ, SWEEP_SEEDS, UPPER_RATE_HZ,
};
pub use trajectory::{RefPoint, TrajectorySpec};

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::downwash::{
    plant_interaction_force, DwParams, Neighbor, NeighborSet, OuNoise, PlantInteractionParams,
    PlantVehicle,
};
use crate::error::{Error, Result};
use crate::knode::Mlp;
use crate::l1::{L1Adaptive, L1Config};
use crate::ocp::{Freeze, ModelVariant, Mpc, MpcStatus, OcpConfig, PredictionModel};
use crate::rigid_body::{dynamics, rk4_raw, ControlInput, QuadParams, QuadState, StateVec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationKind {
    VStack,
    IStack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formation {
    pub kind: FormationKind,
    /// Top to center vertical gap, m.
    pub z1: f64,
    /// Center to bottom vertical gap, m.
    pub z2: f64,
    /// Top to center horizontal gap, m (V-stack only).
    #[serde(default)]
    pub r: f64,
}

impl Formation {
    pub fn i_stack(z1: f64, z2: f64) -> Self {
        Self {
            kind: FormationKind::IStack,
            z1,
            z2,
            r: 0.0,
        }
    }

    pub fn v_stack(z1: f64, z2: f64, r: f64) -> Self {
        Self {
            kind: FormationKind::VStack,
            z1,
            z2,
            r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z1 > 0.0 && self.z2 > 0.0 && self.r >= 0.0) {
            return Err(Error::Config(
                "formation needs z1, z2 > 0 and r >= 0".into(),
            ));
        }
        if self.kind == FormationKind::IStack && self.r != 0.0 {
            return Err(Error::Config("i_stack formation requires r = 0".into()));
        }
        Ok(())
    }
}

pub const ROLES: [&str; 3] = ["bottom", "center", "top"];

/// Offsets of `[bottom, center, top]` from the bottom vehicle's reference.
pub fn formation_offsets(f: &Formation) -> [Vector3<f64>; 3] {
    let r = match f.kind {
        FormationKind::VStack => f.r,
        FormationKind::IStack => 0.0,
    };
    [
        Vector3::zeros(),
        Vector3::new(-r / 2.0, 0.0, f.z2),
        Vector3::new(r / 2.0, 0.0, f.z2 + f.z1),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerVariant {
    Mpc,
    DwMpc,
    KnodeDwMpc,
    L1Mpc,
    L1DwMpc,
    L1KnodeDwMpc,
}

impl ControllerVariant {
    pub const ALL: [Self; 6] = [
        Self::Mpc,
        Self::DwMpc,
        Self::KnodeDwMpc,
        Self::L1Mpc,
        Self::L1DwMpc,
        Self::L1KnodeDwMpc,
    ];

    pub fn model(self) -> ModelVariant {
        match self {
            Self::Mpc | Self::L1Mpc => ModelVariant::Nominal,
            Self::DwMpc | Self::L1DwMpc => ModelVariant::Dw,
            Self::KnodeDwMpc | Self::L1KnodeDwMpc => ModelVariant::KnodeDw,
        }
    }

    pub fn uses_l1(self) -> bool {
        matches!(self, Self::L1Mpc | Self::L1DwMpc | Self::L1KnodeDwMpc)
    }

    pub fn needs_weights(self) -> bool {
        self.model() == ModelVariant::KnodeDw
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mpc => "mpc",
            Self::DwMpc => "dw_mpc",
            Self::KnodeDwMpc => "knode_dw_mpc",
            Self::L1Mpc => "l1_mpc",
            Self::L1DwMpc => "l1_dw_mpc",
            Self::L1KnodeDwMpc => "l1_knode_dw_mpc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub variant: ControllerVariant,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub l1: L1Config,
    #[serde(default)]
    pub dw: DwParams,
    /// Residual-network weights, required by the KNODE variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<std::path::PathBuf>,
    /// Offset from the base reference; not allowed together with a formation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<[f64; 3]>,
    /// Per-vehicle reference overriding the scenario trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectorySpec>,
    #[serde(skip)]
    pub mlp: Option<Arc<Mlp>>,
}

fn default_rate() -> f64 {
    400.0
}

impl VehicleSpec {
    pub fn new(variant: ControllerVariant, rate_hz: f64) -> Self {
        Self {
            variant,
            rate_hz,
            l1: L1Config::default(),
            dw: DwParams::default(),
            weights: None,
            offset: None,
            trajectory: None,
            mlp: None,
        }
    }

    pub fn with_mlp(mut self, mlp: Option<Arc<Mlp>>) -> Self {
        self.mlp = mlp;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub rate_hz: f64,
    pub quad: QuadParams,
    pub interaction: PlantInteractionParams,
    /// Standard deviation of zero-mean position measurement noise, m.
    pub position_noise: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            rate_hz: 2000.0,
            quad: QuadParams::default(),
            interaction: PlantInteractionParams::default(),
            position_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Group label used in file names and reports.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formation: Option<Formation>,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub solver: OcpConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_duration")]
    pub duration: f64,
}

fn default_name() -> String {
    "run".into()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_duration() -> f64 {
    10.5
}

impl Scenario {
    pub fn new(name: &str, formation: Option<Formation>, vehicles: Vec<VehicleSpec>) -> Self {
        Self {
            name: name.into(),
            formation,
            trajectory: TrajectorySpec::default(),
            vehicles,
            plant: PlantConfig::default(),
            solver: OcpConfig::default(),
            seeds: default_seeds(),
            duration: default_duration(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vehicles.is_empty() {
            return Err(Error::Config("scenario needs at least one vehicle".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Config("duration must be positive".into()));
        }
        if !(self.plant.rate_hz > 0.0) || !(self.plant.position_noise >= 0.0) {
            return Err(Error::Config(
                "plant rate must be positive and position noise nonnegative".into(),
            ));
        }
        self.plant.quad.validate()?;
        self.plant.interaction.validate()?;
        self.solver.validate(&self.plant.quad)?;
        self.trajectory.validate()?;
        if let Some(f) = &self.formation {
            f.validate()?;
            if self.vehicles.len() != 3 {
                return Err(Error::Config(format!(
                    "a formation takes exactly 3 vehicles (bottom, center, top), found {}",
                    self.vehicles.len()
                )));
            }
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if self.formation.is_some() && v.offset.is_some() {
                return Err(Error::Config(format!(
                    "vehicle {i}: offset conflicts with the formation"
                )));
            }
            if !(v.rate_hz > 0.0) || divisor(self.plant.rate_hz, v.rate_hz).is_none() {
                return Err(Error::Config(format!(
                    "vehicle {i}: control rate {} Hz does not divide the plant rate {} Hz",
                    v.rate_hz, self.plant.rate_hz
                )));
            }
            v.dw.validate()?;
            if let Some(t) = &v.trajectory {
                t.validate()?;
            }
            if v.variant.needs_weights() && v.mlp.is_none() {
                return Err(Error::Config(format!(
                    "vehicle {i} ({}) needs trained weights",
                    v.variant.as_str()
                )));
            }
            if v.variant.uses_l1() {
                L1Config {
                    dt: 1.0 / v.rate_hz,
                    ..v.l1.clone()
                }
                .validate()?;
            }
        }
        Ok(())
    }

    pub fn role(&self, i: usize) -> String {
        if self.formation.is_some() {
            ROLES[i].to_string()
        } else {
            format!("v{i}")
        }
    }

    pub fn offsets(&self) -> Vec<Vector3<f64>> {
        match &self.formation {
            Some(f) => formation_offsets(f).to_vec(),
            None => self
                .vehicles
                .iter()
                .map(|v| v.offset.map(Vector3::from).unwrap_or_else(Vector3::zeros))
                .collect(),
        }
    }

    pub fn reference(&self, i: usize, t: f64) -> RefPoint {
        let base = self.vehicles[i]
            .trajectory
            .as_ref()
            .unwrap_or(&self.trajectory);
        base.at(t).offset(&self.offsets()[i])
    }

    /// SHA-256 of the canonical serialization, seeds excluded.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.seeds.clear();
        let text = toml::to_string(&canon).unwrap_or_else(|_| format!("{canon:?}"));
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn divisor(plant: f64, rate: f64) -> Option<usize> {
    let d = plant / rate;
    let r = d.round();
    ((d - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Non-finite state.
    Diverged,
    /// Altitude below zero.
    Crash,
    /// Two vehicles closer than one body diameter.
    Collision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub time: f64,
    pub vehicles: Vec<usize>,
}

/// One control tick of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: nalgebra::Vector4<f64>,
    pub p_ref: Vector3<f64>,
    pub u: nalgebra::Vector4<f64>,
    pub sigma_hat: Vector3<f64>,
    pub u_sigma: Vector3<f64>,
    /// Plant interaction force applied over the preceding plant step, N.
    pub plant_force: Vector3<f64>,
    pub kkt: f64,
    pub qp_iterations: usize,
    pub active_set: usize,
    /// 0 optimal, 1 iteration cap, 2 degraded.
    pub status: u8,
    pub l1_reset: bool,
}

#[derive(Clone, Debug)]
pub struct VehicleSeries {
    pub role: String,
    pub variant: ControllerVariant,
    pub rate_hz: f64,
    pub rows: Vec<LogRow>,
}

impl VehicleSeries {
    pub fn errors(&self) -> Vec<(f64, Vector3<f64>)> {
        self.rows.iter().map(|r| (r.t, r.p - r.p_ref)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub group: String,
    pub config_hash: String,
    pub seed: u64,
    pub duration: f64,
    pub tracking_window: (f64, f64),
    pub vehicles: Vec<VehicleSeries>,
    pub metrics: Vec<Metrics>,
    pub failure: Option<Failure>,
    /// Per-vehicle wall-clock MPC solve times, s. Not part of the run log.
    pub solve_times: Vec<Vec<f64>>,
    pub compensation_signs: Vec<Option<String>>,
}

struct Agent {
    mpc: Mpc,
    l1: Option<L1Adaptive>,
    divisor: usize,
    offset_dw_alpha: f64,
}

/// Run one seeded closed-loop simulation.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<RunRecord> {
    scenario.validate()?;
    let plant = &scenario.plant;
    let quad = &plant.quad;
    let dt = 1.0 / plant.rate_hz;
    let steps = (scenario.duration * plant.rate_hz).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut agents = Vec::with_capacity(scenario.vehicles.len());
    for (i, v) in scenario.vehicles.iter().enumerate() {
        let model =
            PredictionModel::new(v.variant.model(), v.dw.clone(), v.mlp.clone(), quad.clone())
                .map_err(|e| Error::Config(format!("vehicle {i}: {e}")))?;
        let l1 = if v.variant.uses_l1() {
            Some(L1Adaptive::new(L1Config {
                dt: 1.0 / v.rate_hz,
                ..v.l1.clone()
            })?)
        } else {
            None
        };
        agents.push(Agent {
            mpc: Mpc::new(scenario.solver.clone(), model)?,
            l1,
            divisor: divisor(plant.rate_hz, v.rate_hz).expect("validated"),
            offset_dw_alpha: v.dw.alpha_nbr,
        });
    }

    let n = agents.len();
    let mut states: Vec<QuadState> = (0..n)
        .map(|i| {
            let r = scenario.reference(i, 0.0);
            QuadState {
                v: r.v,
                ..QuadState::at_rest(r.p)
            }
        })
        .collect();
    let mut inputs = vec![ControlInput::hover(quad); n];
    let mut noise = vec![OuNoise::default(); n];
    let mut last_force = vec![Vector3::zeros(); n];
    let mut series: Vec<VehicleSeries> = scenario
        .vehicles
        .iter()
        .enumerate()
        .map(|(i, v)| VehicleSeries {
            role: scenario.role(i),
            variant: v.variant,
            rate_hz: v.rate_hz,
            rows: Vec::with_capacity((scenario.duration * v.rate_hz) as usize + 1),
        })
        .collect();
    let mut solve_times = vec![Vec::new(); n];
    let mut failure = None;
    let horizon = scenario.solver.horizon;
    let t_ocp = scenario.solver.dt;

    'outer: for k in 0..steps {
        let t = k as f64 * dt;
        // Controllers see the same snapshot of states and commanded thrusts.
        let snapshot: Vec<Neighbor> = (0..n)
            .map(|i| Neighbor {
                id: i,
                state: states[i],
                thrust: inputs[i].u_gamma,
            })
            .collect();
        let mut new_inputs = inputs.clone();
        for i in 0..n {
            if k % agents[i].divisor != 0 {
                continue;
            }
            let mut measured = states[i];
            if plant.position_noise > 0.0 {
                for c in 0..3 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    measured.p[c] += plant.position_noise * z;
                }
            }
            let agent = &mut agents[i];
            let neighbors = NeighborSet::gather(
                i,
                &measured,
                snapshot.iter().copied(),
                agent.offset_dw_alpha,
            );
            let compensation = match agent.l1.as_mut() {
                Some(l1) => l1.update(&measured.v),
                None => Vector3::zeros(),
            };
            let reference: Vec<StateVec> = (0..=horizon)
                .map(|j| scenario.reference(i, t + j as f64 * t_ocp).to_state())
                .collect();
            let freeze = Freeze {
                neighbors,
                compensation,
            };
            let x0 = measured.to_vector();
            let started = Instant::now();
            let sol = agent.mpc.step(&x0, &reference, &freeze)?;
            solve_times[i].push(started.elapsed().as_secs_f64());
            let u = ControlInput::from_vector(&sol.u0);
            new_inputs[i] = u;
            let mut reset = false;
            let (mut sigma_hat, mut u_sigma) = (Vector3::zeros(), Vector3::zeros());
            if let Some(l1) = agent.l1.as_mut() {
                let model_force = agent
                    .mpc
                    .model
                    .interaction_force(&measured, &freeze.neighbors);
                reset = l1.propagate(&measured.v, &measured.q, &model_force, u.u_gamma, quad);
                if let Some(s) = l1.state() {
                    sigma_hat = s.sigma_hat;
                    u_sigma = s.u_sigma;
                }
            }
            series[i].rows.push(LogRow {
                t,
                p: states[i].p,
                v: states[i].v,
                q: states[i].q,
                p_ref: reference[0].fixed_rows::<3>(0).into_owned(),
                u: sol.u0,
                sigma_hat,
                u_sigma,
                plant_force: last_force[i],
                kkt: sol.kkt.max(),
                qp_iterations: sol.qp_iterations,
                active_set: sol.active_set_size,
                status: match sol.status {
                    MpcStatus::Optimal => 0,
                    MpcStatus::MaxIterations => 1,
                    MpcStatus::Degraded(_) => 2,
                },
                l1_reset: reset,
            });
        }
        inputs = new_inputs;

        // Interaction forces from the pre-step states, then integrate.
        let vehicles: Vec<PlantVehicle> = (0..n)
            .map(|i| PlantVehicle {
                state: states[i],
                thrust: inputs[i].u_gamma,
            })
            .collect();
        for i in 0..n {
            let others: Vec<PlantVehicle> =
                (0..n).filter(|&m| m != i).map(|m| vehicles[m]).collect();
            last_force[i] = plant_interaction_force(
                &states[i],
                &others,
                &mut noise[i],
                &plant.interaction,
                dt,
                &mut rng,
            );
        }
        for i in 0..n {
            let accel = last_force[i] / quad.mass;
            let x = states[i].to_vector();
            let next = rk4_raw(
                &|s: &StateVec, u: &_| dynamics(s, u, quad, &accel),
                &x,
                &inputs[i].to_vector(),
                dt,
            );
            states[i] = QuadState::from_vector(&next);
        }

        let t_next = t + dt;
        let diverged: Vec<usize> = (0..n).filter(|&i| !states[i].is_finite()).collect();
        if !diverged.is_empty() {
            failure = Some(Failure {
                kind: FailureKind::Diverged,
                time: t_next,
                vehicles: diverged,
            });
            break 'outer;
        }
        let crashed: Vec<usize> = (0..n).filter(|&i| states[i].p.z < 0.0).collect();
        if !crashed.is_empty() {
            failure = Some(Failure {
                kind: FailureKind::Crash,
                time: t_next,
                vehicles: crashed,
            });
            break 'outer;
        }
        for i in 0..n {
            for m in i + 1..n {
                if (states[i].p - states[m].p).norm() < quad.diameter {
                    failure = Some(Failure {
                        kind: FailureKind::Collision,
                        time: t_next,
                        vehicles: vec![i, m],
                    });
                    break 'outer;
                }
            }
        }
    }

    let window = scenario.trajectory.tracking_window(scenario.duration);
    let metrics = series
        .iter()
        .map(|s| compute_metrics(&s.errors(), window))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord {
        group: scenario.name.clone(),
        config_hash: scenario.config_hash(),
        seed,
        duration: scenario.duration,
        tracking_window: window,
        vehicles: series,
        metrics,
        failure,
        solve_times,
        compensation_signs: scenario
            .vehicles
            .iter()
            .map(|v| {
                v.variant
                    .uses_l1()
                    .then(|| v.l1.compensation_sign.as_str().to_string())
            })
            .collect(),
    })
}
