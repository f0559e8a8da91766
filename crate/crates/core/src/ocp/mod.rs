//! Receding-horizon control by real-time iteration.
//!
//! Each step rolls the previous input plan forward from the measured state,
//! linearizes the RK4-discretized prediction model along it, condenses the
//! problem onto the stacked inputs and solves one dense QP.

pub mod qp;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

pub use qp::{
    kkt_residual, solve_qp, solve_qp_with, KktResidual, QpProblem, QpSettings, QpSolution,
    QpStatus, WarmStart,
};

use crate::downwash::{aggregate_downwash, DwParams, NeighborSet};
use crate::error::{Error, Result};
use crate::knode::{knode_dw_force, Mlp};
use crate::rigid_body::{dynamics, rk4_raw, InputVec, QuadParams, QuadState, StateVec, NU, NX};

const INF: f64 = f64::INFINITY;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpConfig {
    /// Horizon length N.
    pub horizon: usize,
    /// Prediction sample period, s.
    pub dt: f64,
    /// Diagonal stage weight on `[p, v, q]`.
    pub q: [f64; NX],
    /// Diagonal input weight on `[u_gamma, omega]`.
    pub r: [f64; NU],
    /// Diagonal terminal weight.
    pub p: [f64; NX],
    /// Soft state box, applied to every predicted stage including the last.
    pub x_min: [f64; NX],
    pub x_max: [f64; NX],
    /// Hard input box.
    pub u_min: [f64; NU],
    pub u_max: [f64; NU],
    /// L1 penalty on state-box slack.
    pub slack_weight: f64,
    pub max_qp_iterations: usize,
    /// Forward-difference step for the Jacobians.
    pub fd_step: f64,
}

impl Default for OcpConfig {
    fn default() -> Self {
        let q = [40.0, 40.0, 0.2, 4.0, 4.0, 1.0, 8.0, 8.0, 8.0, 8.0];
        Self {
            horizon: 20,
            dt: 0.04,
            q,
            r: [4.0, 0.2, 0.2, 0.2],
            p: q.map(|w| 5.0 * w),
            x_min: [-INF, -INF, 0.0, -3.0, -3.0, -3.0, -INF, -INF, -INF, -INF],
            x_max: [INF, INF, INF, 3.0, 3.0, 3.0, INF, INF, INF, INF],
            u_min: [0.0, -10.0, -10.0, -10.0],
            u_max: [0.65, 10.0, 10.0, 10.0],
            slack_weight: 1e3,
            max_qp_iterations: 200,
            fd_step: 1e-6,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self, params: &QuadParams) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("solver: {m}")));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self
            .q
            .iter()
            .chain(&self.p)
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return bad("q and p must be finite and nonnegative");
        }
        if self.r.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("r must be finite and positive");
        }
        if (0..NX).any(|i| self.x_min[i] > self.x_max[i]) {
            return bad("x_min exceeds x_max");
        }
        if (0..NU).any(|i| !(self.u_min[i] <= self.u_max[i])) {
            return bad("u_min exceeds u_max");
        }
        let hover = params.hover_thrust();
        if !(self.u_min[0] <= hover && hover <= self.u_max[0])
            || (1..NU).any(|i| self.u_min[i] > 0.0 || self.u_max[i] < 0.0)
        {
            return bad("input box does not contain hover");
        }
        if !(self.slack_weight > 0.0) || !(self.fd_step > 0.0) || self.max_qp_iterations == 0 {
            return bad("slack_weight, fd_step and max_qp_iterations must be positive");
        }
        Ok(())
    }

    pub fn weights(&self) -> Weights {
        Weights {
            q: DVector::from_row_slice(&self.q),
            r: DVector::from_row_slice(&self.r),
            p: DVector::from_row_slice(&self.p),
            u_min: DVector::from_row_slice(&self.u_min),
            u_max: DVector::from_row_slice(&self.u_max),
        }
    }
}

/// Diagonal weights and input box for [`condense`].
#[derive(Clone, Debug)]
pub struct Weights {
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub p: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Nominal,
    Dw,
    KnodeDw,
}

/// Dynamics the controller predicts with.
#[derive(Clone, Debug)]
pub struct PredictionModel {
    variant: ModelVariant,
    dw: DwParams,
    mlp: Option<Arc<Mlp>>,
    params: QuadParams,
}

impl PredictionModel {
    pub fn new(
        variant: ModelVariant,
        dw: DwParams,
        mlp: Option<Arc<Mlp>>,
        params: QuadParams,
    ) -> Result<Self> {
        if variant == ModelVariant::KnodeDw && mlp.is_none() {
            return Err(Error::Config(
                "KNODE-DW prediction model requires trained weights".into(),
            ));
        }
        Ok(Self {
            variant,
            dw,
            mlp,
            params,
        })
    }

    pub fn nominal(params: QuadParams) -> Self {
        Self {
            variant: ModelVariant::Nominal,
            dw: DwParams::default(),
            mlp: None,
            params,
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn params(&self) -> &QuadParams {
        &self.params
    }

    /// Modeled interaction force on the ego, N.
    pub fn interaction_force(&self, ego: &QuadState, neighbors: &NeighborSet) -> Vector3<f64> {
        match self.variant {
            ModelVariant::Nominal => Vector3::zeros(),
            ModelVariant::Dw => aggregate_downwash(ego, neighbors, &self.dw),
            ModelVariant::KnodeDw => knode_dw_force(
                ego,
                neighbors,
                &self.dw,
                self.mlp.as_deref().expect("checked at construction"),
                self.params.hover_thrust(),
            ),
        }
    }

    fn stage_accel(&self, x: &StateVec, freeze: &Freeze) -> Vector3<f64> {
        let force = self.interaction_force(&QuadState::from_vector(x), &freeze.neighbors);
        force / self.params.mass + freeze.compensation
    }

    fn step_with(&self, x: &StateVec, u: &InputVec, accel: &Vector3<f64>, dt: f64) -> StateVec {
        let params = &self.params;
        rk4_raw(
            &|s: &StateVec, u: &InputVec| dynamics(s, u, params, accel),
            x,
            u,
            dt,
        )
    }

    /// One discretized step; the interaction force is evaluated at the
    /// stage-start state and held over the step.
    pub fn step(&self, x: &StateVec, u: &InputVec, freeze: &Freeze, dt: f64) -> StateVec {
        self.step_with(x, u, &self.stage_accel(x, freeze), dt)
    }
}

/// Quantities frozen over the horizon: the neighbor snapshot and the L1
/// compensation acceleration.
#[derive(Clone, Debug, Default)]
pub struct Freeze {
    pub neighbors: NeighborSet,
    pub compensation: Vector3<f64>,
}

/// Linear time-varying model `x_{j+1} = A_j x_j + B_j u_j + c_j`.
#[derive(Clone, Debug)]
pub struct Ltv {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
}

impl Ltv {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }
}

/// Forward-difference Jacobians of the discretized model about each nominal
/// stage, plus the affine defect.
pub fn discretize_and_linearize(
    model: &PredictionModel,
    x_bar: &[StateVec],
    u_bar: &[InputVec],
    freeze: &Freeze,
    config: &OcpConfig,
) -> Result<Ltv> {
    let n = config.horizon;
    if x_bar.len() != n + 1 || u_bar.len() != n {
        return Err(Error::Dimension(format!(
            "nominal trajectory has {} states and {} inputs for horizon {n}",
            x_bar.len(),
            u_bar.len()
        )));
    }
    let h = config.fd_step;
    let dt = config.dt;
    let mut ltv = Ltv {
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
    };
    for j in 0..n {
        let (x, u) = (&x_bar[j], &u_bar[j]);
        let accel = model.stage_accel(x, freeze);
        let f0 = model.step_with(x, u, &accel, dt);
        let mut a = SMatrix::<f64, NX, NX>::zeros();
        for i in 0..NX {
            let mut xp = *x;
            xp[i] += h;
            // The interaction force depends on position and velocity only.
            let acc = if i < 6 {
                model.stage_accel(&xp, freeze)
            } else {
                accel
            };
            let col = (model.step_with(&xp, u, &acc, dt) - f0) / h;
            a.set_column(i, &col);
        }
        let mut b = SMatrix::<f64, NX, NU>::zeros();
        for i in 0..NU {
            let mut up = *u;
            up[i] += h;
            b.set_column(i, &((model.step_with(x, &up, &accel, dt) - f0) / h));
        }
        if a.iter()
            .chain(b.iter())
            .chain(f0.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Linearization { stage: j });
        }
        let c = f0 - a * x - b * u;
        ltv.a.push(DMatrix::from_column_slice(NX, NX, a.as_slice()));
        ltv.b.push(DMatrix::from_column_slice(NX, NU, b.as_slice()));
        ltv.c.push(DVector::from_column_slice(c.as_slice()));
    }
    Ok(ltv)
}

/// Dense input-only form of the tracking problem.
#[derive(Clone, Debug)]
pub struct Condensed {
    /// Objective `1/2 u'Hu + h'u` (twice the tracking cost, up to a constant)
    /// over the stacked inputs, with the input box; no rows.
    pub qp: QpProblem,
    /// Stacked predicted states `x_1..x_N` equal `psi * u + free`.
    pub psi: DMatrix<f64>,
    pub free: DVector<f64>,
}

/// Condense `sum_{j<N} |x_j - r_j|_Q^2 + |u_j - u_ref|_R^2 + |x_N - r_N|_P^2`.
///
/// `reference` holds `r_0..r_N`; the `x_0` term is constant and dropped.
pub fn condense(
    ltv: &Ltv,
    x0: &DVector<f64>,
    reference: &[DVector<f64>],
    u_ref: &DVector<f64>,
    weights: &Weights,
) -> Result<Condensed> {
    let n = ltv.horizon();
    if n == 0 {
        return Err(Error::Dimension("empty horizon".into()));
    }
    let nx = x0.len();
    let nu = u_ref.len();
    let dims_ok = ltv.b.len() == n
        && ltv.c.len() == n
        && ltv.a.iter().all(|a| a.shape() == (nx, nx))
        && ltv.b.iter().all(|b| b.shape() == (nx, nu))
        && ltv.c.iter().all(|c| c.len() == nx)
        && reference.len() == n + 1
        && reference.iter().all(|r| r.len() == nx)
        && weights.q.len() == nx
        && weights.p.len() == nx
        && weights.r.len() == nu
        && weights.u_min.len() == nu
        && weights.u_max.len() == nu;
    if !dims_ok {
        return Err(Error::Dimension(
            "condense: inconsistent LTV, reference or weight sizes".into(),
        ));
    }

    let nv = nu * n;
    let mut psi = DMatrix::zeros(nx * n, nv);
    let mut free = DVector::zeros(nx * n);
    let mut prev_block = DMatrix::zeros(nx, nv);
    let mut prev_free = x0.clone();
    for j in 0..n {
        let mut block = &ltv.a[j] * &prev_block;
        block.view_mut((0, j * nu), (nx, nu)).copy_from(&ltv.b[j]);
        let f = &ltv.a[j] * &prev_free + &ltv.c[j];
        psi.view_mut((j * nx, 0), (nx, nv)).copy_from(&block);
        free.rows_mut(j * nx, nx).copy_from(&f);
        prev_block = block;
        prev_free = f;
    }

    let mut qbar = DVector::zeros(nx * n);
    let mut err = DVector::zeros(nx * n);
    for j in 0..n {
        let w = if j + 1 == n { &weights.p } else { &weights.q };
        qbar.rows_mut(j * nx, nx).copy_from(w);
        err.rows_mut(j * nx, nx)
            .copy_from(&(free.rows(j * nx, nx) - &reference[j + 1]));
    }
    let mut qpsi = psi.clone();
    for (i, mut row) in qpsi.row_iter_mut().enumerate() {
        row *= qbar[i];
    }
    let mut hessian = psi.transpose() * &qpsi * 2.0;
    let mut gradient = qpsi.transpose() * &err * 2.0;
    for j in 0..n {
        for i in 0..nu {
            let k = j * nu + i;
            hessian[(k, k)] += 2.0 * weights.r[i];
            gradient[k] -= 2.0 * weights.r[i] * u_ref[i];
        }
    }
    // Remove round-off asymmetry.
    let hessian = (&hessian + hessian.transpose()) * 0.5;

    let lower = DVector::from_fn(nv, |k, _| weights.u_min[k % nu]);
    let upper = DVector::from_fn(nv, |k, _| weights.u_max[k % nu]);
    Ok(Condensed {
        qp: QpProblem::boxed(hessian, gradient, lower, upper),
        psi,
        free,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum MpcStatus {
    Optimal,
    /// QP iteration cap hit; the best feasible iterate was used.
    MaxIterations,
    /// The QP failed; the previous input was repeated.
    Degraded(String),
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub inputs: Vec<InputVec>,
    /// Nonlinear prediction of `x_0..x_N` under `inputs`.
    pub states: Vec<StateVec>,
    pub u0: InputVec,
    pub kkt: KktResidual,
    pub status: MpcStatus,
    pub qp_iterations: usize,
    pub active_set_size: usize,
    /// Soft state rows in the final QP.
    pub soft_rows: usize,
}

/// Previous-step data used to warm start.
#[derive(Clone, Debug, Default)]
pub struct MpcMemory {
    inputs: Option<Vec<InputVec>>,
    active: Vec<usize>,
    soft: Vec<(usize, usize, bool)>,
    last_u0: Option<InputVec>,
}

/// Input that keeps the vehicle level and stationary under the frozen model.
fn steady_input(
    model: &PredictionModel,
    x0: &StateVec,
    freeze: &Freeze,
    config: &OcpConfig,
) -> InputVec {
    let params = model.params();
    let a = model.stage_accel(x0, freeze);
    let thrust = params.mass * (params.gravity().z - a.z);
    InputVec::new(
        thrust.clamp(config.u_min[0], config.u_max[0]),
        0.0,
        0.0,
        0.0,
    )
}

/// One real-time iteration.
///
/// Never fails mid-flight: a QP failure repeats the previous input (hover on
/// the first call) and reports [`MpcStatus::Degraded`].
pub fn mpc_step(
    x0: &StateVec,
    reference: &[StateVec],
    model: &PredictionModel,
    freeze: &Freeze,
    config: &OcpConfig,
    memory: &mut MpcMemory,
) -> Result<MpcSolution> {
    let n = config.horizon;
    if reference.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "reference window has {} states, expected {}",
            reference.len(),
            n + 1
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState("non-finite initial state".into()));
    }
    let params = model.params();
    let u_ss = steady_input(model, x0, freeze, config);
    let fallback = memory
        .last_u0
        .unwrap_or_else(|| InputVec::new(params.hover_thrust(), 0.0, 0.0, 0.0));

    let u_bar = memory.inputs.clone().unwrap_or_else(|| vec![u_ss; n]);
    let mut x_bar = Vec::with_capacity(n + 1);
    x_bar.push(*x0);
    for j in 0..n {
        let next = model.step(&x_bar[j], &u_bar[j], freeze, config.dt);
        x_bar.push(next);
    }

    let degraded = |reason: String, memory: &mut MpcMemory| {
        memory.inputs = None;
        memory.active.clear();
        MpcSolution {
            inputs: vec![fallback; n],
            states: vec![*x0; n + 1],
            u0: fallback,
            kkt: KktResidual {
                stationarity: f64::NAN,
                primal: f64::NAN,
                complementarity: f64::NAN,
            },
            status: MpcStatus::Degraded(reason),
            qp_iterations: 0,
            active_set_size: 0,
            soft_rows: 0,
        }
    };

    let ltv = match discretize_and_linearize(model, &x_bar, &u_bar, freeze, config) {
        Ok(l) => l,
        Err(e) => return Ok(degraded(e.to_string(), memory)),
    };
    let x0d = DVector::from_column_slice(x0.as_slice());
    let refs: Vec<DVector<f64>> = reference
        .iter()
        .map(|r| DVector::from_column_slice(r.as_slice()))
        .collect();
    let u_ref = DVector::from_column_slice(u_ss.as_slice());
    let condensed = condense(&ltv, &x0d, &refs, &u_ref, &config.weights())?;

    let nv = NU * n;
    let mut soft = memory.soft.clone();
    let mut warm = WarmStart {
        x: Some(DVector::from_fn(nv, |k, _| u_bar[k / NU][k % NU])),
        active: memory
            .active
            .iter()
            .copied()
            .filter(|&id| id < 2 * nv)
            .collect(),
    };
    let mut solution = None;
    for _round in 0..4 {
        let qp = with_soft_rows(&condensed, &soft, config);
        let dim = qp.n();
        let mut start = warm.clone();
        if let Some(x) = start.x.as_mut() {
            *x = DVector::from_fn(dim, |k, _| if k < nv { x[k] } else { 0.0 });
        }
        // Slacks start at zero with their bound active.
        let remap = |id: usize| if id < nv { id } else { id + (dim - nv) };
        start.active = start.active.iter().map(|&id| remap(id)).collect();
        start.active.extend(nv..dim);
        let sol = match solve_qp_with(
            &qp,
            &start,
            &QpSettings {
                max_iterations: config.max_qp_iterations,
            },
        ) {
            Ok(s) => s,
            Err(e) => return Ok(degraded(e.to_string(), memory)),
        };
        match sol.status {
            QpStatus::Optimal | QpStatus::MaxIterations => {}
            ref other => return Ok(degraded(format!("QP status {other:?}"), memory)),
        }
        if sol.x.iter().any(|v| !v.is_finite()) {
            return Ok(degraded("non-finite QP solution".into(), memory));
        }
        let u = sol.x.rows(0, nv).into_owned();
        let predicted = &condensed.psi * &u + &condensed.free;
        let mut added = false;
        for j in 0..n {
            for c in 0..NX {
                let v = predicted[j * NX + c];
                for (upper, violated) in [
                    (true, v > config.x_max[c] + 1e-9),
                    (false, v < config.x_min[c] - 1e-9),
                ] {
                    if violated && !soft.contains(&(j, c, upper)) {
                        soft.push((j, c, upper));
                        added = true;
                    }
                }
            }
        }
        let keep_active: Vec<usize> = sol
            .active
            .iter()
            .filter_map(|&id| {
                if id < nv {
                    Some(id)
                } else if (dim..dim + nv).contains(&id) {
                    Some(id - dim + nv)
                } else {
                    None
                }
            })
            .collect();
        warm = WarmStart {
            x: Some(u),
            active: keep_active,
        };
        solution = Some(sol);
        if !added {
            break;
        }
    }
    let sol = solution.expect("at least one round");

    let status = if sol.status == QpStatus::Optimal {
        MpcStatus::Optimal
    } else {
        MpcStatus::MaxIterations
    };
    let inputs: Vec<InputVec> = (0..n)
        .map(|j| {
            let mut u = InputVec::from_fn(|i, _| sol.x[j * NU + i]);
            for i in 0..NU {
                u[i] = u[i].clamp(config.u_min[i], config.u_max[i]);
            }
            u
        })
        .collect();
    let mut states = Vec::with_capacity(n + 1);
    states.push(*x0);
    for j in 0..n {
        let next = model.step(&states[j], &inputs[j], freeze, config.dt);
        states.push(next);
    }
    memory.inputs = Some(inputs.clone());
    memory.active = warm.active;
    memory.soft = soft.clone();
    memory.last_u0 = Some(inputs[0]);
    Ok(MpcSolution {
        u0: inputs[0],
        states,
        inputs,
        kkt: sol.kkt,
        status,
        qp_iterations: sol.iterations,
        active_set_size: sol.active.len(),
        soft_rows: soft.len(),
    })
}

/// Append soft state-box rows `+-(psi_row u) - s <= bound -+ free` with one
/// slack per row.
fn with_soft_rows(
    condensed: &Condensed,
    soft: &[(usize, usize, bool)],
    config: &OcpConfig,
) -> QpProblem {
    let base = &condensed.qp;
    if soft.is_empty() {
        return base.clone();
    }
    let nv = base.n();
    let k = soft.len();
    let dim = nv + k;
    let mut hessian = DMatrix::zeros(dim, dim);
    hessian.view_mut((0, 0), (nv, nv)).copy_from(&base.hessian);
    let mut gradient = DVector::zeros(dim);
    gradient.rows_mut(0, nv).copy_from(&base.gradient);
    gradient.rows_mut(nv, k).fill(2.0 * config.slack_weight);
    let mut lower = DVector::zeros(dim);
    let mut upper = DVector::from_element(dim, INF);
    lower.rows_mut(0, nv).copy_from(&base.lower);
    upper.rows_mut(0, nv).copy_from(&base.upper);
    let mut a = DMatrix::zeros(k, dim);
    let mut b = DVector::zeros(k);
    for (i, &(j, c, is_upper)) in soft.iter().enumerate() {
        let row = j * NX + c;
        let sign = if is_upper { 1.0 } else { -1.0 };
        for col in 0..nv {
            a[(i, col)] = sign * condensed.psi[(row, col)];
        }
        a[(i, nv + i)] = -1.0;
        b[i] = if is_upper {
            config.x_max[c] - condensed.free[row]
        } else {
            condensed.free[row] - config.x_min[c]
        };
    }
    QpProblem {
        hessian,
        gradient,
        lower,
        upper,
        a,
        b,
    }
}

/// A vehicle's MPC instance with its warm-start memory.
#[derive(Clone, Debug)]
pub struct Mpc {
    pub config: OcpConfig,
    pub model: PredictionModel,
    memory: MpcMemory,
}

impl Mpc {
    pub fn new(config: OcpConfig, model: PredictionModel) -> Result<Self> {
        config.validate(model.params())?;
        Ok(Self {
            config,
            model,
            memory: MpcMemory::default(),
        })
    }

    pub fn step(
        &mut self,
        x0: &StateVec,
        reference: &[StateVec],
        freeze: &Freeze,
    ) -> Result<MpcSolution> {
        mpc_step(
            x0,
            reference,
            &self.model,
            freeze,
            &self.config,
            &mut self.memory,
        )
    }
}
