//! Multi-step prediction training with gradients backpropagated through the
//! unrolled RK4 integrator.
//!
//! The interaction force is held over each step, and the attitude trajectory
//! does not depend on position, velocity or force. RK4 on the translational
//! rows is therefore affine:
//!
//! ```text
//! p+ = p + T v + dp + T^2/2 F/m
//! v+ = v + dv + T F/m
//! ```
//!
//! where `dp` and `dv` collect the thrust and gravity stages. They are
//! computed once per window, which makes the adjoint pass exact and cheap.

use nalgebra::Vector3;

use super::data::TrainingSet;
use super::{DwFeatures, Mlp};
use crate::downwash::{pairwise_force_gradient, pairwise_unchecked, DwParams, Neighbor};
use crate::error::{Error, Result};
use crate::rigid_body::{dynamics, rk4_raw, QuadParams, QuadState, StateVec};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub horizon: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Windows are subsampled with a uniform stride down to about this many.
    pub max_windows: usize,
    pub dw: DwParams,
    pub params: QuadParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            epochs: 2000,
            learning_rate: 0.05,
            momentum: 0.9,
            max_windows: 600,
            dw: DwParams::default(),
            params: QuadParams::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct Step {
    dp: Vector3<f64>,
    dv: Vector3<f64>,
    neighbor: Neighbor,
}

#[derive(Clone, Debug)]
struct Window {
    p0: Vector3<f64>,
    v0: Vector3<f64>,
    steps: Vec<Step>,
    targets: Vec<(Vector3<f64>, Vector3<f64>)>,
}

/// Prediction windows cut from a training set.
#[derive(Clone, Debug)]
pub struct Windows {
    items: Vec<Window>,
    dt: f64,
    horizon: usize,
}

impl Windows {
    pub fn build(data: &TrainingSet, config: &TrainConfig) -> Result<Self> {
        let h = config.horizon;
        if data.segments.is_empty() || h == 0 {
            return Err(Error::InvalidState(
                "training needs a non-empty set and horizon".into(),
            ));
        }
        let dt = data.segments[0].dt;
        for s in &data.segments {
            s.validate(h)?;
            if (s.dt - dt).abs() > 1e-12 {
                return Err(Error::InvalidState(
                    "segments use different sample periods".into(),
                ));
            }
        }
        let total: usize = data.segments.iter().map(|s| s.len() - h).sum();
        let stride = total.div_ceil(config.max_windows.max(1)).max(1);
        let params = &config.params;
        let zero = Vector3::zeros();
        let mut items = Vec::new();
        let mut counter = 0usize;
        for s in &data.segments {
            for k in 0..s.len() - h {
                counter += 1;
                if !(counter - 1).is_multiple_of(stride) {
                    continue;
                }
                let mut q = s.states[k].q;
                let mut steps = Vec::with_capacity(h);
                for j in 0..h {
                    let mut x = StateVec::zeros();
                    x.fixed_rows_mut::<4>(6).copy_from(&q);
                    let next = rk4_raw(
                        &|st: &StateVec, u: &_| dynamics(st, u, params, &zero),
                        &x,
                        &s.inputs[k + j].to_vector(),
                        dt,
                    );
                    steps.push(Step {
                        dp: next.fixed_rows::<3>(0).into_owned(),
                        dv: next.fixed_rows::<3>(3).into_owned(),
                        neighbor: s.neighbors[k + j],
                    });
                    q = next.fixed_rows::<4>(6).into_owned();
                }
                items.push(Window {
                    p0: s.states[k].p,
                    v0: s.states[k].v,
                    steps,
                    targets: (1..=h)
                        .map(|j| (s.states[k + j].p, s.states[k + j].v))
                        .collect(),
                });
            }
        }
        Ok(Self {
            items,
            dt,
            horizon: h,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Only windows whose first step has an active interaction.
    pub fn interacting(&self, dw: &DwParams) -> Self {
        Self {
            items: self
                .items
                .iter()
                .filter(|w| {
                    let n = &w.steps[0].neighbor;
                    n.state.p.z > w.p0.z && (n.state.p - w.p0).norm() <= dw.alpha_nbr
                })
                .cloned()
                .collect(),
            dt: self.dt,
            horizon: self.horizon,
        }
    }
}

type Trajectory = Vec<(Vector3<f64>, Vector3<f64>)>;

struct StepTrace {
    active: bool,
    acts: Vec<Vec<f64>>,
    dw_grad: Vector3<f64>,
}

fn ego_at(p: Vector3<f64>, v: Vector3<f64>) -> QuadState {
    QuadState {
        p,
        v,
        ..QuadState::at_rest(p)
    }
}

/// Unroll one window; returns predicted `(p, v)` for steps `1..=H` and the
/// per-step trace for the adjoint pass.
fn unroll(
    w: &Window,
    mlp: Option<&Mlp>,
    config: &TrainConfig,
    dt: f64,
    trace: bool,
) -> (Trajectory, Vec<StepTrace>) {
    let m = config.params.mass;
    let hover = config.params.hover_thrust();
    let (mut p, mut v) = (w.p0, w.v0);
    let mut out = Vec::with_capacity(w.steps.len());
    let mut traces = Vec::with_capacity(if trace { w.steps.len() } else { 0 });
    for step in &w.steps {
        let n = &step.neighbor;
        let d = n.state.p - p;
        let active = d.z > 0.0 && d.norm() <= config.dw.alpha_nbr;
        let mut force = Vector3::zeros();
        let mut acts = Vec::new();
        let mut dw_grad = Vector3::zeros();
        if active {
            force += pairwise_unchecked(&p, &n.state.p, n.thrust, &config.dw);
            if let Some(mlp) = mlp {
                let f = DwFeatures::new(&ego_at(p, v), n, hover);
                acts = mlp.forward_cached(&f.0);
                let o = acts.last().expect("output layer");
                force += Vector3::new(o[0], o[1], o[2]) * mlp.output_scale;
            }
            if trace {
                dw_grad = pairwise_force_gradient(&p, &n.state.p, n.thrust, &config.dw);
            }
        }
        let p_next = p + v * dt + step.dp + force * (0.5 * dt * dt / m);
        let v_next = v + step.dv + force * (dt / m);
        if trace {
            traces.push(StepTrace {
                active,
                acts,
                dw_grad,
            });
        }
        p = p_next;
        v = v_next;
        out.push((p, v));
    }
    (out, traces)
}

/// Error weights turning step-`j` position and velocity errors into
/// accelerations in units of `g`.
fn weights(j: usize, dt: f64, g: f64) -> (f64, f64) {
    let tj = j as f64 * dt;
    (2.0 / (tj * tj * g), 1.0 / (tj * g))
}

/// Mean squared normalized multi-step prediction error.
pub fn loss(mlp: &Mlp, windows: &Windows, config: &TrainConfig) -> f64 {
    let g = config.params.gravity().norm();
    let mut total = 0.0;
    for w in &windows.items {
        let (pred, _) = unroll(w, Some(mlp), config, windows.dt, false);
        for (j, ((p, v), (pt, vt))) in pred.iter().zip(&w.targets).enumerate() {
            let (wp, wv) = weights(j + 1, windows.dt, g);
            total += ((p - pt) * wp).norm_squared() + ((v - vt) * wv).norm_squared();
        }
    }
    total / (windows.items.len() * windows.horizon * 6) as f64
}

/// Loss and its exact gradient with respect to the network parameters.
pub fn gradient(mlp: &Mlp, windows: &Windows, config: &TrainConfig) -> (f64, Vec<f64>) {
    let g = config.params.gravity().norm();
    let dt = windows.dt;
    let m = config.params.mass;
    let scale = 1.0 / (windows.items.len() * windows.horizon * 6) as f64;
    let mut grad = vec![0.0; mlp.params().len()];
    let mut total = 0.0;
    for w in &windows.items {
        let (pred, traces) = unroll(w, Some(mlp), config, dt, true);
        let mut lp = Vector3::zeros();
        let mut lv = Vector3::zeros();
        for j in (0..pred.len()).rev() {
            let (p, v) = pred[j];
            let (pt, vt) = w.targets[j];
            let (wp, wv) = weights(j + 1, dt, g);
            let ep = (p - pt) * wp;
            let ev = (v - vt) * wv;
            total += ep.norm_squared() + ev.norm_squared();
            lp += ep * (2.0 * wp * scale);
            lv += ev * (2.0 * wv * scale);

            // Back through step j (state j -> j+1).
            let tr = &traces[j];
            let lf = (lp * (0.5 * dt * dt) + lv * dt) / m;
            let mut new_lp = lp;
            let mut new_lv = lp * dt + lv;
            if tr.active {
                new_lp += tr.dw_grad * lf.z;
                if !tr.acts.is_empty() {
                    let up = [
                        lf.x * mlp.output_scale,
                        lf.y * mlp.output_scale,
                        lf.z * mlp.output_scale,
                    ];
                    let gx = mlp.backward(&tr.acts, &up, &mut grad);
                    new_lp -= Vector3::new(gx[0], gx[1], gx[2]);
                    new_lv -= Vector3::new(gx[3], gx[4], gx[5]);
                    new_lv.z += gx[6];
                }
            }
            lp = new_lp;
            lv = new_lv;
        }
    }
    (total * scale, grad)
}

/// 5-step (or `horizon`-step) velocity prediction RMSE; `mlp = None` scores
/// the physics-only model.
pub fn evaluate_velocity_rmse(mlp: Option<&Mlp>, windows: &Windows, config: &TrainConfig) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in &windows.items {
        let (pred, _) = unroll(w, mlp, config, windows.dt, false);
        for ((_, v), (_, vt)) in pred.iter().zip(&w.targets) {
            sum += (v - vt).norm_squared();
            count += 3;
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub mlp: Mlp,
    /// Loss before each update, then the final loss.
    pub losses: Vec<f64>,
}

/// Training stopped on a non-finite loss.
#[derive(Clone, Debug)]
pub struct Diverged {
    pub epoch: usize,
    /// Last parameters with a finite loss.
    pub checkpoint: Mlp,
    pub losses: Vec<f64>,
}

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        Error::TrainingDiverged { epoch: self.epoch }.fmt(f)
    }
}

impl std::error::Error for Diverged {}

/// Full-batch gradient descent with momentum.
pub fn train_knode(
    windows: &Windows,
    mlp: Mlp,
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome, Diverged> {
    let mut mlp = mlp;
    let mut last_good = mlp.clone();
    let mut velocity = vec![0.0; mlp.params().len()];
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (l, g) = gradient(&mlp, windows, config);
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Diverged {
                epoch,
                checkpoint: last_good,
                losses,
            });
        }
        losses.push(l);
        last_good = mlp.clone();
        for ((p, vel), gi) in mlp.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&g) {
            *vel = config.momentum * *vel - config.learning_rate * gi;
            *p += *vel;
        }
    }
    let last = loss(&mlp, windows, config);
    if !last.is_finite() {
        return Err(Diverged {
            epoch: config.epochs,
            checkpoint: last_good,
            losses,
        });
    }
    losses.push(last);
    Ok(TrainOutcome { mlp, losses })
}
