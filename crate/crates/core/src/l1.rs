//! L1 adaptive module on the translational velocity subspace.
//!
//! A state predictor runs alongside the vehicle, a piecewise-constant law turns
//! the prediction error into a residual-acceleration estimate, and a first-order
//! low-pass filter produces the compensation handed to the MPC prediction model.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::{body_z, rk4, QuadParams, StateVec};

/// How the filtered compensation enters the prediction model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensationSign {
    /// `f_sigma` carries `U_sigma` itself (whose fixed point is `-sigma_hat`).
    Direct,
    /// `f_sigma` carries `-U_sigma`, i.e. tends to `+sigma_hat`.
    Negated,
}

impl CompensationSign {
    pub fn factor(self) -> f64 {
        match self {
            Self::Direct => 1.0,
            Self::Negated => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Negated => "negated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Config {
    /// Hurwitz error-dynamics matrix, row-major.
    pub a_matrix: [[f64; 3]; 3],
    /// Low-pass cut-off, 1/s.
    pub alpha_lpf: f64,
    /// Sample period, s. Overwritten by the vehicle's control rate in scenarios.
    pub dt: f64,
    /// Closed-loop validated default: `negated`.
    pub compensation_sign: CompensationSign,
}

impl Default for L1Config {
    fn default() -> Self {
        Self {
            a_matrix: [[-10.0, 0.0, 0.0], [0.0, -10.0, 0.0], [0.0, 0.0, -10.0]],
            alpha_lpf: 40.0,
            dt: 1.0 / 200.0,
            compensation_sign: CompensationSign::Negated,
        }
    }
}

impl L1Config {
    pub fn a(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.a_matrix[i][j])
    }

    /// `(e^{AT} - I)^{-1} A e^{AT}`.
    pub fn law_gain(&self) -> Result<Matrix3<f64>> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!(
                "L1 sample period {} must be positive",
                self.dt
            )));
        }
        let a = self.a();
        if !is_hurwitz(&a) {
            return Err(Error::Config("L1 matrix A is not Hurwitz".into()));
        }
        let e = (a * self.dt).exp();
        let inv = (e - Matrix3::identity())
            .try_inverse()
            .ok_or_else(|| Error::Config("e^{AT} - I is singular".into()))?;
        Ok(inv * a * e)
    }

    pub fn lpf_decay(&self) -> f64 {
        (-self.alpha_lpf * self.dt).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_lpf > 0.0) {
            return Err(Error::Config("L1 alpha_lpf must be positive".into()));
        }
        self.law_gain().map(|_| ())
    }
}

fn is_hurwitz(a: &Matrix3<f64>) -> bool {
    a.complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

/// Per-vehicle adaptive state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1State {
    pub z_hat: Vector3<f64>,
    pub sigma_hat: Vector3<f64>,
    pub u_sigma: Vector3<f64>,
    pub u_gamma_prev: f64,
}

impl L1State {
    pub fn new(v: Vector3<f64>, u_gamma: f64) -> Self {
        Self {
            z_hat: v,
            sigma_hat: Vector3::zeros(),
            u_sigma: Vector3::zeros(),
            u_gamma_prev: u_gamma,
        }
    }
}

/// Piecewise-constant adaptation law.
pub fn adaptation_law(
    z: &Vector3<f64>,
    z_hat: &Vector3<f64>,
    config: &L1Config,
) -> Result<Vector3<f64>> {
    Ok(config.law_gain()? * (z - z_hat))
}

/// Low-pass filter on the residual estimate.
pub fn lpf_step(
    u_prev: &Vector3<f64>,
    sigma_hat: &Vector3<f64>,
    config: &L1Config,
) -> Vector3<f64> {
    (u_prev + sigma_hat) * config.lpf_decay() - sigma_hat
}

/// Embed the compensation in the velocity rows of a state-space vector.
pub fn compose_f_sigma(u_sigma: &Vector3<f64>) -> StateVec {
    let mut f = StateVec::zeros();
    f.fixed_rows_mut::<3>(3).copy_from(u_sigma);
    f
}

/// Propagate the velocity predictor over one sample period with the measured
/// velocity, attitude, model force and thrust held constant.
#[allow(clippy::too_many_arguments)]
pub fn predictor_step(
    l1: &L1State,
    v_measured: &Vector3<f64>,
    q: &Vector4<f64>,
    model_force: &Vector3<f64>,
    config: &L1Config,
    params: &QuadParams,
) -> Result<Vector3<f64>> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidState(format!(
            "quaternion norm {n} is not unit"
        )));
    }
    let a = config.a();
    let drive = -params.gravity()
        + model_force / params.mass
        + body_z(q) * (l1.u_gamma_prev / params.mass)
        + l1.sigma_hat;
    let z_hat = rk4(|zh| drive + a * (zh - v_measured), &l1.z_hat, config.dt);
    if z_hat.iter().all(|c| c.is_finite()) {
        Ok(z_hat)
    } else {
        Err(Error::InvalidState("non-finite predictor state".into()))
    }
}

/// The adaptive loop of one vehicle, with cached gains.
#[derive(Clone, Debug)]
pub struct L1Adaptive {
    config: L1Config,
    gain: Matrix3<f64>,
    state: Option<L1State>,
    resets: usize,
}

impl L1Adaptive {
    pub fn new(config: L1Config) -> Result<Self> {
        config.validate()?;
        let gain = config.law_gain()?;
        Ok(Self {
            config,
            gain,
            state: None,
            resets: 0,
        })
    }

    pub fn config(&self) -> &L1Config {
        &self.config
    }

    pub fn state(&self) -> Option<&L1State> {
        self.state.as_ref()
    }

    pub fn resets(&self) -> usize {
        self.resets
    }

    /// Run the law and filter on a new velocity measurement; returns the
    /// acceleration to add to the prediction model.
    pub fn update(&mut self, v_measured: &Vector3<f64>) -> Vector3<f64> {
        let sign = self.config.compensation_sign.factor();
        let decay = self.config.lpf_decay();
        match self.state.as_mut() {
            None => {
                self.state = Some(L1State::new(*v_measured, 0.0));
                Vector3::zeros()
            }
            Some(s) => {
                s.sigma_hat = self.gain * (v_measured - s.z_hat);
                s.u_sigma = (s.u_sigma + s.sigma_hat) * decay - s.sigma_hat;
                s.u_sigma * sign
            }
        }
    }

    /// Advance the predictor over the coming sample period. Returns `true` when
    /// a non-finite prediction forced a reset.
    pub fn propagate(
        &mut self,
        v_measured: &Vector3<f64>,
        q: &Vector4<f64>,
        model_force: &Vector3<f64>,
        u_gamma: f64,
        params: &QuadParams,
    ) -> bool {
        let Some(s) = self.state.as_mut() else {
            return false;
        };
        s.u_gamma_prev = u_gamma;
        match predictor_step(s, v_measured, q, model_force, &self.config, params) {
            Ok(z) => {
                s.z_hat = z;
                false
            }
            Err(_) => {
                s.z_hat = *v_measured;
                s.sigma_hat = Vector3::zeros();
                self.resets += 1;
                true
            }
        }
    }
}
