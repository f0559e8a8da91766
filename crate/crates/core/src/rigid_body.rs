//! Nominal quadrotor dynamics, quaternion kinematics and fixed-step RK4.
//!
//! State layout (10): `[p_x, p_y, p_z, v_x, v_y, v_z, q_x, q_y, q_z, q_w]`, with the
//! quaternion rotating body vectors into the world frame. Inputs (4):
//! `[u_gamma, omega_x, omega_y, omega_z]`, collective thrust in newtons and body
//! rates in rad/s. Body rates are assumed to be tracked perfectly.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NX: usize = 10;
pub const NU: usize = 4;

pub type StateVec = SVector<f64, NX>;
pub type InputVec = SVector<f64, NU>;

/// Position, velocity and attitude of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// `(q_x, q_y, q_z, q_w)`, body to world.
    pub q: Vector4<f64>,
}

impl QuadState {
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            q: Vector4::new(0.0, 0.0, 0.0, 1.0),
        }
    }

    pub fn to_vector(&self) -> StateVec {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x.fixed_rows_mut::<4>(6).copy_from(&self.q);
        x
    }

    pub fn from_vector(x: &StateVec) -> Self {
        Self {
            p: x.fixed_rows::<3>(0).into_owned(),
            v: x.fixed_rows::<3>(3).into_owned(),
            q: x.fixed_rows::<4>(6).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p
            .iter()
            .chain(self.v.iter())
            .chain(self.q.iter())
            .all(|c| c.is_finite())
    }

    fn check(&self, tol: f64) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidState("non-finite state component".into()));
        }
        let n = self.q.norm();
        if (n - 1.0).abs() > tol {
            return Err(Error::InvalidState(format!(
                "quaternion norm {n} is not unit"
            )));
        }
        Ok(())
    }
}

/// Commanded collective thrust and body rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlInput {
    pub u_gamma: f64,
    pub omega: Vector3<f64>,
}

impl ControlInput {
    pub fn hover(params: &QuadParams) -> Self {
        Self {
            u_gamma: params.hover_thrust(),
            omega: Vector3::zeros(),
        }
    }

    pub fn to_vector(&self) -> InputVec {
        InputVec::new(self.u_gamma, self.omega.x, self.omega.y, self.omega.z)
    }

    pub fn from_vector(u: &InputVec) -> Self {
        Self {
            u_gamma: u[0],
            omega: Vector3::new(u[1], u[2], u[3]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u_gamma.is_finite() && self.omega.iter().all(|c| c.is_finite())
    }

    /// Saturate into the admissible input box.
    pub fn clamped(&self, params: &QuadParams) -> Self {
        let w = params.omega_max;
        Self {
            u_gamma: self.u_gamma.clamp(0.0, params.u_max),
            omega: self.omega.map(|c| c.clamp(-w, w)),
        }
    }
}

/// Physical constants of one vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadParams {
    /// Mass, kg.
    pub mass: f64,
    /// Gravity vector in the world frame, subtracted in the velocity equation.
    pub gravity: [f64; 3],
    /// Body length, m.
    pub diameter: f64,
    /// Maximum collective thrust, N.
    pub u_max: f64,
    /// Maximum commanded body rate, rad/s.
    pub omega_max: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.034,
            gravity: [0.0, 0.0, 9.81],
            diameter: 0.1,
            u_max: 0.65,
            omega_max: 10.0,
        }
    }
}

impl QuadParams {
    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity().norm()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.diameter > 0.0) || !(self.omega_max > 0.0) {
            return Err(Error::Config(
                "quad params: mass, diameter and omega_max must be positive".into(),
            ));
        }
        if !(self.u_max > self.hover_thrust()) {
            return Err(Error::Config(format!(
                "quad params: u_max {} cannot sustain hover thrust {}",
                self.u_max,
                self.hover_thrust()
            )));
        }
        Ok(())
    }
}

/// Rotation matrix body -> world for a unit quaternion `(x, y, z, w)`.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let n = q.norm();
    if !n.is_finite() || n < 1e-9 {
        return Err(Error::InvalidState(
            "quaternion norm is zero or non-finite".into(),
        ));
    }
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidState(format!(
            "quaternion norm {n} is not unit"
        )));
    }
    Ok(rotation(q))
}

/// Unchecked rotation matrix; also used on the slightly non-unit RK4 stage values.
#[inline]
pub(crate) fn rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (x, y, z, w) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Third column of the rotation matrix, the body z-axis in world coordinates.
#[inline]
pub(crate) fn body_z(q: &Vector4<f64>) -> Vector3<f64> {
    let (x, y, z, w) = (q[0], q[1], q[2], q[3]);
    Vector3::new(
        2.0 * (x * z + y * w),
        2.0 * (y * z - x * w),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// The 3x4 matrix mapping body rates to quaternion derivatives, `q_dot = 1/2 G(q)^T omega`.
pub fn g_matrix(q: &Vector4<f64>) -> SMatrix<f64, 3, 4> {
    let (x, y, z, w) = (q[0], q[1], q[2], q[3]);
    SMatrix::<f64, 3, 4>::new(
        w, z, -y, -x, //
        -z, w, x, -y, //
        y, -x, w, -z,
    )
}

/// Nominal dynamics plus an additive acceleration in the velocity rows.
///
/// No validity checks; callers on the hot path are responsible for finiteness.
#[inline]
pub fn dynamics(x: &StateVec, u: &InputVec, params: &QuadParams, accel: &Vector3<f64>) -> StateVec {
    let q: Vector4<f64> = x.fixed_rows::<4>(6).into_owned();
    let thrust_acc = body_z(&q) * (u[0] / params.mass);
    let vdot = thrust_acc - params.gravity() + accel;
    let omega = Vector3::new(u[1], u[2], u[3]);
    let qdot = g_matrix(&q).transpose() * omega * 0.5;

    let mut dx = StateVec::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&x.fixed_rows::<3>(3));
    dx.fixed_rows_mut::<3>(3).copy_from(&vdot);
    dx.fixed_rows_mut::<4>(6).copy_from(&qdot);
    dx
}

/// Nominal dynamics `(p_dot, v_dot, q_dot)`.
pub fn f_nom(state: &QuadState, input: &ControlInput, params: &QuadParams) -> Result<StateVec> {
    state.check(1e-6)?;
    if !input.is_finite() {
        return Err(Error::InvalidState("non-finite control input".into()));
    }
    Ok(dynamics(
        &state.to_vector(),
        &input.to_vector(),
        params,
        &Vector3::zeros(),
    ))
}

/// One classical RK4 step for a time-invariant vector field.
#[inline]
pub fn rk4<const D: usize, F>(f: F, x: &SVector<f64, D>, dt: f64) -> SVector<f64, D>
where
    F: Fn(&SVector<f64, D>) -> SVector<f64, D>,
{
    let k1 = f(x);
    let k2 = f(&(x + k1 * (0.5 * dt)));
    let k3 = f(&(x + k2 * (0.5 * dt)));
    let k4 = f(&(x + k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Renormalize the quaternion block in place and pick the `q_w >= 0` representative.
#[inline]
pub fn normalize_quaternion(x: &mut StateVec) {
    let mut q = x.fixed_rows_mut::<4>(6);
    let n = q.norm();
    if n > 0.0 && n.is_finite() {
        let s = if q[3] < 0.0 { -1.0 / n } else { 1.0 / n };
        q *= s;
    }
}

/// RK4 step on the raw state vector with zero-order-hold input, followed by
/// quaternion renormalization.
#[inline]
pub fn rk4_raw<F>(f: &F, x: &StateVec, u: &InputVec, dt: f64) -> StateVec
where
    F: Fn(&StateVec, &InputVec) -> StateVec,
{
    let mut next = rk4(|s| f(s, u), x, dt);
    normalize_quaternion(&mut next);
    next
}

/// Advance `state` by `dt` under `input` held constant.
pub fn rk4_step<F>(f: F, state: &QuadState, input: &ControlInput, dt: f64) -> Result<QuadState>
where
    F: Fn(&StateVec, &InputVec) -> StateVec,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidState(format!(
            "time step {dt} must be positive"
        )));
    }
    let next = rk4_raw(&f, &state.to_vector(), &input.to_vector(), dt);
    if next.iter().any(|c| !c.is_finite()) {
        return Err(Error::IntegrationDiverged(
            "non-finite state after RK4 step".into(),
        ));
    }
    Ok(QuadState::from_vector(&next))
}

/// Convenience wrapper integrating the nominal model.
pub fn rk4_nominal(
    state: &QuadState,
    input: &ControlInput,
    params: &QuadParams,
    dt: f64,
) -> Result<QuadState> {
    let zero = Vector3::zeros();
    rk4_step(|x, u| dynamics(x, u, params, &zero), state, input, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;
    use proptest::prelude::*;

    fn unit_quat(a: f64, b: f64, c: f64, d: f64) -> Vector4<f64> {
        let q = Vector4::new(a, b, c, d);
        q / q.norm()
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = QuadParams::default();
        let s = QuadState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let dx = f_nom(&s, &ControlInput::hover(&p), &p).unwrap();
        assert!(dx.norm() < 1e-15);
    }

    #[test]
    fn free_fall_accelerates_at_minus_g() {
        let p = QuadParams::default();
        let mut s = QuadState::at_rest(Vector3::zeros());
        s.q = unit_quat(0.3, -0.2, 0.5, 0.7);
        let u = ControlInput {
            u_gamma: 0.0,
            omega: Vector3::zeros(),
        };
        let dx = f_nom(&s, &u, &p).unwrap();
        assert_eq!(dx.fixed_rows::<3>(3).into_owned(), -p.gravity());
    }

    #[test]
    fn yaw_rate_at_identity() {
        let p = QuadParams::default();
        let s = QuadState::at_rest(Vector3::zeros());
        let u = ControlInput {
            u_gamma: p.hover_thrust(),
            omega: Vector3::new(0.0, 0.0, 1.0),
        };
        let dx = f_nom(&s, &u, &p).unwrap();
        let qdot = dx.fixed_rows::<4>(6).into_owned();
        assert!((qdot - Vector4::new(0.0, 0.0, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let p = QuadParams::default();
        let mut s = QuadState::at_rest(Vector3::zeros());
        s.v.x = f64::NAN;
        assert!(matches!(
            f_nom(&s, &ControlInput::hover(&p), &p),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(
            quat_to_rotation(&Vector4::new(0.0, 0.0, 0.0, 1.0)).unwrap(),
            Matrix3::identity()
        );
        let h = std::f64::consts::FRAC_PI_4;
        let r = quat_to_rotation(&Vector4::new(0.0, 0.0, h.sin(), h.cos())).unwrap();
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-15);
        assert!(quat_to_rotation(&Vector4::zeros()).is_err());
    }

    #[test]
    fn g_matrix_at_identity_matches_printed_rows() {
        let g = g_matrix(&Vector4::new(0.0, 0.0, 0.0, 1.0));
        let expected = SMatrix::<f64, 3, 4>::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        );
        assert_eq!(g, expected);
    }

    #[test]
    fn free_fall_step_matches_kinematics() {
        let p = QuadParams::default();
        let s = QuadState::at_rest(Vector3::zeros());
        let u = ControlInput {
            u_gamma: 0.0,
            omega: Vector3::zeros(),
        };
        let n = rk4_nominal(&s, &u, &p, 0.01).unwrap();
        assert!((n.v.z + 0.0981).abs() < 1e-15);
        assert!((n.p.z + 4.905e-4).abs() < 1e-15);
    }

    #[test]
    fn hover_step_is_stationary() {
        let p = QuadParams::default();
        let s = QuadState::at_rest(Vector3::new(0.3, -0.2, 1.0));
        let n = rk4_nominal(&s, &ControlInput::hover(&p), &p, 0.01).unwrap();
        assert!((n.to_vector() - s.to_vector()).norm() < 1e-12);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        let p = QuadParams::default();
        let s = QuadState::at_rest(Vector3::zeros());
        assert!(rk4_nominal(&s, &ControlInput::hover(&p), &p, 0.0).is_err());
    }

    // Closed-form solution of a damped rotation: x(t) = e^{-ct} R(t) x0.
    fn spiral_error(dt: f64) -> f64 {
        let c = 0.1;
        let m = Matrix2::new(-c, 1.0, -1.0, -c);
        let x0 = SVector::<f64, 2>::new(1.0, 0.0);
        let steps = (2.0 / dt).round() as usize;
        let mut x = x0;
        for _ in 0..steps {
            x = rk4(|s| m * s, &x, dt);
        }
        let t = steps as f64 * dt;
        let exact = SVector::<f64, 2>::new(t.cos(), -t.sin()) * (-c * t).exp();
        (x - exact).norm()
    }

    #[test]
    fn rk4_is_fourth_order_on_spiral() {
        let ratio = spiral_error(0.1) / spiral_error(0.05);
        assert!((ratio - 16.0).abs() < 0.2 * 16.0, "ratio {ratio}");
    }

    #[test]
    fn free_fall_energy_is_conserved() {
        let p = QuadParams::default();
        let mut s = QuadState::at_rest(Vector3::new(0.0, 0.0, 10.0));
        s.v = Vector3::new(0.4, -0.3, 1.0);
        let u = ControlInput {
            u_gamma: 0.0,
            omega: Vector3::zeros(),
        };
        let energy =
            |s: &QuadState| 0.5 * p.mass * s.v.norm_squared() + p.mass * p.gravity().dot(&s.p);
        let e0 = energy(&s);
        for _ in 0..1000 {
            s = rk4_nominal(&s, &u, &p, 1e-3).unwrap();
        }
        assert!((energy(&s) - e0).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in 0.1..1.0f64) {
            let r = quat_to_rotation(&unit_quat(a, b, c, d)).unwrap();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn g_rows_are_orthogonal_to_q(a in -2.0..2.0f64, b in -2.0..2.0f64, c in -2.0..2.0f64, d in -2.0..2.0f64) {
            let q = Vector4::new(a, b, c, d);
            prop_assert!((g_matrix(&q) * q).norm() < 1e-12);
            prop_assert_eq!(g_matrix(&(-q)), -g_matrix(&q));
        }

        #[test]
        fn quaternion_derivative_is_tangent(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in 0.1..1.0f64,
                                            wx in -5.0..5.0f64, wy in -5.0..5.0f64, wz in -5.0..5.0f64, th in 0.0..0.6f64) {
            let p = QuadParams::default();
            let mut s = QuadState::at_rest(Vector3::zeros());
            s.q = unit_quat(a, b, c, d);
            let u = ControlInput { u_gamma: th, omega: Vector3::new(wx, wy, wz) };
            let dx = f_nom(&s, &u, &p).unwrap();
            prop_assert!(s.q.dot(&dx.fixed_rows::<4>(6).into_owned()).abs() < 1e-9);
        }

        #[test]
        fn thrust_enters_affinely(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in 0.1..1.0f64, th in 0.01..0.3f64) {
            let p = QuadParams::default();
            let mut s = QuadState::at_rest(Vector3::zeros());
            s.q = unit_quat(a, b, c, d);
            let acc = |t: f64| {
                let u = ControlInput { u_gamma: t, omega: Vector3::zeros() };
                f_nom(&s, &u, &p).unwrap().fixed_rows::<3>(3).into_owned() + p.gravity()
            };
            prop_assert!((acc(2.0 * th) - acc(th) * 2.0).norm() < 1e-12);
        }

        #[test]
        fn step_keeps_unit_quaternion(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in 0.1..1.0f64,
                                      wx in -10.0..10.0f64, wy in -10.0..10.0f64, wz in -10.0..10.0f64) {
            let p = QuadParams::default();
            let mut s = QuadState::at_rest(Vector3::zeros());
            s.q = unit_quat(a, b, c, d);
            let u = ControlInput { u_gamma: 0.3, omega: Vector3::new(wx, wy, wz) };
            let n = rk4_nominal(&s, &u, &p, 0.005).unwrap();
            prop_assert!((n.q.norm() - 1.0).abs() < 1e-9);
            prop_assert!(n.q[3] >= 0.0);
        }
    }
}
