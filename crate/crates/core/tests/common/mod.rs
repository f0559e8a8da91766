//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use tightstack::knode::{gradient, loss, Mlp, TrainConfig, Windows};
use tightstack::l1::{L1Adaptive, L1Config};
use tightstack::ocp::{Ltv, QpProblem, Weights};
use tightstack::rigid_body::{quat_to_rotation, ControlInput, QuadParams, QuadState};

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random convex box QP; every third instance has a rank-deficient Hessian.
pub fn random_box_qp<R: Rng>(rng: &mut R, n: usize, index: usize) -> QpProblem {
    let rank = if index.is_multiple_of(3) {
        (n / 2).max(1)
    } else {
        n
    };
    let m = DMatrix::from_fn(rank, n, |_, _| normal(rng));
    let hessian = m.transpose() * &m / n as f64;
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let gradient = DVector::from_fn(n, |_, _| 2.0 * normal(rng));
    let lower = DVector::from_fn(n, |_, _| -rng.gen_range(0.1..1.5));
    let upper = DVector::from_fn(n, |i, _| lower[i] + rng.gen_range(0.2..3.0));
    QpProblem::boxed(hessian, gradient, lower, upper)
}

fn project(x: &DVector<f64>, p: &QpProblem) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(p.lower[i], p.upper[i]))
}

/// Accelerated projected gradient with restarts, run until the projected
/// gradient step moves less than `tol`.
pub fn projected_gradient(p: &QpProblem, tol: f64, max_iter: usize) -> DVector<f64> {
    let n = p.n();
    let l = p.hessian.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / l;
    let mut x = project(&DVector::zeros(n), p);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let f = |v: &DVector<f64>| p.objective(v);
    for _ in 0..max_iter {
        let g = &p.hessian * &y + &p.gradient;
        let next = project(&(&y - g * step), p);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f(&next) > f(&x) {
            // Restart momentum.
            y = x.clone();
            t = 1.0;
            continue;
        }
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
        let gx = &p.hessian * &x + &p.gradient;
        if (project(&(&x - gx * step), p) - &x).amax() < tol {
            break;
        }
    }
    x
}

pub fn random_ltv<R: Rng>(rng: &mut R, nx: usize, nu: usize, n: usize) -> Ltv {
    Ltv {
        a: (0..n)
            .map(|_| DMatrix::identity(nx, nx) + DMatrix::from_fn(nx, nx, |_, _| 0.3 * normal(rng)))
            .collect(),
        b: (0..n)
            .map(|_| DMatrix::from_fn(nx, nu, |_, _| normal(rng)))
            .collect(),
        c: (0..n)
            .map(|_| DVector::from_fn(nx, |_, _| 0.1 * normal(rng)))
            .collect(),
    }
}

pub fn random_weights<R: Rng>(rng: &mut R, nx: usize, nu: usize) -> Weights {
    Weights {
        q: DVector::from_fn(nx, |_, _| rng.gen_range(0.1..5.0)),
        r: DVector::from_fn(nu, |_, _| rng.gen_range(0.1..2.0)),
        p: DVector::from_fn(nx, |_, _| rng.gen_range(0.1..10.0)),
        u_min: DVector::from_element(nu, f64::NEG_INFINITY),
        u_max: DVector::from_element(nu, f64::INFINITY),
    }
}

/// Solve the tracking problem over inputs and states jointly: the KKT system
/// of the equality-constrained least-squares problem, no condensing.
pub fn joint_least_squares(
    ltv: &Ltv,
    x0: &DVector<f64>,
    reference: &[DVector<f64>],
    u_ref: &DVector<f64>,
    w: &Weights,
) -> DVector<f64> {
    let n = ltv.a.len();
    let nx = x0.len();
    let nu = u_ref.len();
    let nz = n * (nu + nx);
    let xi = |j: usize| n * nu + (j - 1) * nx; // column of x_j, j >= 1
    let mut g = DMatrix::zeros(nz, nz);
    let mut lin = DVector::zeros(nz);
    for j in 0..n {
        for i in 0..nu {
            let k = j * nu + i;
            g[(k, k)] = 2.0 * w.r[i];
            lin[k] = -2.0 * w.r[i] * u_ref[i];
        }
    }
    for j in 1..=n {
        let wt = if j == n { &w.p } else { &w.q };
        for i in 0..nx {
            let k = xi(j) + i;
            g[(k, k)] = 2.0 * wt[i];
            lin[k] = -2.0 * wt[i] * reference[j][i];
        }
    }
    // x_{j+1} - A_j x_j - B_j u_j = c_j   (x_0 known)
    let mut e = DMatrix::zeros(n * nx, nz);
    let mut f = DVector::zeros(n * nx);
    for j in 0..n {
        let r = j * nx;
        for a in 0..nx {
            e[(r + a, xi(j + 1) + a)] = 1.0;
            for b in 0..nu {
                e[(r + a, j * nu + b)] = -ltv.b[j][(a, b)];
            }
            if j > 0 {
                for b in 0..nx {
                    e[(r + a, xi(j) + b)] = -ltv.a[j][(a, b)];
                }
            }
        }
        let rhs = if j == 0 {
            &ltv.a[0] * x0 + &ltv.c[0]
        } else {
            ltv.c[j].clone()
        };
        f.rows_mut(r, nx).copy_from(&rhs);
    }
    let dim = nz + n * nx;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (nz, nz)).copy_from(&g);
    kkt.view_mut((nz, 0), (n * nx, nz)).copy_from(&e);
    kkt.view_mut((0, nz), (nz, n * nx))
        .copy_from(&e.transpose());
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, nz).copy_from(&(-lin));
    rhs.rows_mut(nz, n * nx).copy_from(&f);
    let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT system");
    sol.rows(0, n * nu).into_owned()
}

/// Scalar-per-axis closed loop with a constant disturbance: the plant is the
/// exact hover dynamics plus `d`, sampled every `dt`, driven through the same
/// update / propagate sequence as the simulator. Returns the relative
/// estimation error `|sigma_hat - d| / |d|` after each step.
pub fn l1_constant_disturbance(d: Vector3<f64>, steps: usize) -> Vec<f64> {
    let params = QuadParams::default();
    let config = L1Config {
        dt: 0.005,
        ..Default::default()
    };
    let mut l1 = L1Adaptive::new(config.clone()).expect("valid config");
    let hover = ControlInput::hover(&params);
    let state = QuadState::at_rest(Vector3::new(0.0, 0.0, 1.0));
    // Thrust and gravity cancel, so the velocity is exactly v0 + d t.
    let accel = -params.gravity()
        + quat_to_rotation(&state.q).unwrap() * Vector3::z() * (hover.u_gamma / params.mass);
    assert!(accel.norm() < 1e-12);
    let mut v = Vector3::zeros();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..=steps {
        l1.update(&v);
        l1.propagate(&v, &state.q, &Vector3::zeros(), hover.u_gamma, &params);
        if let Some(s) = l1.state() {
            out.push((s.sigma_hat - d).norm() / d.norm());
        }
        v += d * config.dt;
    }
    out.remove(0);
    out
}

/// Compare the backpropagated gradient with central differences on `per_layer`
/// random entries of every layer. Returns the largest relative error.
pub fn gradient_check<R: Rng>(
    mlp: &Mlp,
    windows: &Windows,
    config: &TrainConfig,
    per_layer: usize,
    step: f64,
    rng: &mut R,
) -> (f64, usize) {
    let (_, g) = gradient(mlp, windows, config);
    let sizes = mlp.sizes().to_vec();
    let mut offset = 0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for l in 0..sizes.len() - 1 {
        let count = sizes[l] * sizes[l + 1] + sizes[l + 1];
        for _ in 0..per_layer {
            let k = offset + rng.gen_range(0..count);
            let mut plus = mlp.clone();
            plus.params_mut()[k] += step;
            let mut minus = mlp.clone();
            minus.params_mut()[k] -= step;
            let fd = (loss(&plus, windows, config) - loss(&minus, windows, config)) / (2.0 * step);
            let scale = g[k].abs().max(fd.abs()).max(1e-10);
            worst = worst.max((g[k] - fd).abs() / scale);
            checked += 1;
        }
        offset += count;
    }
    (worst, checked)
}

/// Perturb every parameter so all layers carry gradient.
pub fn randomized_mlp<R: Rng>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Mlp {
    let mut mlp = Mlp::zeros(sizes, output_scale).expect("valid sizes");
    for p in mlp.params_mut() {
        *p = 0.3 * normal(rng);
    }
    mlp
}
