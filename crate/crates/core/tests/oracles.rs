mod common;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use tightstack::downwash::{DwParams, PlantInteractionParams};
use tightstack::knode::{
    generate_training_data, knode_residual, loss, train_knode, DataConfig, DwFeatures, Mlp,
    TrainConfig, TrainingScenario, Windows,
};
use tightstack::l1::L1Config;
use tightstack::ocp::{condense, solve_qp, QpStatus, WarmStart};

#[test]
fn box_qps_match_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..40 {
        let n = rng.gen_range(1..=20);
        let p = random_box_qp(&mut rng, n, i);
        let sol = solve_qp(&p, &WarmStart::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "instance {i}");
        let reference = projected_gradient(&p, 1e-10, 200_000);
        let gap = sol.objective - p.objective(&reference);
        assert!(gap.abs() < 1e-7, "instance {i}: gap {gap}");
        assert!(sol.kkt.max() < 1e-8, "instance {i}: kkt {:?}", sol.kkt);
    }
}

#[test]
fn condensed_matches_joint_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let (nx, nu, n) = (4, 2, 3);
        let ltv = random_ltv(&mut rng, nx, nu, n);
        let w = random_weights(&mut rng, nx, nu);
        let x0 = DVector::from_fn(nx, |_, _| normal(&mut rng));
        let reference: Vec<_> = (0..=n)
            .map(|_| DVector::from_fn(nx, |_, _| normal(&mut rng)))
            .collect();
        let u_ref = DVector::from_fn(nu, |_, _| normal(&mut rng));
        let c = condense(&ltv, &x0, &reference, &u_ref, &w).unwrap();
        let u = solve_qp(&c.qp, &WarmStart::default()).unwrap().x;
        let oracle = joint_least_squares(&ltv, &x0, &reference, &u_ref, &w);
        assert!((&u - &oracle).amax() < 1e-8, "{}", (&u - &oracle).amax());
    }
}

#[test]
fn lpf_converges_geometrically_to_minus_sigma() {
    let config = L1Config::default();
    let sigma = Vector3::new(0.3, -1.2, 2.0);
    let ratio = config.lpf_decay();
    assert!((ratio - (-config.alpha_lpf * config.dt).exp()).abs() < 1e-15);
    let mut u = Vector3::zeros();
    let mut prev = (u + sigma).norm();
    for _ in 0..200 {
        u = tightstack::l1::lpf_step(&u, &sigma, &config);
        let now = (u + sigma).norm();
        if prev > 1e-4 {
            assert!((now / prev - ratio).abs() < 1e-10, "{}", now / prev - ratio);
        }
        prev = now;
    }
    assert!((u + sigma).amax() < 1e-10);
}

#[test]
fn l1_estimate_settles_to_a_one_sample_lag() {
    let d = Vector3::new(0.0, 0.0, -1.5);
    let err = l1_constant_disturbance(d, 60);
    // With the measurement held over the predictor step the tracking error
    // settles at -dT, so the law reaches aT e^{aT} / (e^{aT} - 1) of d.
    let (a, t) = (-10.0f64, 0.005);
    let lag = 1.0 - a * t * (a * t).exp() / ((a * t).exp() - 1.0);
    assert!((err[59] - lag).abs() < 1e-6, "{} vs {lag}", err[59]);
}

fn small_training_set() -> (Windows, TrainConfig) {
    let data = DataConfig {
        static_top_separations: vec![0.25],
        stacked_separations: vec![0.3],
        ..Default::default()
    };
    let set = generate_training_data(TrainingScenario::Both, &data, &[1]).unwrap();
    let config = TrainConfig {
        max_windows: 40,
        ..Default::default()
    };
    let windows = Windows::build(&set, &config)
        .unwrap()
        .interacting(&config.dw);
    assert!(windows.len() >= 10);
    (windows, config)
}

#[test]
fn backprop_matches_finite_differences() {
    let (windows, config) = small_training_set();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mlp = randomized_mlp(&[8, 16, 16, 3], config.params.hover_thrust(), &mut rng);
    let (worst, checked) = gradient_check(&mlp, &windows, &config, 10, 1e-5, &mut rng);
    assert_eq!(checked, 30);
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (windows, config) = small_training_set();
    let mlp = Mlp::init(&[8, 8, 3], config.params.hover_thrust(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 0.0,
        ..config
    };
    let out = train_knode(&windows, mlp.clone(), &cfg).unwrap();
    assert_eq!(out.mlp.params(), mlp.params());
    assert_eq!(out.losses.len(), 4);
}

#[test]
fn matched_plant_leaves_little_to_learn() {
    let dw = DwParams::default();
    let mut interaction = PlantInteractionParams::matching(&dw);
    interaction.ou_sigma = 0.0;
    let mut data = DataConfig {
        static_top_separations: vec![0.3],
        stacked_separations: vec![],
        ..Default::default()
    };
    data.plant.interaction = interaction;
    let set = generate_training_data(TrainingScenario::StaticTop, &data, &[1]).unwrap();
    let config = TrainConfig {
        epochs: 50,
        max_windows: 100,
        ..Default::default()
    };
    let windows = Windows::build(&set, &config).unwrap();
    let mlp = Mlp::init(&[8, 16, 16, 3], config.params.hover_thrust(), 5).unwrap();
    let start = loss(&mlp, &windows, &config);
    let out = train_knode(&windows, mlp, &config).unwrap();
    // Only the hold-over-step discretization error remains.
    assert!(start < 1e-6, "{start}");
    assert!(*out.losses.last().unwrap() <= start * 1.0001);

    let held = generate_training_data(TrainingScenario::StaticTop, &data, &[2]).unwrap();
    let hover = config.params.hover_thrust();
    let mut worst = 0.0f64;
    for s in &held.segments {
        for (ego, n) in s.states.iter().zip(&s.neighbors) {
            let f = DwFeatures::new(ego, n, hover);
            worst = worst.max(knode_residual(Some(&f), &out.mlp).norm());
        }
    }
    assert!(worst < 1e-3, "residual {worst} N");
}
