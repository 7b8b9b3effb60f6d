mod common;

use common::rel_err;
use msnode_core::network::{NetworkSpec, NeuralDynamics};
use msnode_core::optimizer::{lr_at, DecayRule, LrSchedule};
use msnode_core::shooting::{Linearization, ShootingGrid, SolverPath};
use msnode_core::systems::{
    fit_scaler, scale, train_test_split, DataSplit, MeasurementSet, System, SystemSpec,
};
use msnode_core::trainer::{
    evaluate, init_shooting_vars, network_for, train_ms, train_ms_with, train_ss, RunStatus, TrainConfig,
};
use proptest::prelude::*;

fn small_config() -> TrainConfig {
    TrainConfig {
        intervals: 4,
        hidden: vec![6],
        epochs: 8,
        substeps: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn lv_split() -> DataSplit {
    train_test_split(&SystemSpec::standard(System::LotkaVolterra), 20).unwrap()
}

#[test]
fn lv_split_windows() {
    let split = lv_split();
    assert_eq!(split.train.len(), 201);
    assert_eq!(split.train.times[0], 0.0);
    assert!((split.train.times[200] - 20.0).abs() < 1e-12);
    let test = split.test.unwrap();
    assert_eq!(test.len(), 200);
    assert!((test.times[0] - 20.1).abs() < 1e-12);
    assert!((test.times[199] - 40.0).abs() < 1e-12);
    assert_eq!(split.train.row(0), &[1.0, 1.0]);
}

#[test]
fn mhd_conserves_the_squared_norm() {
    let spec = SystemSpec::standard(System::Mhd);
    let split = train_test_split(&spec, 100).unwrap();
    let energy = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let e0 = energy(split.train.row(0));
    let last = split.train.row(split.train.len() - 1);
    assert!((energy(last) - e0).abs() / e0 < 1e-4);
}

#[test]
fn scaling_round_trips() {
    let split = lv_split();
    let s = scale(&split.train).unwrap();
    let back = s.unscaled();
    assert!(rel_err(&back.values, &split.train.values, 1e-12) < 1e-12);
    // Standardized data is its own standardization.
    let again = scale(&s.unscaled()).unwrap();
    assert!(rel_err(&again.values, &s.values, 1.0) < 1e-12);
    let fitted = fit_scaler(&s).unwrap();
    for (m, sd) in fitted.mean.iter().zip(&fitted.std) {
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }
    // The test window uses training statistics.
    let scaled = split.scaled().unwrap();
    assert_eq!(scaled.test.as_ref().unwrap().scaler, scaled.train.scaler);
}

#[test]
fn initial_guess_uses_each_interval_start() {
    let split = lv_split();
    let grid = ShootingGrid::split(&split.train.times, 4, 2).unwrap();
    let vars = init_shooting_vars(&grid, &split.train, vec![]).unwrap();
    for k in 0..4 {
        assert_eq!(vars.state(k), split.train.row(grid.boundaries()[k]));
    }
    assert!(vars.multipliers.iter().all(|v| *v == 0.0));
    let one = ShootingGrid::split(&split.train.times, 1, 2).unwrap();
    assert_eq!(init_shooting_vars(&one, &split.train, vec![]).unwrap().states, vec![1.0, 1.0]);
}

#[test]
fn true_dynamics_start_nearly_feasible() {
    let spec = SystemSpec::standard(System::LotkaVolterra);
    let split = train_test_split(&spec, 100).unwrap();
    let ode = spec.ode().unwrap();
    let grid = ShootingGrid::split(&split.train.times, 20, 10).unwrap();
    let vars = init_shooting_vars(&grid, &split.train, vec![]).unwrap();
    let lin = Linearization::new(&ode, &grid, &vars).unwrap();
    assert!(lin.residual(split.train.row(0)).unwrap().norm_inf() < 1e-6);
}

#[test]
fn zero_epochs_return_the_initialization() {
    let split = lv_split();
    let mut cfg = small_config();
    cfg.epochs = 0;
    let (f, ms) = train_ms(&cfg, &split.train).unwrap();
    let (_, p0) = network_for(&cfg, 2).unwrap();
    assert_eq!(ms.vars.params, p0);
    assert!(ms.history.is_empty());
    assert_eq!(ms.status, RunStatus::BudgetExhausted);
    let grid = ShootingGrid::split(&split.train.times, 4, 4).unwrap();
    assert_eq!(ms.vars, init_shooting_vars(&grid, &split.train, p0.clone()).unwrap());
    let (_, ss) = train_ss(&cfg, &split.train).unwrap();
    assert_eq!(ss.params, p0);
    let _ = f;
}

#[test]
fn training_is_deterministic_and_feasible_per_step() {
    let split = lv_split();
    for solver in [SolverPath::Dense, SolverPath::MatrixFree] {
        let mut cfg = small_config();
        cfg.solver = solver;
        let (_, a) = train_ms(&cfg, &split.train).unwrap();
        let (_, b) = train_ms(&cfg, &split.train).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.vars, b.vars);
        for r in &a.history {
            assert!(r.defect <= 10.0 * cfg.cg.tol * r.g_inf, "{solver:?} epoch {}: {r:?}", r.epoch);
        }
    }
}

#[test]
fn dense_and_matrix_free_paths_agree() {
    let split = lv_split();
    let mut cfg = small_config();
    cfg.cg.tol = 1e-12;
    cfg.solver = SolverPath::Dense;
    let (_, d) = train_ms(&cfg, &split.train).unwrap();
    cfg.solver = SolverPath::MatrixFree;
    let (_, m) = train_ms(&cfg, &split.train).unwrap();
    for (a, b) in d.history.iter().zip(&m.history) {
        assert!((a.phi - b.phi).abs() <= 1e-6 * a.phi, "{a:?} {b:?}");
    }
    let (a, b) = (d.final_phi.unwrap(), m.final_phi.unwrap());
    assert!((a - b).abs() <= 1e-6 * a);
}

#[test]
fn single_interval_without_multipliers_is_single_shooting() {
    let split = lv_split();
    let mut cfg = small_config();
    cfg.intervals = 1;
    cfg.freeze_multipliers = true;
    cfg.epochs = 20;
    let (_, ms) = train_ms(&cfg, &split.train).unwrap();
    let (_, ss) = train_ss(&cfg, &split.train).unwrap();
    assert_eq!(ms.history.len(), ss.history.len());
    for (a, b) in ms.history.iter().zip(&ss.history) {
        assert!((a.phi - b.phi).abs() <= 1e-10 * b.phi.max(1.0), "epoch {}: {} vs {}", a.epoch, a.phi, b.phi);
    }
}

#[test]
fn evaluation_with_true_dynamics_and_zero_network() {
    let spec = SystemSpec::standard(System::LotkaVolterra);
    let split = train_test_split(&spec, 100).unwrap();
    let ode = spec.ode().unwrap();
    let eval = evaluate(&ode, &[], &split, 100);
    assert!(eval.metrics.train_mse.unwrap() < 1e-8);
    assert!(eval.metrics.test_mse.unwrap() < 1e-8);
    assert_eq!(eval.rows, 401);

    let net = NeuralDynamics::new(NetworkSpec::new(2, vec![4])).unwrap();
    let zero = vec![0.0; net.spec().param_count()];
    let eval = evaluate(&net, &zero, &split, 10);
    let mse = eval.metrics.train_mse.unwrap();
    assert!(mse.is_finite() && mse > 0.1, "{mse}");
}

#[test]
fn blown_up_rollouts_are_marked_failed() {
    let split = lv_split();
    let eval = evaluate(&common::Quadratic(2), &[], &split, 10);
    assert_eq!(eval.metrics.test_mse, None);
    assert_eq!(eval.metrics.train_mse, None);
}

#[test]
fn aborted_training_keeps_finite_variables() {
    let split = lv_split();
    let mut cfg = small_config();
    cfg.lr = LrSchedule::constant(1e6);
    cfg.epochs = 30;
    let (f, out) = train_ms(&cfg, &split.train).unwrap();
    out.vars.check_finite().unwrap();
    if let RunStatus::Aborted { epoch, .. } = &out.status {
        assert_eq!(out.history.len(), *epoch);
    }
    let _ = train_ms_with(&f, out.vars.params.clone(), &small_config(), &split.train).unwrap();
}

#[test]
fn config_validation() {
    let split = lv_split();
    let mut cfg = small_config();
    cfg.intervals = 500;
    assert!(train_ms(&cfg, &split.train).is_err());
    let mut cfg = small_config();
    cfg.lr = LrSchedule::constant(-1.0);
    assert!(train_ms(&cfg, &split.train).is_err());
    let mut cfg = small_config();
    cfg.adam.beta2 = 1.0;
    assert!(train_ms(&cfg, &split.train).is_err());
    let bad = MeasurementSet::new(vec![0.0, 1.0], vec![0.0; 4], 2).unwrap();
    assert!(train_ms(&small_config(), &bad).is_err());
}

proptest! {
    #[test]
    fn learning_rate_is_non_increasing(
        losses in prop::collection::vec(0.0f64..10.0, 1..300),
        patience in 1usize..20,
        at in prop::collection::vec(1usize..300, 0..5),
    ) {
        for rule in [
            DecayRule::Plateau { patience, rel_improvement: 0.01 },
            DecayRule::Epochs { at: at.clone() },
            DecayRule::Constant,
        ] {
            let mut s = LrSchedule::new(0.01, rule);
            let mut prev = f64::INFINITY;
            for (e, l) in losses.iter().enumerate() {
                let lr = lr_at(&s, e);
                prop_assert!(lr <= prev && lr > 0.0);
                prop_assert!(lr >= 1e-4);
                prev = lr;
                s.observe(e, *l);
            }
            prop_assert_eq!(lr_at(&s, 0), 0.01);
        }
    }
}
