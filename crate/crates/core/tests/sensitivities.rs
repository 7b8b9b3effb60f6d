mod common;

use common::{dot, dot_identity_err, rel_err, Growth, Problem};
use msnode_core::integrator::{
    f_jvp_p, f_jvp_x, f_vjp_p, f_vjp_x, integrate_interval, rk4_step, IntervalPlan,
};
use msnode_core::loss::{lagrangian_grads, phi, single_shooting_grad, total_loss};
use msnode_core::network::{init_params, NetworkSpec, NeuralDynamics};
use msnode_core::shooting::{jacobians_by_vjp, Linearization, ShootingGrid, ShootingVariables, DEFAULT_DENSE_CAP};
use msnode_core::systems::{train_test_split, MeasurementSet, System, SystemSpec};
use proptest::prelude::*;

const H: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;

fn end_state(f: &NeuralDynamics, p: &[f64], x: &[f64], plan: &IntervalPlan) -> Vec<f64> {
    integrate_interval(f, p, x, plan).unwrap().end_state
}

fn central(plus: Vec<f64>, minus: Vec<f64>) -> Vec<f64> {
    plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * H)).collect()
}

fn shifted(x: &[f64], v: &[f64], s: f64) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + s * b).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn interval_products_match_finite_differences(
        n in 1usize..=3,
        hidden in prop::collection::vec(1usize..=8, 1..=2),
        ti in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut pb = Problem::new(2, n, hidden, ti, seed);
        let plan = pb.grid.plan(0).clone();
        let (x, p) = (pb.vars.state(0).to_vec(), pb.vars.params.clone());
        let (vx, vp, w) = (pb.vec(n), pb.vec(pb.p()), pb.vec(n));
        let f = &pb.f;

        let fd_x = central(end_state(f, &p, &shifted(&x, &vx, H), &plan), end_state(f, &p, &shifted(&x, &vx, -H), &plan));
        let fd_p = central(end_state(f, &shifted(&p, &vp, H), &x, &plan), end_state(f, &shifted(&p, &vp, -H), &x, &plan));

        let jx = f_jvp_x(f, &p, &x, &plan, &vx).unwrap();
        let jp = f_jvp_p(f, &p, &x, &plan, &vp).unwrap();
        prop_assert!(rel_err(&jx, &fd_x, 1e-8) <= FD_TOL);
        prop_assert!(rel_err(&jp, &fd_p, 1e-8) <= FD_TOL);

        let wx = f_vjp_x(f, &p, &x, &plan, &w).unwrap();
        let wp = f_vjp_p(f, &p, &x, &plan, &w).unwrap();
        prop_assert!(rel_err(&[dot(&wx, &vx)], &[dot(&w, &fd_x)], 1e-8) <= FD_TOL);
        prop_assert!(rel_err(&[dot(&wp, &vp)], &[dot(&w, &fd_p)], 1e-8) <= FD_TOL);
        prop_assert!(dot_identity_err(&w, &jx, &wx, &vx) <= 1e-12);
        prop_assert!(dot_identity_err(&w, &jp, &wp, &vp) <= 1e-12);
    }

    #[test]
    fn lagrangian_gradients_match_finite_differences(
        m in 1usize..=4,
        n in 1usize..=3,
        hidden in prop::collection::vec(1usize..=8, 1..=2),
        seed in any::<u64>(),
    ) {
        let mut pb = Problem::new(m, n, hidden, false, seed);
        let (vx, vp) = (pb.vec(pb.mn()), pb.vec(pb.p()));
        let anchor = pb.data.row(0).to_vec();
        let lagrangian = |vars: &ShootingVariables| {
            let lin = Linearization::new(&pb.f, &pb.grid, vars).unwrap();
            let g = lin.residual(&anchor).unwrap().g;
            total_loss(&pb.f, &pb.grid, vars, &pb.data).unwrap() + dot(&vars.multipliers, &g)
        };
        let moved = |dx: &[f64], dp: &[f64], s: f64| {
            let mut v = pb.vars.clone();
            v.states = shifted(&v.states, dx, s);
            v.params = shifted(&v.params, dp, s);
            v
        };
        let zx = vec![0.0; pb.mn()];
        let zp = vec![0.0; pb.p()];
        let fd_x = (lagrangian(&moved(&vx, &zp, H)) - lagrangian(&moved(&vx, &zp, -H))) / (2.0 * H);
        let fd_p = (lagrangian(&moved(&zx, &vp, H)) - lagrangian(&moved(&zx, &vp, -H))) / (2.0 * H);

        let mut lin = Linearization::new(&pb.f, &pb.grid, &pb.vars).unwrap();
        let grads = lagrangian_grads(&mut lin, &pb.data).unwrap();
        prop_assert!(rel_err(&[dot(&grads.l_x, &vx)], &[fd_x], 1e-8) <= FD_TOL);
        prop_assert!(rel_err(&[dot(&grads.l_p, &vp)], &[fd_p], 1e-8) <= FD_TOL);
        let phi_total = total_loss(&pb.f, &pb.grid, &pb.vars, &pb.data).unwrap();
        prop_assert!((grads.phi - phi_total).abs() <= 1e-14 * phi_total.max(1.0));
    }
}

#[test]
fn multiplier_gradient_picks_jacobian_rows() {
    // Targets equal to the predictions make Φ vanish, leaving λᵀG.
    let pb = Problem::new(3, 2, vec![4], false, 21);
    let lin = Linearization::new(&pb.f, &pb.grid, &pb.vars).unwrap();
    let mut fitted = pb.data.clone();
    for k in 0..pb.grid.m() {
        for (i, j) in pb.grid.owned_rows(k).enumerate() {
            fitted.values[j * 2..j * 2 + 2].copy_from_slice(lin.prediction(k, i));
        }
    }
    drop(lin);
    for j in 0..pb.mn() {
        let mut vars = pb.vars.clone();
        vars.multipliers = vec![0.0; pb.mn()];
        vars.multipliers[j] = 1.0;
        let mut lin = Linearization::new(&pb.f, &pb.grid, &vars).unwrap();
        let grads = lagrangian_grads(&mut lin, &fitted).unwrap();
        assert_eq!(grads.phi, 0.0);
        let jac = jacobians_by_vjp(&mut lin, DEFAULT_DENSE_CAP).unwrap();
        assert!(rel_err(&grads.l_x, jac.gx.row(j), 1e-12) < 1e-12);
        assert!(rel_err(&grads.l_p, jac.gp.row(j), 1e-12) < 1e-12);
    }
}

#[test]
fn zero_multipliers_and_perfect_fit_give_zero_gradients() {
    let pb = Problem::new(2, 1, vec![3], false, 4);
    let mut vars = pb.vars.clone();
    vars.multipliers = vec![0.0; 2];
    let lin = Linearization::new(&pb.f, &pb.grid, &vars).unwrap();
    let mut fitted = pb.data.clone();
    for k in 0..2 {
        for (i, j) in pb.grid.owned_rows(k).enumerate() {
            fitted.values[j] = lin.prediction(k, i)[0];
        }
    }
    drop(lin);
    let mut lin = Linearization::new(&pb.f, &pb.grid, &vars).unwrap();
    let g = lagrangian_grads(&mut lin, &fitted).unwrap();
    assert!(g.l_x.iter().chain(&g.l_p).all(|v| *v == 0.0));
}

#[test]
fn single_point_loss_is_mean_over_states() {
    // Zero network: prediction equals the start state (1, 1); target (0, 0).
    let spec = NetworkSpec::new(2, vec![2]);
    let f = NeuralDynamics::new(spec.clone()).unwrap();
    let p = vec![0.0; spec.param_count()];
    let times = vec![0.0, 1.0];
    let grid = ShootingGrid::split(&times, 1, 1).unwrap();
    let data = MeasurementSet::new(times, vec![0.0, 0.0, 1.0, 1.0], 2).unwrap();
    let vars = ShootingVariables::new(1, 2, vec![1.0, 1.0], vec![0.0; 2], p.clone()).unwrap();
    // Rows: (1,1) vs (0,0) → 1; (1,1) vs (1,1) → 0. Mean over the two rows.
    assert_eq!(phi(&f, &grid, &vars, 0, &data).unwrap(), 0.5);

    let two = ShootingGrid::split(&[0.0, 1.0, 2.0], 2, 1).unwrap();
    let d2 = MeasurementSet::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 1.0, 1.0, 3.0, 1.0], 2).unwrap();
    let v2 = ShootingVariables::new(2, 2, vec![1.0, 1.0, 1.0, 1.0], vec![0.0; 4], p).unwrap();
    let a = phi(&f, &two, &v2, 0, &d2).unwrap();
    let b = phi(&f, &two, &v2, 1, &d2).unwrap();
    assert_eq!(a, 1.0);
    assert_eq!(b, 1.0);
    assert_eq!(total_loss(&f, &two, &v2, &d2).unwrap(), a + b);
}

#[test]
fn single_interval_loss_equals_single_shooting() {
    let pb = Problem::new(1, 2, vec![5], false, 3);
    let x0 = pb.data.row(0).to_vec();
    let mut vars = pb.vars.clone();
    vars.states = x0.clone();
    let ms = total_loss(&pb.f, &pb.grid, &vars, &pb.data).unwrap();
    let (ss, grad) = single_shooting_grad(&pb.f, &vars.params, &x0, pb.grid.plan(0), &pb.data).unwrap();
    assert!((ms - ss).abs() <= 1e-15 * ms);

    let mut rng = common::rng(1);
    let v = common::random_vec(&mut rng, vars.params.len());
    let at = |s: f64| {
        single_shooting_grad(&pb.f, &shifted(&vars.params, &v, s), &x0, pb.grid.plan(0), &pb.data)
            .unwrap()
            .0
    };
    let fd = (at(H) - at(-H)) / (2.0 * H);
    assert!(rel_err(&[dot(&grad, &v)], &[fd], 1e-8) <= FD_TOL);
}

#[test]
fn scalar_growth_sensitivity_is_the_rk4_factor() {
    let plan = IntervalPlan::new(0.0, 1.0, 100, vec![]).unwrap();
    let h: f64 = 0.01;
    let factor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
    let expected = 0.7 * factor.powi(100);
    let got = f_jvp_x(&Growth, &[], &[2.0], &plan, &[0.7]).unwrap();
    assert!((got[0] - expected).abs() <= 1e-13 * expected);
    let end = integrate_interval(&Growth, &[], &[1.0], &plan).unwrap().end_state[0];
    assert!((end - std::f64::consts::E).abs() / std::f64::consts::E < 1e-7);
    let back = f_vjp_x(&Growth, &[], &[2.0], &plan, &[0.7]).unwrap();
    assert!((back[0] - expected).abs() <= 1e-13 * expected);
}

#[test]
fn bias_tangent_column_matches_finite_difference() {
    // Zero hidden weights: only the output bias of network 1 moves the field.
    let spec = NetworkSpec::new(2, vec![3]);
    let f = NeuralDynamics::new(spec.clone()).unwrap();
    let mut p = init_params(&spec, 2).values;
    p.iter_mut().for_each(|v| *v = 0.0);
    let p_len = p.len();
    let plan = IntervalPlan::new(0.0, 0.5, 5, vec![]).unwrap();
    let x = [0.3, -0.2];
    for j in 0..p_len {
        let mut e = vec![0.0; p_len];
        e[j] = 1.0;
        let col = f_jvp_p(&f, &p, &x, &plan, &e).unwrap();
        let fd = central(end_state(&f, &shifted(&p, &e, H), &x, &plan), end_state(&f, &shifted(&p, &e, -H), &x, &plan));
        assert!(rel_err(&col, &fd, 1e-8) <= FD_TOL, "param {j}");
        // Row combination of basis columns equals the reverse product.
        let w = [0.4, -1.1];
        let back = f_vjp_p(&f, &p, &x, &plan, &w).unwrap();
        assert!((back[j] - dot(&w, &col)).abs() <= 1e-13);
    }
    assert_eq!(f_vjp_p(&f, &p, &x, &plan, &[0.0, 0.0]).unwrap(), vec![0.0; p_len]);
    assert_eq!(f_jvp_p(&f, &p, &x, &plan, &vec![0.0; p_len]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn zero_field_leaves_tangents_unchanged() {
    let spec = NetworkSpec::new(2, vec![4]);
    let f = NeuralDynamics::new(spec.clone()).unwrap();
    let p = vec![0.0; spec.param_count()];
    let plan = IntervalPlan::new(0.0, 1.0, 7, vec![0, 3, 7]).unwrap();
    let sol = integrate_interval(&f, &p, &[1.5, -2.0], &plan).unwrap();
    assert_eq!(sol.end_state, vec![1.5, -2.0]);
    assert_eq!(sol.saved(1), &[1.5, -2.0]);
    assert_eq!(f_jvp_x(&f, &p, &[1.5, -2.0], &plan, &[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
    assert_eq!(f_vjp_x(&f, &p, &[1.5, -2.0], &plan, &[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
    assert_eq!(rk4_step(&f, &p, &[1.0, 1.0], 0.0, 0.1).unwrap(), vec![1.0, 1.0]);
}

#[test]
fn reference_data_is_converged() {
    // LV over one period, 10 substeps vs 20.
    let spec = SystemSpec::standard(System::LotkaVolterra);
    let ode = spec.ode().unwrap();
    let coarse = IntervalPlan::new(0.0, 0.1, 10, vec![]).unwrap();
    let fine = IntervalPlan::new(0.0, 0.1, 20, vec![]).unwrap();
    let a = integrate_interval(&ode, &[], &[1.0, 1.0], &coarse).unwrap().end_state;
    let b = integrate_interval(&ode, &[], &[1.0, 1.0], &fine).unwrap().end_state;
    assert!(rel_err(&a, &b, 1e-12) < 1e-6);

    // Full generated datasets at 100 vs 200 substeps per sample.
    for system in [System::LotkaVolterra, System::FitzHughNagumo, System::Goodwin] {
        let spec = SystemSpec::standard(system);
        let a = train_test_split(&spec, 100).unwrap();
        let b = train_test_split(&spec, 200).unwrap();
        assert!(rel_err(&a.train.values, &b.train.values, 1e-12) < 1e-8, "{system}");
    }
}
