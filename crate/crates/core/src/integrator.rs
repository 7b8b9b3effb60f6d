//! Fixed-step classical RK4 over one shooting interval, and the four
//! interval sensitivity products obtained by differentiating through the
//! discrete RK4 recursion.

use alloc::vec;
use alloc::vec::Vec;

use crate::ad::{Dual, Engine, Eval, Tape};
use crate::error::{check_finite, check_len, Error, Result};

/// A vector field `dx/dt = f(x, t)`, possibly reading parameters from the
/// engine.
pub trait Dynamics {
    fn state_dim(&self) -> usize;

    /// Length of the parameter vector the field reads; zero for fixed fields.
    fn param_len(&self) -> usize {
        0
    }

    fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, t: f64) -> E::Var;
}

impl<D: Dynamics + ?Sized> Dynamics for &D {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn param_len(&self) -> usize {
        (**self).param_len()
    }
    fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, t: f64) -> E::Var {
        (**self).rhs(e, x, t)
    }
}

/// `[t_start, t_end]` split into `substeps` equal RK4 steps, with the states
/// to keep addressed by substep index.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPlan {
    t_start: f64,
    t_end: f64,
    substeps: usize,
    save_steps: Vec<usize>,
}

impl IntervalPlan {
    /// `save_steps` must be strictly increasing and at most `substeps`.
    pub fn new(t_start: f64, t_end: f64, substeps: usize, save_steps: Vec<usize>) -> Result<Self> {
        if !(t_start < t_end) {
            return Err(Error::InvalidPlan("t_start must be before t_end"));
        }
        if substeps == 0 {
            return Err(Error::InvalidPlan("need at least one substep"));
        }
        if save_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPlan("save steps must be strictly increasing"));
        }
        if save_steps.last().is_some_and(|&s| s > substeps) {
            return Err(Error::InvalidPlan("save step beyond the interval end"));
        }
        Ok(IntervalPlan {
            t_start,
            t_end,
            substeps,
            save_steps,
        })
    }

    /// Builds a plan from save times, each of which must land on a substep
    /// boundary.
    pub fn from_times(t_start: f64, t_end: f64, substeps: usize, save_times: &[f64]) -> Result<Self> {
        if !(t_start < t_end) || substeps == 0 {
            return Err(Error::InvalidPlan("empty interval"));
        }
        let h = (t_end - t_start) / substeps as f64;
        let mut steps = Vec::with_capacity(save_times.len());
        for &t in save_times {
            let pos = (t - t_start) / h;
            let k = libm::round(pos);
            if !(k >= 0.0) || libm::fabs(pos - k) > 1e-9 * (1.0 + pos.abs()) {
                return Err(Error::InvalidPlan("save time not on a substep boundary"));
            }
            steps.push(k as usize);
        }
        Self::new(t_start, t_end, substeps, steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn step_size(&self) -> f64 {
        (self.t_end - self.t_start) / self.substeps as f64
    }

    pub fn save_steps(&self) -> &[usize] {
        &self.save_steps
    }

    pub fn save_times(&self) -> Vec<f64> {
        let h = self.step_size();
        self.save_steps
            .iter()
            .map(|&s| self.t_start + s as f64 * h)
            .collect()
    }

    fn time_at(&self, step: usize) -> f64 {
        self.t_start + step as f64 * self.step_size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSolution {
    /// `F_k(x_k, p)`.
    pub end_state: Vec<f64>,
    /// One row per save step, row-major.
    pub saved_states: Vec<f64>,
}

impl IntervalSolution {
    pub fn saved(&self, i: usize) -> &[f64] {
        let n = self.end_state.len();
        &self.saved_states[i * n..(i + 1) * n]
    }
}

/// One classical RK4 step on any engine.
pub fn rk4_step_with<E: Engine, D: Dynamics>(
    e: &mut E,
    f: &D,
    x: &E::Var,
    t: f64,
    h: f64,
) -> E::Var {
    let half = 0.5 * h;
    let k1 = f.rhs(e, x, t);
    let x2 = e.axpy(x, half, &k1);
    let k2 = f.rhs(e, &x2, t + half);
    let x3 = e.axpy(x, half, &k2);
    let k3 = f.rhs(e, &x3, t + half);
    let x4 = e.axpy(x, h, &k3);
    let k4 = f.rhs(e, &x4, t + h);
    let s = e.axpy(&k1, 2.0, &k2);
    let s = e.axpy(&s, 2.0, &k3);
    let s = e.add(&s, &k4);
    e.axpy(x, h / 6.0, &s)
}

/// Integrates over `plan` on any engine. Returns the end state and the
/// states at the plan's save steps. Fails with the substep index at which a
/// non-finite state first appears.
pub fn integrate_with<E: Engine, D: Dynamics>(
    e: &mut E,
    f: &D,
    x0: &E::Var,
    plan: &IntervalPlan,
) -> Result<(E::Var, Vec<E::Var>)> {
    let h = plan.step_size();
    let mut saved = Vec::with_capacity(plan.save_steps.len());
    let mut next_save = plan.save_steps.iter().peekable();
    let mut x = x0.clone();
    for step in 0..plan.substeps {
        if next_save.peek() == Some(&&step) {
            saved.push(x.clone());
            next_save.next();
        }
        x = rk4_step_with(e, f, &x, plan.time_at(step), h);
        if !e.value(&x).iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite_at("integration substep", step));
        }
    }
    if next_save.peek().is_some() {
        saved.push(x.clone());
    }
    Ok((x, saved))
}

/// One RK4 step of `f` with parameters `params`.
pub fn rk4_step<D: Dynamics>(f: &D, params: &[f64], x: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidPlan("step size must be positive"));
    }
    check_len("state", f.state_dim(), x.len())?;
    let mut e = Eval::new(params);
    let y = rk4_step_with(&mut e, f, &x.to_vec(), t, h);
    check_finite("rk4 step", &y)?;
    Ok(y)
}

pub fn integrate_interval<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
) -> Result<IntervalSolution> {
    check_len("initial state", f.state_dim(), x0.len())?;
    check_len("parameters", f.param_len(), params.len())?;
    let mut e = Eval::new(params);
    let (end, saved) = integrate_with(&mut e, f, &x0.to_vec(), plan)?;
    Ok(IntervalSolution {
        end_state: end,
        saved_states: saved.concat(),
    })
}

/// `∂F/∂x · vx + ∂F/∂p · vp` by one forward-mode pass. `vp = None` means a
/// zero parameter tangent.
pub fn f_jvp<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
    vx: &[f64],
    vp: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_len("state", f.state_dim(), x0.len())?;
    check_len("state tangent", x0.len(), vx.len())?;
    check_len("parameters", f.param_len(), params.len())?;
    if let Some(vp) = vp {
        check_len("parameter tangent", params.len(), vp.len())?;
    }
    let mut e = Dual::new(params, vp);
    let input = e.input(x0, vx);
    let (end, _) = integrate_with(&mut e, f, &input, plan)?;
    check_finite("interval jvp", &end.tangent)?;
    Ok(end.tangent)
}

/// `∂F/∂x_k · v`.
pub fn f_jvp_x<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
    v: &[f64],
) -> Result<Vec<f64>> {
    f_jvp(f, params, x0, plan, v, None)
}

/// `∂F/∂p · v`.
pub fn f_jvp_p<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
    v: &[f64],
) -> Result<Vec<f64>> {
    let zero = vec![0.0; x0.len()];
    f_jvp(f, params, x0, plan, &zero, Some(v))
}

/// A recorded interval integration that can be pulled back repeatedly.
pub struct IntervalTape<'p> {
    tape: Tape<'p>,
    input: crate::ad::Node,
    end: crate::ad::Node,
    saved: Vec<crate::ad::Node>,
}

impl<'p> IntervalTape<'p> {
    pub fn record<D: Dynamics>(
        f: &D,
        params: &'p [f64],
        x0: &[f64],
        plan: &IntervalPlan,
    ) -> Result<Self> {
        check_len("state", f.state_dim(), x0.len())?;
        check_len("parameters", f.param_len(), params.len())?;
        let mut tape = Tape::new(params);
        let input = tape.input(x0);
        let (end, saved) = integrate_with(&mut tape, f, &input, plan)?;
        Ok(IntervalTape {
            tape,
            input,
            end,
            saved,
        })
    }

    pub fn end_state(&self) -> &[f64] {
        self.tape.value(&self.end)
    }

    pub fn saved(&self) -> &[crate::ad::Node] {
        &self.saved
    }

    /// Value of the `i`-th saved state.
    pub fn saved_value(&self, i: usize) -> &[f64] {
        self.tape.value(&self.saved[i])
    }

    pub fn end_node(&self) -> crate::ad::Node {
        self.end
    }

    pub fn tape_mut(&mut self) -> &mut Tape<'p> {
        &mut self.tape
    }

    /// `(wᵀ ∂F/∂x, wᵀ ∂F/∂p)`.
    pub fn vjp(&mut self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("state cotangent", self.end_state().len(), w.len())?;
        self.tape.backward(&[(self.end, w)]);
        self.adjoints()
    }

    /// Adjoints of the initial state and the parameters after a custom sweep.
    pub fn pull(&mut self, seeds: &[(crate::ad::Node, &[f64])]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.tape.backward(seeds);
        self.adjoints()
    }

    fn adjoints(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let gx = self.tape.adjoint(self.input).to_vec();
        let gp = self.tape.param_adjoint().to_vec();
        check_finite("interval vjp", &gx)?;
        check_finite("interval vjp", &gp)?;
        Ok((gx, gp))
    }
}

/// `(wᵀ ∂F/∂x, wᵀ ∂F/∂p)` by one reverse sweep.
pub fn f_vjp<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
    w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    IntervalTape::record(f, params, x0, plan)?.vjp(w)
}

/// `wᵀ ∂F/∂x_k`.
pub fn f_vjp_x<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
    w: &[f64],
) -> Result<Vec<f64>> {
    f_vjp(f, params, x0, plan, w).map(|(gx, _)| gx)
}

/// `wᵀ ∂F/∂p`.
pub fn f_vjp_p<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
    w: &[f64],
) -> Result<Vec<f64>> {
    f_vjp(f, params, x0, plan, w).map(|(_, gp)| gp)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero(usize);
    impl Dynamics for Zero {
        fn state_dim(&self) -> usize {
            self.0
        }
        fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, _: f64) -> E::Var {
            e.scale(x, 0.0)
        }
    }

    struct Linear(f64);
    impl Dynamics for Linear {
        fn state_dim(&self) -> usize {
            1
        }
        fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, _: f64) -> E::Var {
            e.scale(x, self.0)
        }
    }

    #[test]
    fn rk4_hand_values() {
        let up = rk4_step(&Linear(1.0), &[], &[1.0], 0.0, 0.1).unwrap();
        assert!((up[0] - 1.105_170_833_333_333_3).abs() < 1e-15);
        let down = rk4_step(&Linear(-1.0), &[], &[1.0], 0.0, 0.1).unwrap();
        assert!((down[0] - 0.904_837_5).abs() < 1e-15);
        assert_eq!(rk4_step(&Zero(2), &[], &[1.0, -3.0], 0.0, 0.1).unwrap(), [1.0, -3.0]);
        assert!(rk4_step(&Zero(1), &[], &[1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_field_keeps_state() {
        let plan = IntervalPlan::new(0.0, 2.0, 20, vec![0, 10, 20]).unwrap();
        let sol = integrate_interval(&Zero(2), &[], &[0.5, -1.0], &plan).unwrap();
        assert_eq!(sol.end_state, [0.5, -1.0]);
        assert_eq!(sol.saved_states, [0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
        let v = f_jvp_x(&Zero(2), &[], &[0.5, -1.0], &plan, &[2.0, 3.0]).unwrap();
        assert_eq!(v, [2.0, 3.0]);
        let w = f_vjp_x(&Zero(2), &[], &[0.5, -1.0], &plan, &[2.0, 3.0]).unwrap();
        assert_eq!(w, [2.0, 3.0]);
    }

    #[test]
    fn exponential_growth() {
        let plan = IntervalPlan::new(0.0, 1.0, 100, vec![]).unwrap();
        let sol = integrate_interval(&Linear(1.0), &[], &[2.0], &plan).unwrap();
        let exact = 2.0 * core::f64::consts::E;
        assert!(((sol.end_state[0] - exact) / exact).abs() < 1e-7);

        // the tangent of a linear recursion is the per-step growth factor to the power 100
        let h: f64 = 0.01;
        let growth = 1.0 + h + h * h / 2.0 + h * h * h / 6.0 + h * h * h * h / 24.0;
        let t = f_jvp_x(&Linear(1.0), &[], &[2.0], &plan, &[1.5]).unwrap();
        let expected = 1.5 * libm::pow(growth, 100.0);
        assert!(((t[0] - expected) / expected).abs() < 1e-13);
    }

    #[test]
    fn plan_validation() {
        assert!(IntervalPlan::new(1.0, 1.0, 10, vec![]).is_err());
        assert!(IntervalPlan::new(0.0, 1.0, 0, vec![]).is_err());
        assert!(IntervalPlan::new(0.0, 1.0, 10, vec![3, 3]).is_err());
        assert!(IntervalPlan::new(0.0, 1.0, 10, vec![11]).is_err());
        let p = IntervalPlan::from_times(0.0, 1.0, 10, &[0.0, 0.3, 1.0]).unwrap();
        assert_eq!(p.save_steps(), [0, 3, 10]);
        assert!(IntervalPlan::from_times(0.0, 1.0, 10, &[0.35]).is_err());
    }

    #[test]
    fn blow_up_reports_substep() {
        struct Square;
        impl Dynamics for Square {
            fn state_dim(&self) -> usize {
                1
            }
            fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, _: f64) -> E::Var {
                let s = e.mul(x, x);
                e.mul(&s, &s)
            }
        }
        let plan = IntervalPlan::new(0.0, 10.0, 100, vec![]).unwrap();
        match integrate_interval(&Square, &[], &[10.0], &plan) {
            Err(Error::NonFinite { index: Some(_), .. }) => {}
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
