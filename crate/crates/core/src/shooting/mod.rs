//! Multiple-shooting constraints and their Jacobian products.
//!
//! With interval start states `x_1..x_m`, parameters `p` and interval flow
//! maps `F_k`, the constraint vector stacks `m` blocks of size `n`:
//!
//! ```text
//! G = [x_1 - x̂_1; x_2 - F_1(x_1, p); ...; x_m - F_{m-1}(x_{m-1}, p)]
//! ```
//!
//! `G_x` is unit lower block-bidiagonal with `-∂F_k/∂x_k` below the
//! diagonal; `G_p` has a zero first block row followed by `-∂F_k/∂p`.
//! Every product here is matrix-free: forward-mode passes for `G·v` and
//! reverse sweeps over recorded interval tapes for `vᵀ·G`.

mod cg;
mod dense;
mod step;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{check_finite, check_len, Error, Result};
use crate::integrator::{f_jvp, Dynamics, IntervalPlan, IntervalTape};

pub use cg::{cg_solve, CgOutcome};
pub use dense::{
    assemble_columns, assemble_gp_dense, assemble_gx_dense, assemble_gx_from, direct_step,
    jacobians_by_vjp, DenseJacobians, DEFAULT_DENSE_CAP, DENSE_PARAM_CAP,
};
pub use step::{condensed_step, linearized_defect, CgOptions, CondensedStep, SolverPath};

/// Partition of a uniform measurement grid into `m` shooting intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingGrid {
    boundaries: Vec<usize>,
    plans: Vec<IntervalPlan>,
    substeps_per_sample: usize,
}

impl ShootingGrid {
    /// Splits the `T - 1` sample gaps into `m` near-equal chunks, the
    /// remainder going to the leading intervals. Each interval integrates
    /// with `substeps_per_sample` RK4 steps per sample gap.
    pub fn split(times: &[f64], m: usize, substeps_per_sample: usize) -> Result<Self> {
        let t = times.len();
        if t < 2 {
            return Err(Error::InvalidConfig("need at least two measurement times".into()));
        }
        if m == 0 || m > t - 1 {
            return Err(Error::InvalidConfig(alloc::format!(
                "interval count {m} must lie in 1..={}",
                t - 1
            )));
        }
        if substeps_per_sample == 0 {
            return Err(Error::InvalidConfig("substeps per sample must be at least 1".into()));
        }
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) || libm::fabs(d - dt) > 1e-9 * dt {
                return Err(Error::InvalidConfig("measurement times must be uniform".into()));
            }
        }
        let gaps = t - 1;
        let (base, rem) = (gaps / m, gaps % m);
        let mut boundaries = Vec::with_capacity(m + 1);
        boundaries.push(0);
        for k in 0..m {
            let last = boundaries[k];
            boundaries.push(last + base + usize::from(k < rem));
        }
        Self::new(times, boundaries, substeps_per_sample)
    }

    /// Uses explicit boundary indices into `times`.
    pub fn new(times: &[f64], boundaries: Vec<usize>, substeps_per_sample: usize) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 0 || *boundaries.last().unwrap() != times.len() - 1 {
            return Err(Error::InvalidConfig(
                "boundaries must start at the first and end at the last sample".into(),
            ));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("boundaries must be strictly increasing".into()));
        }
        let m = boundaries.len() - 1;
        let mut plans = Vec::with_capacity(m);
        for k in 0..m {
            let (a, b) = (boundaries[k], boundaries[k + 1]);
            let end = if k + 1 == m { b + 1 } else { b };
            let saves = (a..end).map(|j| (j - a) * substeps_per_sample).collect();
            plans.push(IntervalPlan::new(
                times[a],
                times[b],
                (b - a) * substeps_per_sample,
                saves,
            )?);
        }
        Ok(ShootingGrid {
            boundaries,
            plans,
            substeps_per_sample,
        })
    }

    pub fn m(&self) -> usize {
        self.plans.len()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn plan(&self, k: usize) -> &IntervalPlan {
        &self.plans[k]
    }

    pub fn plans(&self) -> &[IntervalPlan] {
        &self.plans
    }

    pub fn substeps_per_sample(&self) -> usize {
        self.substeps_per_sample
    }

    /// Measurement rows whose loss interval `k` carries: `[b_k, b_{k+1})`,
    /// plus the final sample for the last interval.
    pub fn owned_rows(&self, k: usize) -> Range<usize> {
        let end = if k + 1 == self.m() {
            self.boundaries[k + 1] + 1
        } else {
            self.boundaries[k + 1]
        };
        self.boundaries[k]..end
    }
}

/// Decision variables: interval start states, multipliers and parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShootingVariables {
    m: usize,
    n: usize,
    /// Row-major `m × n`.
    pub states: Vec<f64>,
    /// One block of `n` per constraint block.
    pub multipliers: Vec<f64>,
    pub params: Vec<f64>,
}

impl ShootingVariables {
    pub fn new(m: usize, n: usize, states: Vec<f64>, multipliers: Vec<f64>, params: Vec<f64>) -> Result<Self> {
        check_len("shooting states", m * n, states.len())?;
        check_len("multipliers", m * n, multipliers.len())?;
        let v = ShootingVariables {
            m,
            n,
            states,
            multipliers,
            params,
        };
        v.check_finite()?;
        Ok(v)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn multiplier(&self, k: usize) -> &[f64] {
        &self.multipliers[k * self.n..(k + 1) * self.n]
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite("shooting states", &self.states)?;
        check_finite("multipliers", &self.multipliers)?;
        check_finite("parameters", &self.params)
    }
}

/// `G` together with the cached interval end states `F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintResidual {
    pub g: Vec<f64>,
    /// `(m - 1) × n`, row-major.
    pub end_states: Vec<f64>,
}

impl ConstraintResidual {
    pub fn norm_inf(&self) -> f64 {
        crate::linalg::norm_inf(&self.g)
    }
}

/// The shooting problem linearized at fixed variables: one recorded tape per
/// interval, reused by every transposed product and by the loss gradients.
pub struct Linearization<'a, D> {
    f: &'a D,
    grid: &'a ShootingGrid,
    vars: &'a ShootingVariables,
    tapes: Vec<IntervalTape<'a>>,
}

impl<'a, D: Dynamics> Linearization<'a, D> {
    pub fn new(f: &'a D, grid: &'a ShootingGrid, vars: &'a ShootingVariables) -> Result<Self> {
        check_len("state dimension", f.state_dim(), vars.n())?;
        check_len("interval count", grid.m(), vars.m())?;
        check_len("parameters", f.param_len(), vars.params.len())?;
        let tapes = (0..grid.m())
            .map(|k| {
                IntervalTape::record(f, &vars.params, vars.state(k), grid.plan(k)).map_err(|e| e.in_interval(k))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Linearization { f, grid, vars, tapes })
    }

    pub fn grid(&self) -> &ShootingGrid {
        self.grid
    }

    pub fn vars(&self) -> &ShootingVariables {
        self.vars
    }

    pub fn dynamics(&self) -> &D {
        self.f
    }

    fn m(&self) -> usize {
        self.vars.m()
    }

    fn n(&self) -> usize {
        self.vars.n()
    }

    /// `F_k(x_k, p)`.
    pub fn end_state(&self, k: usize) -> &[f64] {
        self.tapes[k].end_state()
    }

    /// Predicted state at the `i`-th owned measurement of interval `k`.
    pub fn prediction(&self, k: usize, i: usize) -> &[f64] {
        self.tapes[k].saved_value(i)
    }

    pub(crate) fn tape_mut(&mut self, k: usize) -> &mut IntervalTape<'a> {
        &mut self.tapes[k]
    }

    pub fn residual(&self, anchor: &[f64]) -> Result<ConstraintResidual> {
        let n = self.n();
        check_len("anchor", n, anchor.len())?;
        let mut g = Vec::with_capacity(self.m() * n);
        g.extend(self.vars.state(0).iter().zip(anchor).map(|(x, a)| x - a));
        let mut end_states = Vec::with_capacity((self.m() - 1) * n);
        for k in 1..self.m() {
            let fk = self.end_state(k - 1);
            g.extend(self.vars.state(k).iter().zip(fk).map(|(x, f)| x - f));
            end_states.extend_from_slice(fk);
        }
        check_finite("constraint residual", &g)?;
        Ok(ConstraintResidual { g, end_states })
    }

    fn interval_jvp(&self, k: usize, vx: &[f64], vp: Option<&[f64]>) -> Result<Vec<f64>> {
        f_jvp(self.f, &self.vars.params, self.vars.state(k), self.grid.plan(k), vx, vp)
            .map_err(|e| e.in_interval(k))
    }

    /// `G_x·vx + G_p·vp` with one forward pass per interval; `vp = None`
    /// drops the parameter part.
    pub fn g_v(&self, vx: &[f64], vp: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.n();
        check_len("state direction", self.m() * n, vx.len())?;
        if let Some(vp) = vp {
            check_len("parameter direction", self.vars.params.len(), vp.len())?;
        }
        let mut out = vx.to_vec();
        for k in 1..self.m() {
            let t = self.interval_jvp(k - 1, &vx[(k - 1) * n..k * n], vp)?;
            for (o, ti) in out[k * n..(k + 1) * n].iter_mut().zip(&t) {
                *o -= ti;
            }
        }
        Ok(out)
    }

    /// `G_x·v`.
    pub fn gx_v(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.g_v(v, None)
    }

    /// `G_p·v` for a parameter-space `v`.
    pub fn gp_v(&self, v: &[f64]) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.m() * self.n()];
        self.g_v(&zero, Some(v))
    }

    /// `(wᵀG_x, wᵀG_p)` with one reverse sweep per interval whose cotangent
    /// block is nonzero.
    pub fn vt_g(&mut self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (m, n) = (self.m(), self.n());
        check_len("constraint cotangent", m * n, w.len())?;
        let mut gx = w.to_vec();
        let mut gp = vec![0.0; self.vars.params.len()];
        for k in 0..m - 1 {
            let wk = &w[(k + 1) * n..(k + 2) * n];
            if wk.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (ax, ap) = self.tapes[k].vjp(wk).map_err(|e| e.in_interval(k))?;
            for (o, a) in gx[k * n..(k + 1) * n].iter_mut().zip(&ax) {
                *o -= a;
            }
            for (o, a) in gp.iter_mut().zip(&ap) {
                *o -= a;
            }
        }
        Ok((gx, gp))
    }

    /// `wᵀG_x`.
    pub fn vt_gx(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        self.vt_g(w).map(|(gx, _)| gx)
    }

    /// `wᵀG_p`.
    pub fn vt_gp(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        self.vt_g(w).map(|(_, gp)| gp)
    }

    /// `(G_x G_xᵀ + G_p G_pᵀ)·v`.
    pub fn schur_hvp(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        let (ax, ap) = self.vt_g(v)?;
        self.g_v(&ax, Some(&ap))
    }
}

/// `G` at `vars`.
pub fn residual<D: Dynamics>(
    f: &D,
    grid: &ShootingGrid,
    vars: &ShootingVariables,
    anchor: &[f64],
) -> Result<ConstraintResidual> {
    Linearization::new(f, grid, vars)?.residual(anchor)
}

pub fn gx_v<D: Dynamics>(f: &D, grid: &ShootingGrid, vars: &ShootingVariables, v: &[f64]) -> Result<Vec<f64>> {
    Linearization::new(f, grid, vars)?.gx_v(v)
}

pub fn gp_v<D: Dynamics>(f: &D, grid: &ShootingGrid, vars: &ShootingVariables, v: &[f64]) -> Result<Vec<f64>> {
    Linearization::new(f, grid, vars)?.gp_v(v)
}

pub fn vt_gx<D: Dynamics>(f: &D, grid: &ShootingGrid, vars: &ShootingVariables, w: &[f64]) -> Result<Vec<f64>> {
    Linearization::new(f, grid, vars)?.vt_gx(w)
}

pub fn vt_gp<D: Dynamics>(f: &D, grid: &ShootingGrid, vars: &ShootingVariables, w: &[f64]) -> Result<Vec<f64>> {
    Linearization::new(f, grid, vars)?.vt_gp(w)
}

pub fn schur_hvp<D: Dynamics>(
    f: &D,
    grid: &ShootingGrid,
    vars: &ShootingVariables,
    v: &[f64],
) -> Result<Vec<f64>> {
    Linearization::new(f, grid, vars)?.schur_hvp(v)
}
