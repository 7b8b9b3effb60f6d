//! Interval losses and Lagrangian gradients.
//!
//! `φ_k` is the mean squared error, over points and coordinates, between
//! the trajectory of interval `k` started at `x_k` and the measurements the
//! interval owns (see [`ShootingGrid::owned_rows`]). `Φ = Σ φ_k`.

use alloc::vec;
use alloc::vec::Vec;

use crate::ad::Node;
use crate::error::{check_finite, check_len, Result};
use crate::integrator::{integrate_interval, Dynamics, IntervalPlan, IntervalTape};
use crate::shooting::{Linearization, ShootingGrid, ShootingVariables};
use crate::systems::MeasurementSet;

fn check_data(grid: &ShootingGrid, n: usize, data: &MeasurementSet) -> Result<()> {
    check_len("measurement state dimension", n, data.state_dim)?;
    check_len("measurement count", grid.boundaries()[grid.m()] + 1, data.len())
}

/// Mean squared error between stacked predictions and measurement rows.
fn mse<'a>(preds: impl Iterator<Item = &'a [f64]>, data: &MeasurementSet, rows: core::ops::Range<usize>) -> f64 {
    let count = rows.len() * data.state_dim;
    let mut sum = 0.0;
    for (pred, j) in preds.zip(rows) {
        for (a, b) in pred.iter().zip(data.row(j)) {
            sum += (a - b) * (a - b);
        }
    }
    sum / count as f64
}

/// `φ_k` by plain integration.
pub fn phi<D: Dynamics>(
    f: &D,
    grid: &ShootingGrid,
    vars: &ShootingVariables,
    k: usize,
    data: &MeasurementSet,
) -> Result<f64> {
    check_data(grid, vars.n(), data)?;
    let sol = integrate_interval(f, &vars.params, vars.state(k), grid.plan(k)).map_err(|e| e.in_interval(k))?;
    let rows = grid.owned_rows(k);
    Ok(mse((0..rows.len()).map(|i| sol.saved(i)), data, rows))
}

/// `Φ = Σ_k φ_k`.
pub fn total_loss<D: Dynamics>(
    f: &D,
    grid: &ShootingGrid,
    vars: &ShootingVariables,
    data: &MeasurementSet,
) -> Result<f64> {
    (0..grid.m()).map(|k| phi(f, grid, vars, k, data)).sum()
}

/// `φ_k` read from a linearization's recorded trajectories.
pub fn interval_loss<D: Dynamics>(lin: &Linearization<'_, D>, k: usize, data: &MeasurementSet) -> f64 {
    let rows = lin.grid().owned_rows(k);
    mse((0..rows.len()).map(|i| lin.prediction(k, i)), data, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianGrads {
    /// `Φ_x + G_xᵀλ`, length `m·n`.
    pub l_x: Vec<f64>,
    /// `Φ_p + G_pᵀλ`, length `P`.
    pub l_p: Vec<f64>,
    /// `Φ` at the linearization point.
    pub phi: f64,
}

/// Seeds for the loss part of interval `k`: `∂φ_k/∂(saved state)`.
fn loss_seeds(lin: &Linearization<'_, impl Dynamics>, k: usize, data: &MeasurementSet) -> Vec<Vec<f64>> {
    let rows = lin.grid().owned_rows(k);
    let scale = 2.0 / (rows.len() * data.state_dim) as f64;
    rows.enumerate()
        .map(|(i, j)| {
            lin.prediction(k, i)
                .iter()
                .zip(data.row(j))
                .map(|(a, b)| scale * (a - b))
                .collect()
        })
        .collect()
}

/// `L_x`, `L_p` and `Φ` with one reverse sweep per interval. The sweep for
/// interval `k` is seeded with `∂φ_k` on the saved states and `-λ_{k+1}` on
/// the end state, which covers both `Φ`'s gradient and the `λᵀG`
/// contribution of the subdiagonal blocks.
pub fn lagrangian_grads<D: Dynamics>(
    lin: &mut Linearization<'_, D>,
    data: &MeasurementSet,
) -> Result<LagrangianGrads> {
    let (m, n) = (lin.vars().m(), lin.vars().n());
    check_data(lin.grid(), n, data)?;
    let lambda = lin.vars().multipliers.clone();
    let mut l_x = lambda.clone();
    let mut l_p = vec![0.0; lin.vars().params.len()];
    let mut total = 0.0;
    for k in 0..m {
        total += interval_loss(lin, k, data);
        let seeds = loss_seeds(lin, k, data);
        let saved: Vec<Node> = lin.tape_mut(k).saved().to_vec();
        let mut pairs: Vec<(Node, &[f64])> = saved.iter().copied().zip(seeds.iter().map(|s| s.as_slice())).collect();
        let neg_next: Vec<f64>;
        if k + 1 < m {
            neg_next = lambda[(k + 1) * n..(k + 2) * n].iter().map(|v| -v).collect();
            if neg_next.iter().any(|&v| v != 0.0) {
                let end = lin.tape_mut(k).end_node();
                pairs.push((end, &neg_next));
            }
        }
        let (ax, ap) = lin.tape_mut(k).pull(&pairs).map_err(|e| e.in_interval(k))?;
        for (o, a) in l_x[k * n..(k + 1) * n].iter_mut().zip(&ax) {
            *o += a;
        }
        for (o, a) in l_p.iter_mut().zip(&ap) {
            *o += a;
        }
    }
    check_finite("lagrangian gradient", &l_x)?;
    check_finite("lagrangian gradient", &l_p)?;
    Ok(LagrangianGrads { l_x, l_p, phi: total })
}

/// Single-shooting loss and its parameter gradient: one trajectory from
/// `x0` saved at every measurement, mean squared error over all of them.
pub fn single_shooting_grad<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    plan: &IntervalPlan,
    data: &MeasurementSet,
) -> Result<(f64, Vec<f64>)> {
    check_len("saved states", data.len(), plan.save_steps().len())?;
    check_len("measurement state dimension", f.state_dim(), data.state_dim)?;
    let mut tape = IntervalTape::record(f, params, x0, plan)?;
    let rows = 0..data.len();
    let loss = mse((0..data.len()).map(|i| tape.saved_value(i)), data, rows.clone());
    let scale = 2.0 / (data.len() * data.state_dim) as f64;
    let seeds: Vec<Vec<f64>> = rows
        .map(|j| {
            tape.saved_value(j)
                .iter()
                .zip(data.row(j))
                .map(|(a, b)| scale * (a - b))
                .collect()
        })
        .collect();
    let nodes = tape.saved().to_vec();
    let pairs: Vec<(Node, &[f64])> = nodes.into_iter().zip(seeds.iter().map(|s| s.as_slice())).collect();
    let (_, gp) = tape.pull(&pairs)?;
    Ok((loss, gp))
}
