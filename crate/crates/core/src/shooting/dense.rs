//! Assembled Jacobians for small problems and the direct KKT step.

use alloc::vec;
use alloc::vec::Vec;

use super::{CondensedStep, Linearization};
use crate::error::{check_finite, check_len, Error, Result};
use crate::integrator::Dynamics;
use crate::linalg::{norm2, DenseMatrix};

/// Largest `m·n` assembled densely by default.
pub const DEFAULT_DENSE_CAP: usize = 512;
/// Largest parameter count for which the automatic solver choice goes dense.
pub const DENSE_PARAM_CAP: usize = 200_000;

fn check_cap(size: usize, cap: usize) -> Result<()> {
    if size > cap {
        Err(Error::DenseCapExceeded { size, cap })
    } else {
        Ok(())
    }
}

/// Builds `G_x` from `n` products with stacked seeds. Seed `j` sets
/// coordinate `j` of every block; since block row `k` only reads blocks
/// `k - 1` and `k`, each subdiagonal block column `j` can be read off
/// one product.
pub fn assemble_gx_from(
    m: usize,
    n: usize,
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<DenseMatrix> {
    let mn = m * n;
    let mut gx = DenseMatrix::identity(mn);
    for j in 0..n {
        let mut seed = vec![0.0; mn];
        for k in 0..m {
            seed[k * n + j] = 1.0;
        }
        let y = apply(&seed)?;
        check_len("stacked product", mn, y.len())?;
        for r in 1..m {
            for i in 0..n {
                let unit = if i == j { 1.0 } else { 0.0 };
                gx[(r * n + i, (r - 1) * n + j)] = y[r * n + i] - unit;
            }
        }
    }
    Ok(gx)
}

/// Column-by-column assembly of any linear map, one product per column.
pub fn assemble_columns(
    rows: usize,
    cols: usize,
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<DenseMatrix> {
    let mut a = DenseMatrix::zeros(rows, cols);
    let mut e = vec![0.0; cols];
    for c in 0..cols {
        e[c] = 1.0;
        let y = apply(&e)?;
        e[c] = 0.0;
        check_len("column product", rows, y.len())?;
        for (r, v) in y.into_iter().enumerate() {
            a[(r, c)] = v;
        }
    }
    Ok(a)
}

/// `G_x` with `n` forward-mode products.
pub fn assemble_gx_dense<D: Dynamics>(lin: &Linearization<'_, D>, cap: usize) -> Result<DenseMatrix> {
    let (m, n) = (lin.vars().m(), lin.vars().n());
    check_cap(m * n, cap)?;
    assemble_gx_from(m, n, |v| lin.gx_v(v))
}

/// `G_p` with one reverse sweep per row.
pub fn assemble_gp_dense<D: Dynamics>(lin: &mut Linearization<'_, D>, cap: usize) -> Result<DenseMatrix> {
    let (m, n) = (lin.vars().m(), lin.vars().n());
    let mn = m * n;
    check_cap(mn, cap)?;
    let p = lin.vars().params.len();
    let mut gp = DenseMatrix::zeros(mn, p);
    let mut e = vec![0.0; mn];
    for r in 0..mn {
        e[r] = 1.0;
        let row = lin.vt_gp(&e)?;
        e[r] = 0.0;
        gp.row_mut(r).copy_from_slice(&row);
    }
    Ok(gp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseJacobians {
    pub gx: DenseMatrix,
    pub gp: DenseMatrix,
}

impl DenseJacobians {
    /// `‖G_x Δx + G_p Δp + G‖∞`.
    pub fn defect(&self, step: &CondensedStep, g: &[f64]) -> f64 {
        let a = self.gx.matvec(&step.dx);
        let b = self.gp.matvec(&step.dp);
        (0..g.len()).fold(0.0, |m: f64, i| m.max((a[i] + b[i] + g[i]).abs()))
    }
}

/// Both Jacobians from `n` reverse sweeps per interval: each sweep yields
/// one row of `∂F_k/∂x` and the matching row of `∂F_k/∂p`.
pub fn jacobians_by_vjp<D: Dynamics>(lin: &mut Linearization<'_, D>, cap: usize) -> Result<DenseJacobians> {
    let (m, n) = (lin.vars().m(), lin.vars().n());
    let mn = m * n;
    check_cap(mn, cap)?;
    let p = lin.vars().params.len();
    let mut gx = DenseMatrix::identity(mn);
    let mut gp = DenseMatrix::zeros(mn, p);
    let mut e = vec![0.0; n];
    for k in 0..m.saturating_sub(1) {
        for i in 0..n {
            e[i] = 1.0;
            let (ax, ap) = lin.tape_mut(k).vjp(&e).map_err(|err| err.in_interval(k))?;
            e[i] = 0.0;
            let r = (k + 1) * n + i;
            for (j, a) in ax.iter().enumerate() {
                gx[(r, k * n + j)] = -a;
            }
            for (o, a) in gp.row_mut(r).iter_mut().zip(&ap) {
                *o = -a;
            }
        }
    }
    Ok(DenseJacobians { gx, gp })
}

/// The same step as [`super::condensed_step`], with `Δλ` from a Cholesky
/// solve of the assembled Schur matrix.
pub fn direct_step(jac: &DenseJacobians, g: &[f64], l_x: &[f64], l_p: &[f64]) -> Result<CondensedStep> {
    let mn = jac.gx.rows();
    check_len("constraint residual", mn, g.len())?;
    check_len("state gradient", mn, l_x.len())?;
    check_len("parameter gradient", jac.gp.cols(), l_p.len())?;
    check_finite("lagrangian gradient", l_x)?;
    check_finite("lagrangian gradient", l_p)?;

    let mut schur = jac.gx.gram();
    schur.add_assign(&jac.gp.gram());
    let a = jac.gx.matvec(l_x);
    let b = jac.gp.matvec(l_p);
    let rhs: Vec<f64> = (0..mn).map(|i| g[i] - a[i] - b[i]).collect();
    let dlambda = schur.cholesky_solve(&rhs)?;

    let ax = jac.gx.matvec_t(&dlambda);
    let ap = jac.gp.matvec_t(&dlambda);
    let dx: Vec<f64> = ax.iter().zip(l_x).map(|(a, l)| -(a + l)).collect();
    let dp: Vec<f64> = ap.iter().zip(l_p).map(|(a, l)| -(a + l)).collect();
    check_finite("direct step", &dx)?;
    check_finite("direct step", &dp)?;
    let check = schur.matvec(&dlambda);
    let res: Vec<f64> = check.iter().zip(&rhs).map(|(s, r)| s - r).collect();
    Ok(CondensedStep {
        dx,
        dp,
        dlambda,
        cg_iterations: 0,
        cg_residual: norm2(&res),
        converged: true,
    })
}
