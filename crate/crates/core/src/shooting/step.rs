use alloc::vec::Vec;

use super::{cg_solve, Linearization, DEFAULT_DENSE_CAP, DENSE_PARAM_CAP};
use crate::error::{check_finite, check_len, Result};
use crate::integrator::Dynamics;
use crate::linalg::{norm2, norm_inf};

/// Which linear solve produces `Δλ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SolverPath {
    /// Dense when `m·n` and `P` are under the caps, otherwise matrix-free.
    #[default]
    Auto,
    Dense,
    MatrixFree,
}

impl SolverPath {
    pub fn name(self) -> &'static str {
        match self {
            SolverPath::Auto => "auto",
            SolverPath::Dense => "dense",
            SolverPath::MatrixFree => "matrix-free",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [SolverPath::Auto, SolverPath::Dense, SolverPath::MatrixFree]
            .into_iter()
            .find(|p| p.name() == s)
    }

    pub fn uses_dense(self, constraint_len: usize, param_len: usize) -> bool {
        match self {
            SolverPath::Dense => true,
            SolverPath::MatrixFree => false,
            SolverPath::Auto => constraint_len <= DEFAULT_DENSE_CAP && param_len <= DENSE_PARAM_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CgOptions {
    /// Relative residual target.
    pub tol: f64,
    /// Defaults to `5·m·n`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

/// Search directions for states, parameters and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedStep {
    pub dx: Vec<f64>,
    pub dp: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub cg_iterations: usize,
    /// `‖S·Δλ - rhs‖₂` of the Schur solve.
    pub cg_residual: f64,
    pub converged: bool,
}

/// Condensed first-order KKT step via CG on the Schur system:
///
/// ```text
/// (G_x G_xᵀ + G_p G_pᵀ) Δλ = G - G_x L_x - G_p L_p
/// Δx = -(G_xᵀ Δλ + L_x),   Δp = -(G_pᵀ Δλ + L_p)
/// ```
///
/// The CG target is tightened when the right-hand side dwarfs `G`, so that
/// the linearized constraint holds to `tol·‖G‖∞`.
pub fn condensed_step<D: Dynamics>(
    lin: &mut Linearization<'_, D>,
    g: &[f64],
    l_x: &[f64],
    l_p: &[f64],
    opts: CgOptions,
) -> Result<CondensedStep> {
    let mn = lin.vars().states.len();
    check_len("constraint residual", mn, g.len())?;
    check_len("state gradient", mn, l_x.len())?;
    check_len("parameter gradient", lin.vars().params.len(), l_p.len())?;
    check_finite("lagrangian gradient", l_x)?;
    check_finite("lagrangian gradient", l_p)?;

    let glp = lin.g_v(l_x, Some(l_p))?;
    let rhs: Vec<f64> = g.iter().zip(&glp).map(|(a, b)| a - b).collect();
    let rhs_norm = norm2(&rhs);
    let mut rel = opts.tol;
    if rhs_norm > 0.0 {
        rel *= (norm_inf(g) / rhs_norm).min(1.0);
    }
    let rel = rel.max(opts.tol.min(1e-14));
    let max_iter = opts.max_iter.unwrap_or(5 * mn);
    let cg = cg_solve(|v| lin.schur_hvp(v), &rhs, rel, max_iter)?;

    let (ax, ap) = lin.vt_g(&cg.solution)?;
    let dx: Vec<f64> = ax.iter().zip(l_x).map(|(a, l)| -(a + l)).collect();
    let dp: Vec<f64> = ap.iter().zip(l_p).map(|(a, l)| -(a + l)).collect();
    check_finite("condensed step", &dx)?;
    check_finite("condensed step", &dp)?;
    Ok(CondensedStep {
        dx,
        dp,
        dlambda: cg.solution,
        cg_iterations: cg.iterations,
        cg_residual: cg.residual,
        converged: cg.converged,
    })
}

/// `‖G_x Δx + G_p Δp + G‖∞`.
pub fn linearized_defect<D: Dynamics>(
    lin: &Linearization<'_, D>,
    step: &CondensedStep,
    g: &[f64],
) -> Result<f64> {
    let lin_g = lin.g_v(&step.dx, Some(&step.dp))?;
    Ok(lin_g
        .iter()
        .zip(g)
        .fold(0.0, |m: f64, (a, b)| m.max((a + b).abs())))
}
