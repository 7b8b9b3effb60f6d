use alloc::vec;
use alloc::vec::Vec;

use crate::ad::dot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final recurrence residual `‖rhs - A·x‖₂`.
    pub residual: f64,
    pub converged: bool,
}

/// Conjugate gradients from a zero initial guess. Stops once
/// `‖r‖₂ ≤ tol·‖rhs‖₂`; hitting `max_iter` is reported, not an error.
pub fn cg_solve(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let mut x = vec![0.0; rhs.len()];
    let mut r = rhs.to_vec();
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(Error::non_finite("cg right-hand side"));
    }
    let target = tol * libm::sqrt(rr);
    if rr == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut p = r.clone();
    let mut it = 0;
    while it < max_iter && libm::sqrt(rr) > target {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            if pap.is_finite() {
                return Err(Error::Singular { pivot: it });
            }
            return Err(Error::non_finite_at("cg curvature", it));
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() || !x.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite_at("cg iterate", it));
        }
        let beta = rr_next / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        it += 1;
    }
    let residual = libm::sqrt(rr);
    Ok(CgOutcome {
        solution: x,
        iterations: it,
        residual,
        converged: residual <= target,
    })
}
