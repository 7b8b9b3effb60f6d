//! Multiple-shooting neural ODE training with condensed first-order KKT steps.
//!
//! The horizon of a trajectory is split into `m` shooting intervals, each with a
//! free start state. Continuity between intervals is enforced as equality
//! constraints `G(x, p) = 0`, and every training step solves the first-order
//! KKT surrogate
//!
//! ```text
//! [ I    0    Gxᵀ ] [Δx]     [Lx]
//! [ 0    I    Gpᵀ ] [Δp] = - [Lp]
//! [ Gx   Gp   0   ] [Δλ]     [G ]
//! ```
//!
//! by condensing onto the multipliers (`(GxGxᵀ + GpGpᵀ) Δλ = G - Gx Lx - Gp Lp`)
//! and back-substituting. The resulting directions are fed to Adam.
//!
//! Everything in this crate is `no_std` + `alloc`: automatic differentiation,
//! the learned dynamics, the RK4 integrator and its sensitivities, the
//! condensing operators, losses, the optimizer, the benchmark systems and the
//! training loops. File formats and the command line live in the `msnode` crate.

#![no_std]

extern crate alloc;

pub mod ad;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod optimizer;
pub mod shooting;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
