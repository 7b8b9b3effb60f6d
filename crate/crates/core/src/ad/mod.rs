//! Forward-mode (dual vectors) and reverse-mode (tape) automatic differentiation
//! over flat `f64` vectors.
//!
//! Differentiable code is written once against the [`Engine`] trait and run on
//! one of three engines:
//!
//! * [`Eval`]: plain values, no derivative bookkeeping.
//! * [`Dual`]: primal + tangent pairs, giving Jacobian-vector products.
//! * [`Tape`]: records every operation so that one or more adjoint sweeps can
//!   produce vector-Jacobian products.
//!
//! The primitive set is closed and small: `+ - × ÷` (elementwise), scaling and
//! shifting by constants, `pow` with a constant exponent, `exp`, `tanh`, and an
//! affine map `W x + b` whose weights live in the engine's parameter vector.
//! Non-finite values are not trapped per primitive; callers check at operation
//! boundaries.

mod dual;
mod tape;

pub use dual::{Dual, DualVector};
pub use tape::{Node, Tape};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_finite, check_len, Result};

/// Location of one dense layer `y = W x + b` inside a flat parameter vector.
///
/// `W` is stored row-major (`rows` outputs × `cols` inputs) at `weight`, and the
/// bias of length `rows` at `bias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineBlock {
    pub weight: usize,
    pub bias: usize,
    pub rows: usize,
    pub cols: usize,
}

impl AffineBlock {
    pub fn param_count(&self) -> usize {
        self.rows * (self.cols + 1)
    }
}

/// Vector algebra with derivative bookkeeping.
///
/// All binary elementwise operations require equal lengths; this is a
/// programming invariant and is checked with `debug_assert!` only.
pub trait Engine {
    type Var: Clone;

    /// The parameter vector referenced by [`Engine::affine`].
    fn params(&self) -> &[f64];

    fn constant(&mut self, values: &[f64]) -> Self::Var;
    fn value<'a>(&'a self, a: &'a Self::Var) -> &'a [f64];

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn div(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;

    /// `c · a`
    fn scale(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    /// `a + c`
    fn shift(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    /// `a + c · b`
    fn axpy(&mut self, a: &Self::Var, c: f64, b: &Self::Var) -> Self::Var;

    /// `a^c` for a constant exponent.
    fn powf(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    fn exp(&mut self, a: &Self::Var) -> Self::Var;
    fn tanh(&mut self, a: &Self::Var) -> Self::Var;

    /// `W x + b` with `W`, `b` read from [`Engine::params`].
    fn affine(&mut self, block: &AffineBlock, x: &Self::Var) -> Self::Var;

    fn concat(&mut self, parts: &[Self::Var]) -> Self::Var;
    fn slice(&mut self, a: &Self::Var, start: usize, len: usize) -> Self::Var;
    /// Sum of all entries, as a length-1 vector.
    fn sum(&mut self, a: &Self::Var) -> Self::Var;

    fn len(&self, a: &Self::Var) -> usize {
        self.value(a).len()
    }

    /// Single entry `a[i]` as a length-1 vector.
    fn component(&mut self, a: &Self::Var, i: usize) -> Self::Var {
        self.slice(a, i, 1)
    }

    fn neg(&mut self, a: &Self::Var) -> Self::Var {
        self.scale(a, -1.0)
    }
}

/// A map `R^k → R^l` written against [`Engine`], so that it can be evaluated,
/// pushed forward, or pulled back.
pub trait DiffMap {
    fn apply<E: Engine>(&self, engine: &mut E, x: &E::Var) -> E::Var;
}

/// Plain evaluation engine.
pub struct Eval<'p> {
    params: &'p [f64],
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Eval { params }
    }
}

impl Default for Eval<'_> {
    fn default() -> Self {
        Eval { params: &[] }
    }
}

pub(crate) fn affine_apply(params: &[f64], block: &AffineBlock, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), block.cols);
    let w = &params[block.weight..block.weight + block.rows * block.cols];
    let b = &params[block.bias..block.bias + block.rows];
    for (r, (o, row)) in out.iter_mut().zip(w.chunks_exact(block.cols)).enumerate() {
        *o = b[r] + dot(row, x);
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl Engine for Eval<'_> {
    type Var = Vec<f64>;

    fn params(&self) -> &[f64] {
        self.params
    }

    fn constant(&mut self, values: &[f64]) -> Vec<f64> {
        values.to_vec()
    }

    fn value<'a>(&'a self, a: &'a Vec<f64>) -> &'a [f64] {
        a
    }

    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        zip_map(a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        zip_map(a, b, |x, y| x - y)
    }

    fn mul(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        zip_map(a, b, |x, y| x * y)
    }

    fn div(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        zip_map(a, b, |x, y| x / y)
    }

    fn scale(&mut self, a: &Vec<f64>, c: f64) -> Vec<f64> {
        a.iter().map(|x| c * x).collect()
    }

    fn shift(&mut self, a: &Vec<f64>, c: f64) -> Vec<f64> {
        a.iter().map(|x| x + c).collect()
    }

    fn axpy(&mut self, a: &Vec<f64>, c: f64, b: &Vec<f64>) -> Vec<f64> {
        zip_map(a, b, |x, y| x + c * y)
    }

    fn powf(&mut self, a: &Vec<f64>, c: f64) -> Vec<f64> {
        a.iter().map(|&x| libm::pow(x, c)).collect()
    }

    fn exp(&mut self, a: &Vec<f64>) -> Vec<f64> {
        a.iter().map(|&x| libm::exp(x)).collect()
    }

    fn tanh(&mut self, a: &Vec<f64>) -> Vec<f64> {
        a.iter().map(|&x| libm::tanh(x)).collect()
    }

    fn affine(&mut self, block: &AffineBlock, x: &Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; block.rows];
        affine_apply(self.params, block, x, &mut out);
        out
    }

    fn concat(&mut self, parts: &[Vec<f64>]) -> Vec<f64> {
        parts.concat()
    }

    fn slice(&mut self, a: &Vec<f64>, start: usize, len: usize) -> Vec<f64> {
        a[start..start + len].to_vec()
    }

    fn sum(&mut self, a: &Vec<f64>) -> Vec<f64> {
        vec![a.iter().sum()]
    }
}

/// Evaluates `f(x)`.
pub fn eval<M: DiffMap>(f: &M, x: &[f64]) -> Result<Vec<f64>> {
    let mut e = Eval::default();
    let x = x.to_vec();
    let y = f.apply(&mut e, &x);
    check_finite("eval", &y)?;
    Ok(y)
}

/// Returns `(f(x), J_f(x) v)`.
pub fn jvp<M: DiffMap>(f: &M, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("jvp tangent", x.len(), v.len())?;
    let mut e = Dual::new(&[], None);
    let input = e.input(x, v);
    let out = f.apply(&mut e, &input);
    check_finite("jvp primal", &out.primal)?;
    check_finite("jvp tangent", &out.tangent)?;
    Ok((out.primal, out.tangent))
}

/// Returns `(f(x), wᵀ J_f(x))`.
pub fn vjp<M: DiffMap>(f: &M, x: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new(&[]);
    let input = tape.input(x);
    let out = f.apply(&mut tape, &input);
    let y = tape.value(&out).to_vec();
    check_len("vjp cotangent", y.len(), w.len())?;
    check_finite("vjp primal", &y)?;
    tape.backward(&[(out, w)]);
    let grad = tape.adjoint(input).to_vec();
    check_finite("vjp cotangent", &grad)?;
    Ok((y, grad))
}

/// Gradient of a scalar-valued map.
pub fn gradient<M: DiffMap>(f: &M, x: &[f64]) -> Result<Vec<f64>> {
    vjp(f, x, &[1.0]).map(|(_, g)| g)
}
