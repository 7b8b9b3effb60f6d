use alloc::vec;
use alloc::vec::Vec;

use super::{affine_apply, dot, AffineBlock, Engine};

/// A primal vector carried together with one tangent direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub primal: Vec<f64>,
    pub tangent: Vec<f64>,
}

impl DualVector {
    pub fn new(primal: Vec<f64>, tangent: Vec<f64>) -> Self {
        assert_eq!(primal.len(), tangent.len(), "primal/tangent length mismatch");
        DualVector { primal, tangent }
    }

    pub fn constant(primal: Vec<f64>) -> Self {
        let tangent = vec![0.0; primal.len()];
        DualVector { primal, tangent }
    }

    pub fn len(&self) -> usize {
        self.primal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primal.is_empty()
    }
}

/// Forward-mode engine.
///
/// Parameters may carry a tangent of their own (for `∂/∂p · v` products); when
/// they don't, affine layers skip the `Ẇ x + ḃ` term entirely.
pub struct Dual<'p> {
    params: &'p [f64],
    param_tangent: Option<&'p [f64]>,
}

impl<'p> Dual<'p> {
    pub fn new(params: &'p [f64], param_tangent: Option<&'p [f64]>) -> Self {
        if let Some(t) = param_tangent {
            assert_eq!(t.len(), params.len(), "parameter tangent length mismatch");
        }
        Dual {
            params,
            param_tangent,
        }
    }

    pub fn input(&self, x: &[f64], v: &[f64]) -> DualVector {
        DualVector::new(x.to_vec(), v.to_vec())
    }

    fn map(a: &DualVector, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64) -> DualVector {
        // df(x, f(x)) gives the local derivative
        let mut primal = Vec::with_capacity(a.len());
        let mut tangent = Vec::with_capacity(a.len());
        for (&x, &dx) in a.primal.iter().zip(&a.tangent) {
            let y = f(x);
            primal.push(y);
            tangent.push(df(x, y) * dx);
        }
        DualVector { primal, tangent }
    }

    fn zip(
        a: &DualVector,
        b: &DualVector,
        f: impl Fn(f64, f64, f64, f64) -> (f64, f64),
    ) -> DualVector {
        debug_assert_eq!(a.len(), b.len());
        let mut primal = Vec::with_capacity(a.len());
        let mut tangent = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let (y, dy) = f(a.primal[i], a.tangent[i], b.primal[i], b.tangent[i]);
            primal.push(y);
            tangent.push(dy);
        }
        DualVector { primal, tangent }
    }
}

impl Engine for Dual<'_> {
    type Var = DualVector;

    fn params(&self) -> &[f64] {
        self.params
    }

    fn constant(&mut self, values: &[f64]) -> DualVector {
        DualVector::constant(values.to_vec())
    }

    fn value<'a>(&'a self, a: &'a DualVector) -> &'a [f64] {
        &a.primal
    }

    fn add(&mut self, a: &DualVector, b: &DualVector) -> DualVector {
        Self::zip(a, b, |x, dx, y, dy| (x + y, dx + dy))
    }

    fn sub(&mut self, a: &DualVector, b: &DualVector) -> DualVector {
        Self::zip(a, b, |x, dx, y, dy| (x - y, dx - dy))
    }

    fn mul(&mut self, a: &DualVector, b: &DualVector) -> DualVector {
        Self::zip(a, b, |x, dx, y, dy| (x * y, dx * y + x * dy))
    }

    fn div(&mut self, a: &DualVector, b: &DualVector) -> DualVector {
        Self::zip(a, b, |x, dx, y, dy| {
            let q = x / y;
            (q, (dx - q * dy) / y)
        })
    }

    fn scale(&mut self, a: &DualVector, c: f64) -> DualVector {
        Self::map(a, |x| c * x, |_, _| c)
    }

    fn shift(&mut self, a: &DualVector, c: f64) -> DualVector {
        DualVector {
            primal: a.primal.iter().map(|x| x + c).collect(),
            tangent: a.tangent.clone(),
        }
    }

    fn axpy(&mut self, a: &DualVector, c: f64, b: &DualVector) -> DualVector {
        Self::zip(a, b, |x, dx, y, dy| (x + c * y, dx + c * dy))
    }

    fn powf(&mut self, a: &DualVector, c: f64) -> DualVector {
        Self::map(a, |x| libm::pow(x, c), |x, _| c * libm::pow(x, c - 1.0))
    }

    fn exp(&mut self, a: &DualVector) -> DualVector {
        Self::map(a, libm::exp, |_, y| y)
    }

    fn tanh(&mut self, a: &DualVector) -> DualVector {
        Self::map(a, libm::tanh, |_, y| 1.0 - y * y)
    }

    fn affine(&mut self, block: &AffineBlock, x: &DualVector) -> DualVector {
        let mut primal = vec![0.0; block.rows];
        affine_apply(self.params, block, &x.primal, &mut primal);
        let w = &self.params[block.weight..block.weight + block.rows * block.cols];
        let mut tangent: Vec<f64> = w
            .chunks_exact(block.cols)
            .map(|row| dot(row, &x.tangent))
            .collect();
        if let Some(pt) = self.param_tangent {
            let dw = &pt[block.weight..block.weight + block.rows * block.cols];
            let db = &pt[block.bias..block.bias + block.rows];
            for (r, row) in dw.chunks_exact(block.cols).enumerate() {
                tangent[r] += db[r] + dot(row, &x.primal);
            }
        }
        DualVector { primal, tangent }
    }

    fn concat(&mut self, parts: &[DualVector]) -> DualVector {
        DualVector {
            primal: parts.iter().flat_map(|p| p.primal.iter().copied()).collect(),
            tangent: parts.iter().flat_map(|p| p.tangent.iter().copied()).collect(),
        }
    }

    fn slice(&mut self, a: &DualVector, start: usize, len: usize) -> DualVector {
        DualVector {
            primal: a.primal[start..start + len].to_vec(),
            tangent: a.tangent[start..start + len].to_vec(),
        }
    }

    fn sum(&mut self, a: &DualVector) -> DualVector {
        DualVector {
            primal: vec![a.primal.iter().sum()],
            tangent: vec![a.tangent.iter().sum()],
        }
    }
}
