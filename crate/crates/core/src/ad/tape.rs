use alloc::vec::Vec;

use super::{AffineBlock, Engine};

/// Handle to a recorded vector on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Shift(usize, f64),
    Axpy(usize, f64, usize),
    Pow(usize, f64),
    Exp(usize),
    Tanh(usize),
    Affine(AffineBlock, usize),
    Concat { first: usize, count: usize },
    Slice(usize, usize),
    Sum(usize),
}

#[derive(Debug, Clone)]
struct Entry {
    op: Op,
    start: usize,
    len: usize,
}

/// Reverse-mode engine: an append-only record of operations over a flat
/// value arena.
///
/// Local partials are recovered from the stored primal values during the
/// adjoint sweep. A recorded tape can be swept backward any number of times
/// with different seeds.
pub struct Tape<'p> {
    params: &'p [f64],
    entries: Vec<Entry>,
    values: Vec<f64>,
    parts: Vec<usize>,
    adjoint: Vec<f64>,
    param_adjoint: Vec<f64>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            entries: Vec::new(),
            values: Vec::new(),
            parts: Vec::new(),
            adjoint: Vec::new(),
            param_adjoint: Vec::new(),
        }
    }

    /// Registers an independent input. Its adjoint is available after
    /// [`Tape::backward`].
    pub fn input(&mut self, x: &[f64]) -> Node {
        self.push_values(Op::Leaf, x)
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops every recorded operation, keeping allocations.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.values.clear();
        self.parts.clear();
        self.adjoint.clear();
        self.param_adjoint.clear();
    }

    /// Recomputes every non-input value from the inputs, in recording order.
    pub fn replay(&mut self) {
        for idx in 0..self.entries.len() {
            self.compute(idx);
        }
    }

    /// Adjoint sweep in exact reverse recording order.
    ///
    /// Each seed `(node, w)` adds `w` to the adjoint of `node` before the
    /// sweep. Previous adjoints are discarded.
    pub fn backward(&mut self, seeds: &[(Node, &[f64])]) {
        self.adjoint.clear();
        self.adjoint.resize(self.values.len(), 0.0);
        self.param_adjoint.clear();
        self.param_adjoint.resize(self.params.len(), 0.0);
        for (node, w) in seeds {
            let e = &self.entries[node.0];
            assert_eq!(e.len, w.len(), "seed length mismatch");
            for (a, &wi) in self.adjoint[e.start..e.start + e.len].iter_mut().zip(w.iter()) {
                *a += wi;
            }
        }
        for idx in (0..self.entries.len()).rev() {
            self.pull(idx);
        }
    }

    /// Adjoint of `node` from the last [`Tape::backward`].
    pub fn adjoint(&self, node: Node) -> &[f64] {
        let e = &self.entries[node.0];
        &self.adjoint[e.start..e.start + e.len]
    }

    /// Parameter adjoint from the last [`Tape::backward`].
    pub fn param_adjoint(&self) -> &[f64] {
        &self.param_adjoint
    }

    fn slot(&self, idx: usize) -> (usize, usize) {
        let e = &self.entries[idx];
        (e.start, e.len)
    }

    fn push_values(&mut self, op: Op, values: &[f64]) -> Node {
        let start = self.values.len();
        self.values.extend_from_slice(values);
        self.entries.push(Entry {
            op,
            start,
            len: values.len(),
        });
        Node(self.entries.len() - 1)
    }

    fn push(&mut self, op: Op, len: usize) -> Node {
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        self.entries.push(Entry { op, start, len });
        let idx = self.entries.len() - 1;
        self.compute(idx);
        Node(idx)
    }

    fn compute(&mut self, idx: usize) {
        let Entry { ref op, start, len } = self.entries[idx];
        let (lo, hi) = self.values.split_at_mut(start);
        let out = &mut hi[..len];
        let src = |i: usize| {
            let e = &self.entries[i];
            &lo[e.start..e.start + e.len]
        };
        match *op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => zip_into(out, src(a), src(b), |x, y| x + y),
            Op::Sub(a, b) => zip_into(out, src(a), src(b), |x, y| x - y),
            Op::Mul(a, b) => zip_into(out, src(a), src(b), |x, y| x * y),
            Op::Div(a, b) => zip_into(out, src(a), src(b), |x, y| x / y),
            Op::Scale(a, c) => map_into(out, src(a), |x| c * x),
            Op::Shift(a, c) => map_into(out, src(a), |x| x + c),
            Op::Axpy(a, c, b) => zip_into(out, src(a), src(b), |x, y| x + c * y),
            Op::Pow(a, c) => map_into(out, src(a), |x| libm::pow(x, c)),
            Op::Exp(a) => map_into(out, src(a), libm::exp),
            Op::Tanh(a) => map_into(out, src(a), libm::tanh),
            Op::Affine(ref block, x) => super::affine_apply(self.params, block, src(x), out),
            Op::Concat { first, count } => {
                let mut offset = 0;
                for &p in &self.parts[first..first + count] {
                    let s = src(p);
                    out[offset..offset + s.len()].copy_from_slice(s);
                    offset += s.len();
                }
            }
            Op::Slice(a, s) => out.copy_from_slice(&src(a)[s..s + len]),
            Op::Sum(a) => out[0] = src(a).iter().sum(),
        }
    }

    fn pull(&mut self, idx: usize) {
        let Entry { ref op, start, len } = self.entries[idx];
        let (adj_lo, adj_hi) = self.adjoint.split_at_mut(start);
        let g = &adj_hi[..len];
        if matches!(op, Op::Leaf | Op::Const) || g.iter().all(|&v| v == 0.0) {
            return;
        }
        let values = &self.values;
        let entries = &self.entries;
        let span = |i: usize| {
            let e = &entries[i];
            e.start..e.start + e.len
        };
        let y = &values[start..start + len];
        match *op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                acc(&mut adj_lo[span(a)], g, |_, gi| gi);
                acc(&mut adj_lo[span(b)], g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                acc(&mut adj_lo[span(a)], g, |_, gi| gi);
                acc(&mut adj_lo[span(b)], g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&values[span(a)], &values[span(b)]);
                acc(&mut adj_lo[span(a)], g, |i, gi| gi * vb[i]);
                acc(&mut adj_lo[span(b)], g, |i, gi| gi * va[i]);
            }
            Op::Div(a, b) => {
                let vb = &values[span(b)];
                acc(&mut adj_lo[span(a)], g, |i, gi| gi / vb[i]);
                acc(&mut adj_lo[span(b)], g, |i, gi| -gi * y[i] / vb[i]);
            }
            Op::Scale(a, c) => acc(&mut adj_lo[span(a)], g, |_, gi| c * gi),
            Op::Shift(a, _) => acc(&mut adj_lo[span(a)], g, |_, gi| gi),
            Op::Axpy(a, c, b) => {
                acc(&mut adj_lo[span(a)], g, |_, gi| gi);
                acc(&mut adj_lo[span(b)], g, |_, gi| c * gi);
            }
            Op::Pow(a, c) => {
                let va = &values[span(a)];
                acc(&mut adj_lo[span(a)], g, |i, gi| gi * c * libm::pow(va[i], c - 1.0));
            }
            Op::Exp(a) => acc(&mut adj_lo[span(a)], g, |i, gi| gi * y[i]),
            Op::Tanh(a) => acc(&mut adj_lo[span(a)], g, |i, gi| gi * (1.0 - y[i] * y[i])),
            Op::Affine(ref block, x) => {
                let xv = &values[span(x)];
                let w = &self.params[block.weight..block.weight + block.rows * block.cols];
                let xa = &mut adj_lo[span(x)];
                let nw = block.rows * block.cols;
                let (pw, pb) = if block.bias > block.weight {
                    let (l, r) = self.param_adjoint.split_at_mut(block.bias);
                    (&mut l[block.weight..block.weight + nw], &mut r[..block.rows])
                } else {
                    let (l, r) = self.param_adjoint.split_at_mut(block.weight);
                    (&mut r[..nw], &mut l[block.bias..block.bias + block.rows])
                };
                for r in 0..block.rows {
                    let gr = g[r];
                    if gr == 0.0 {
                        continue;
                    }
                    pb[r] += gr;
                    let row = &w[r * block.cols..(r + 1) * block.cols];
                    let prow = &mut pw[r * block.cols..(r + 1) * block.cols];
                    for (a, &wc) in xa.iter_mut().zip(row) {
                        *a += wc * gr;
                    }
                    for (p, &xc) in prow.iter_mut().zip(xv) {
                        *p += gr * xc;
                    }
                }
            }
            Op::Concat { first, count } => {
                let mut offset = 0;
                for &p in &self.parts[first..first + count] {
                    let r = span(p);
                    let n = r.len();
                    acc(&mut adj_lo[r], &g[offset..offset + n], |_, gi| gi);
                    offset += n;
                }
            }
            Op::Slice(a, s) => {
                let r = span(a);
                acc(&mut adj_lo[r.start + s..r.start + s + len], g, |_, gi| gi);
            }
            Op::Sum(a) => {
                let g0 = g[0];
                for v in &mut adj_lo[span(a)] {
                    *v += g0;
                }
            }
        }
    }
}

#[inline]
fn zip_into(out: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    debug_assert_eq!(a.len(), b.len());
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

#[inline]
fn map_into(out: &mut [f64], a: &[f64], f: impl Fn(f64) -> f64) {
    for (o, &x) in out.iter_mut().zip(a) {
        *o = f(x);
    }
}

#[inline]
fn acc(dst: &mut [f64], g: &[f64], f: impl Fn(usize, f64) -> f64) {
    for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
        *d += f(i, gi);
    }
}

impl Engine for Tape<'_> {
    type Var = Node;

    fn params(&self) -> &[f64] {
        self.params
    }

    fn constant(&mut self, values: &[f64]) -> Node {
        self.push_values(Op::Const, values)
    }

    fn value<'a>(&'a self, a: &'a Node) -> &'a [f64] {
        let (s, l) = self.slot(a.0);
        &self.values[s..s + l]
    }

    fn add(&mut self, a: &Node, b: &Node) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Add(a.0, b.0), len)
    }

    fn sub(&mut self, a: &Node, b: &Node) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Sub(a.0, b.0), len)
    }

    fn mul(&mut self, a: &Node, b: &Node) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Mul(a.0, b.0), len)
    }

    fn div(&mut self, a: &Node, b: &Node) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Div(a.0, b.0), len)
    }

    fn scale(&mut self, a: &Node, c: f64) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Scale(a.0, c), len)
    }

    fn shift(&mut self, a: &Node, c: f64) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Shift(a.0, c), len)
    }

    fn axpy(&mut self, a: &Node, c: f64, b: &Node) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Axpy(a.0, c, b.0), len)
    }

    fn powf(&mut self, a: &Node, c: f64) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Pow(a.0, c), len)
    }

    fn exp(&mut self, a: &Node) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Exp(a.0), len)
    }

    fn tanh(&mut self, a: &Node) -> Node {
        let len = self.slot(a.0).1;
        self.push(Op::Tanh(a.0), len)
    }

    fn affine(&mut self, block: &AffineBlock, x: &Node) -> Node {
        debug_assert_eq!(self.slot(x.0).1, block.cols);
        self.push(Op::Affine(*block, x.0), block.rows)
    }

    fn concat(&mut self, parts: &[Node]) -> Node {
        let first = self.parts.len();
        let mut len = 0;
        for p in parts {
            self.parts.push(p.0);
            len += self.slot(p.0).1;
        }
        self.push(
            Op::Concat {
                first,
                count: parts.len(),
            },
            len,
        )
    }

    fn slice(&mut self, a: &Node, start: usize, len: usize) -> Node {
        assert!(start + len <= self.slot(a.0).1, "slice out of range");
        self.push(Op::Slice(a.0, start), len)
    }

    fn sum(&mut self, a: &Node) -> Node {
        self.push(Op::Sum(a.0), 1)
    }
}
