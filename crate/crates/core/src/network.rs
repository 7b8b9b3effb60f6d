//! Learned dynamics: one scalar-output MLP per state variable.
//!
//! Network `i` maps the state (optionally prefixed with time) to `dx_i/dt`.
//! Hidden layers use `tanh`, the output layer is linear. All networks read
//! their weights from one shared flat parameter vector.
//!
//! Flat layout: networks in state order; within a network, layers in order;
//! within a layer, the row-major weight matrix (`out × in`) followed by the
//! bias vector.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::{AffineBlock, Engine, Eval};
use crate::error::{check_finite, check_len, Error, Result};
use crate::integrator::Dynamics;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkSpec {
    pub state_dim: usize,
    pub hidden: Vec<usize>,
    /// Prepend time to each network's input.
    #[cfg_attr(feature = "serde", serde(default))]
    pub time_input: bool,
}

impl NetworkSpec {
    pub fn new(state_dim: usize, hidden: Vec<usize>) -> Self {
        NetworkSpec {
            state_dim,
            hidden,
            time_input: false,
        }
    }

    pub fn with_time_input(mut self, on: bool) -> Self {
        self.time_input = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::InvalidConfig("state dimension must be at least 1".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.state_dim + usize::from(self.time_input)
    }

    /// Layer widths of one network, input through output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_width());
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }

    pub fn param_count(&self) -> usize {
        let w = self.widths();
        let per_net: usize = w.windows(2).map(|p| (p[0] + 1) * p[1]).sum();
        per_net * self.state_dim
    }

    pub fn layout(&self) -> ParamLayout {
        let widths = self.widths();
        let mut offset = 0;
        let mut networks = Vec::with_capacity(self.state_dim);
        for _ in 0..self.state_dim {
            let mut layers = Vec::with_capacity(widths.len() - 1);
            for pair in widths.windows(2) {
                let (cols, rows) = (pair[0], pair[1]);
                let block = AffineBlock {
                    weight: offset,
                    bias: offset + rows * cols,
                    rows,
                    cols,
                };
                offset += block.param_count();
                layers.push(block);
            }
            networks.push(layers);
        }
        ParamLayout {
            networks,
            len: offset,
        }
    }
}

/// Offsets of every layer of every network inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub networks: Vec<Vec<AffineBlock>>,
    pub len: usize,
}

/// Structured weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// The trainable parameter vector `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl FlatParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layout = spec.layout();
        FlatParams {
            values: alloc::vec![0.0; layout.len],
            layout,
        }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        let layout = spec.layout();
        check_len("parameter vector", layout.len, values.len())?;
        Ok(FlatParams { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Splits into per-network, per-layer weights.
    pub fn unflatten(&self) -> Vec<Vec<LayerWeights>> {
        self.layout
            .networks
            .iter()
            .map(|net| {
                net.iter()
                    .map(|b| LayerWeights {
                        rows: b.rows,
                        cols: b.cols,
                        weights: self.values[b.weight..b.weight + b.rows * b.cols].to_vec(),
                        bias: self.values[b.bias..b.bias + b.rows].to_vec(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn flatten(spec: &NetworkSpec, networks: &[Vec<LayerWeights>]) -> Result<Self> {
        let mut p = Self::zeros(spec);
        check_len("network count", p.layout.networks.len(), networks.len())?;
        for (blocks, layers) in p.layout.networks.iter().zip(networks) {
            check_len("layer count", blocks.len(), layers.len())?;
            for (b, l) in blocks.iter().zip(layers) {
                check_len("layer weights", b.rows * b.cols, l.weights.len())?;
                check_len("layer bias", b.rows, l.bias.len())?;
                p.values[b.weight..b.weight + l.weights.len()].copy_from_slice(&l.weights);
                p.values[b.bias..b.bias + l.bias.len()].copy_from_slice(&l.bias);
            }
        }
        Ok(p)
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> FlatParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = FlatParams::zeros(spec);
    for net in &p.layout.networks {
        for b in net {
            let bound = libm::sqrt(6.0 / (b.cols + b.rows) as f64);
            for w in &mut p.values[b.weight..b.weight + b.rows * b.cols] {
                *w = rng.random_range(-bound..=bound);
            }
        }
    }
    p
}

/// The learned vector field `f(x, t; p)`.
#[derive(Debug, Clone)]
pub struct NeuralDynamics {
    spec: NetworkSpec,
    layout: ParamLayout,
}

impl NeuralDynamics {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(NeuralDynamics { spec, layout })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }
}

impl Dynamics for NeuralDynamics {
    fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    fn param_len(&self) -> usize {
        self.layout.len
    }

    fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, t: f64) -> E::Var {
        let input = if self.spec.time_input {
            let tv = e.constant(&[t]);
            e.concat(&[tv, x.clone()])
        } else {
            x.clone()
        };
        let mut outputs = Vec::with_capacity(self.spec.state_dim);
        for net in &self.layout.networks {
            let last = net.len() - 1;
            let mut h = e.affine(&net[0], &input);
            for block in &net[1..] {
                h = e.tanh(&h);
                h = e.affine(block, &h);
            }
            debug_assert_eq!(net[last].rows, 1);
            outputs.push(h);
        }
        e.concat(&outputs)
    }
}

/// Evaluates the learned dynamics at `(x, t)`.
pub fn eval_dynamics(
    dynamics: &NeuralDynamics,
    params: &FlatParams,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_len("state", dynamics.state_dim(), x.len())?;
    check_len("parameters", dynamics.param_len(), params.len())?;
    let mut e = Eval::new(&params.values);
    let y = dynamics.rhs(&mut e, &x.to_vec(), t);
    check_finite("dynamics", &y)?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn parameter_count_by_layer_arithmetic() {
        let spec = NetworkSpec::new(2, vec![32, 64, 32]);
        let per_net = (2 * 32 + 32) + (32 * 64 + 64) + (64 * 32 + 32) + (32 + 1);
        assert_eq!(spec.param_count(), 2 * per_net);
        assert_eq!(init_params(&spec, 0).len(), 2 * per_net);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = NetworkSpec::new(3, vec![5, 4]);
        let a = init_params(&spec, 7);
        let b = init_params(&spec, 7);
        assert_eq!(a, b);
        assert_ne!(a, init_params(&spec, 8));
        for net in &a.layout.networks {
            for blk in net {
                assert!(a.values[blk.bias..blk.bias + blk.rows].iter().all(|&v| v == 0.0));
                let bound = libm::sqrt(6.0 / (blk.rows + blk.cols) as f64);
                assert!(a.values[blk.weight..blk.weight + blk.rows * blk.cols]
                    .iter()
                    .all(|w| w.abs() <= bound));
            }
        }
    }

    #[test]
    fn zero_params_give_zero_field() {
        let spec = NetworkSpec::new(2, vec![4, 3]);
        let dyn_ = NeuralDynamics::new(spec.clone()).unwrap();
        let p = FlatParams::zeros(&spec);
        assert_eq!(eval_dynamics(&dyn_, &p, &[1.5, -2.0], 3.0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer() {
        let spec = NetworkSpec::new(1, vec![]);
        let dyn_ = NeuralDynamics::new(spec.clone()).unwrap();
        let p = FlatParams::from_values(&spec, vec![-0.7, 0.25]).unwrap();
        let y = eval_dynamics(&dyn_, &p, &[2.0], 0.0).unwrap();
        assert_eq!(y, [-0.7 * 2.0 + 0.25]);
    }

    #[test]
    fn time_input_matters_only_when_enabled() {
        let spec = NetworkSpec::new(2, vec![4]);
        let p = init_params(&spec, 3);
        let d = NeuralDynamics::new(spec.clone()).unwrap();
        let x = [0.3, -0.4];
        assert_eq!(
            eval_dynamics(&d, &p, &x, 0.0).unwrap(),
            eval_dynamics(&d, &p, &x, 17.0).unwrap()
        );

        let spec_t = spec.with_time_input(true);
        let p = init_params(&spec_t, 3);
        let d = NeuralDynamics::new(spec_t).unwrap();
        assert_ne!(
            eval_dynamics(&d, &p, &x, 0.0).unwrap(),
            eval_dynamics(&d, &p, &x, 1.0).unwrap()
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NeuralDynamics::new(NetworkSpec::new(0, vec![3])).is_err());
        assert!(NeuralDynamics::new(NetworkSpec::new(2, vec![3, 0])).is_err());
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let spec = NetworkSpec::new(2, vec![3, 2]).with_time_input(true);
        let p = init_params(&spec, 11);
        let back = FlatParams::flatten(&spec, &p.unflatten()).unwrap();
        assert_eq!(back, p);
    }
}
