#![allow(dead_code)]

use msnode_core::ad::Engine;
use msnode_core::integrator::Dynamics;
use msnode_core::network::{init_params, NetworkSpec, NeuralDynamics};
use msnode_core::shooting::{ShootingGrid, ShootingVariables};
use msnode_core::systems::MeasurementSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `f ≡ 0` with no parameters.
pub struct ZeroField(pub usize);

impl Dynamics for ZeroField {
    fn state_dim(&self) -> usize {
        self.0
    }
    fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, _t: f64) -> E::Var {
        e.scale(x, 0.0)
    }
}

/// Scalar `dx/dt = x`.
pub struct Growth;

impl Dynamics for Growth {
    fn state_dim(&self) -> usize {
        1
    }
    fn rhs<E: Engine>(&self, _e: &mut E, x: &E::Var, _t: f64) -> E::Var {
        x.clone()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖a - b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let d = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let s = b.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    d / s.max(floor)
}

/// Relative mismatch of a dot-product identity, scaled by Cauchy-Schwarz.
pub fn dot_identity_err(w: &[f64], av: &[f64], atw: &[f64], v: &[f64]) -> f64 {
    let scale = (norm2(w) * norm2(av)).max(norm2(atw) * norm2(v)).max(1e-300);
    (dot(w, av) - dot(atw, v)).abs() / scale
}

/// A random small multiple-shooting problem on a neural field.
pub struct Problem {
    pub f: NeuralDynamics,
    pub grid: ShootingGrid,
    pub vars: ShootingVariables,
    pub data: MeasurementSet,
    pub rng: ChaCha8Rng,
}

impl Problem {
    pub fn new(m: usize, n: usize, hidden: Vec<usize>, time_input: bool, seed: u64) -> Problem {
        let mut rng = rng(seed);
        let spec = NetworkSpec::new(n, hidden).with_time_input(time_input);
        let f = NeuralDynamics::new(spec.clone()).unwrap();
        let mut params = init_params(&spec, seed).values;
        for p in &mut params {
            *p *= 1.0 + 0.5 * rng.random_range(-1.0..1.0);
        }
        let samples = 2 * m + 1 + (seed as usize % 3);
        let times: Vec<f64> = (0..samples).map(|i| 0.1 * i as f64).collect();
        let grid = ShootingGrid::split(&times, m, 3).unwrap();
        let values = random_vec(&mut rng, samples * n);
        let data = MeasurementSet::new(times, values, n).unwrap();
        let states = random_vec(&mut rng, m * n);
        let multipliers: Vec<f64> = random_vec(&mut rng, m * n).iter().map(|v| 0.5 * v).collect();
        let vars = ShootingVariables::new(m, n, states, multipliers, params).unwrap();
        Problem {
            f,
            grid,
            vars,
            data,
            rng,
        }
    }

    pub fn vec(&mut self, len: usize) -> Vec<f64> {
        random_vec(&mut self.rng, len)
    }

    pub fn mn(&self) -> usize {
        self.vars.states.len()
    }

    pub fn p(&self) -> usize {
        self.vars.params.len()
    }
}

/// `dx/dt = x ∘ x`; blows up in finite time from positive states.
pub struct Quadratic(pub usize);

impl Dynamics for Quadratic {
    fn state_dim(&self) -> usize {
        self.0
    }
    fn rhs<E: Engine>(&self, e: &mut E, x: &E::Var, _t: f64) -> E::Var {
        e.mul(x, x)
    }
}
