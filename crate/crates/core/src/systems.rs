//! Benchmark systems: ground-truth vector fields, initial conditions,
//! horizons and sampling periods, plus data generation, standardization and
//! the train/test split.

use alloc::vec;
use alloc::vec::Vec;

use crate::ad::{Engine, Eval};
use crate::error::{check_len, Error, Result};
use crate::integrator::{integrate_with, rk4_step_with, Dynamics, IntervalPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum System {
    LotkaVolterra,
    Goodwin,
    VanDerPol,
    FitzHughNagumo,
    Brusselator,
    Zebrafish,
    Oregonator,
    Mhd,
    Km,
    Calcium,
}

impl System {
    pub const ALL: [System; 10] = [
        System::LotkaVolterra,
        System::Goodwin,
        System::VanDerPol,
        System::FitzHughNagumo,
        System::Brusselator,
        System::Zebrafish,
        System::Oregonator,
        System::Mhd,
        System::Km,
        System::Calcium,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::LotkaVolterra => "lotka_volterra",
            System::Goodwin => "goodwin",
            System::VanDerPol => "van_der_pol",
            System::FitzHughNagumo => "fitzhugh_nagumo",
            System::Brusselator => "brusselator",
            System::Zebrafish => "zebrafish",
            System::Oregonator => "oregonator",
            System::Mhd => "mhd",
            System::Km => "km",
            System::Calcium => "calcium",
        }
    }

    pub fn from_name(name: &str) -> Option<System> {
        System::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl core::fmt::Display for System {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Switches between printed and conventional forms of two systems.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Variants {
    /// Van der Pol with `dx/dt = x` instead of `dx/dt = y`.
    pub vdp_as_printed: bool,
    /// Oregonator with `(x - q)/(x + q)` instead of `(x - q)/(z + q)`.
    pub oregonator_standard: bool,
}

/// Reference training setup for a system.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchmarkSetup {
    pub hidden: Vec<usize>,
    pub intervals: usize,
    pub epochs: usize,
    pub lr: f64,
    /// The reference run lowered its rate during training. Informational;
    /// the schedule actually used comes from `trainer::reference_schedule`.
    pub decayed_lr: bool,
    pub scaled: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SystemSpec {
    pub system: System,
    pub state_dim: usize,
    pub x0: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
    pub sample_period: f64,
    /// `(τ1, τ2)` for the delayed system.
    pub delays: Option<(f64, f64)>,
    /// Whether the published benchmark table lists a test loss.
    pub reports_test: bool,
    pub variants: Variants,
    pub setup: BenchmarkSetup,
}

fn setup(hidden: &[usize], intervals: usize, epochs: usize, decayed_lr: bool, scaled: bool) -> BenchmarkSetup {
    BenchmarkSetup {
        hidden: hidden.to_vec(),
        intervals,
        epochs,
        lr: 0.01,
        decayed_lr,
        scaled,
    }
}

impl SystemSpec {
    pub fn new(system: System, variants: Variants) -> Self {
        let (x0, t_end, period, setup): (&[f64], f64, f64, BenchmarkSetup) = match system {
            System::LotkaVolterra => (&[1.0, 1.0], 20.0, 0.1, setup(&[32, 64, 32], 20, 400, false, false)),
            System::Goodwin => (
                &[0.3617, 0.9137, 1.3934],
                80.0,
                0.1,
                setup(&[32, 64, 32], 20, 420, false, false),
            ),
            System::VanDerPol => (&[1.0, 1.0], 20.0, 0.1, setup(&[32, 64, 64], 20, 2500, true, false)),
            System::FitzHughNagumo => (&[-1.0, 1.0], 20.0, 0.1, setup(&[32], 20, 700, false, true)),
            System::Brusselator => (
                &[2.0, 1.0],
                20.0,
                0.1,
                setup(&[32, 64, 64, 128], 40, 850, false, false),
            ),
            System::Zebrafish => (
                &[-20.5693, 28.1786],
                500.0,
                1.0,
                setup(&[32, 64, 32, 16], 100, 1900, true, true),
            ),
            System::Oregonator => (
                &[0.1, 0.1, 0.1],
                20.0,
                0.1,
                setup(&[32, 64, 64, 128], 20, 5000, true, true),
            ),
            System::Mhd => (
                &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
                10.0,
                0.1,
                setup(&[32, 64, 64], 20, 1700, true, true),
            ),
            System::Km => (&[5.0, 0.1, 1.0], 40.0, 0.1, setup(&[32, 64, 64], 20, 1500, true, true)),
            System::Calcium => (
                &[0.12, 0.31, 0.0058, 4.3],
                60.0,
                0.1,
                setup(&[32, 64, 128, 16], 20, 3000, true, true),
            ),
        };
        SystemSpec {
            system,
            state_dim: x0.len(),
            x0: x0.to_vec(),
            t_start: 0.0,
            t_end,
            sample_period: period,
            delays: (system == System::Km).then_some((1.0, 10.0)),
            reports_test: !matches!(system, System::Mhd | System::Km | System::Calcium),
            variants,
            setup,
        }
    }

    pub fn standard(system: System) -> Self {
        Self::new(system, Variants::default())
    }

    /// Samples over `[t_start, t_end]`, both ends included.
    pub fn sample_count(&self) -> usize {
        libm::round((self.t_end - self.t_start) / self.sample_period) as usize + 1
    }

    /// Whether the learned model takes time as an extra input.
    pub fn time_input(&self) -> bool {
        self.delays.is_some()
    }

    /// The vector field as a [`Dynamics`]; fails for delayed systems.
    pub fn ode(&self) -> Result<TrueDynamics<'_>> {
        if self.delays.is_some() {
            return Err(Error::DelayedSystem {
                system: self.system.name(),
            });
        }
        Ok(TrueDynamics { spec: self })
    }

    /// Denominators that must stay positive along ground-truth trajectories.
    fn domain_ok(&self, x: &[f64]) -> bool {
        match self.system {
            System::Oregonator => {
                let d = if self.variants.oregonator_standard { x[0] } else { x[2] };
                d + ORE_Q > 0.0
            }
            System::Calcium => {
                x[0] + CA_KM[0] > 0.0
                    && x[0] + CA_KM[1] > 0.0
                    && x[1] + CA_KM[2] > 0.0
                    && x[3] + CA_KM[3] > 0.0
                    && x[2] + CA_KM[4] > 0.0
                    && x[2] + CA_KM[5] > 0.0
            }
            _ => true,
        }
    }
}

const GW: [f64; 8] = [3.4884, 2.15, 0.0969, 0.0969, 0.0581, 0.0969, 10.0, 0.0775];
const ZF_A: [f64; 2] = [0.7934, 0.0411];
const ZF_P: [f64; 7] = [5.0, 2.86e-1, -5.095e-3, -3.748e-4, -1.255e-1, -5.919e-3, -5.737e-3];
const ORE_EPS: f64 = 0.1;
const ORE_F: f64 = 1.4;
const ORE_Q: f64 = 0.002;
const ORE_PHI: f64 = 0.1;
const MHD_NU: f64 = 0.0;
const MHD_MU: f64 = 0.0;
const CA_K: [f64; 11] = [
    0.09, 2.0, 1.27, 3.73, 1.27, 32.24, 2.0, 0.05, 13.58, 153.0, 4.85,
];
const CA_KM: [f64; 6] = [0.19, 0.73, 29.09, 2.67, 0.16, 0.05];

/// Ground-truth vector field of a non-delayed system.
#[derive(Debug, Clone, Copy)]
pub struct TrueDynamics<'a> {
    spec: &'a SystemSpec,
}

/// `s / (s + k)`
fn saturation<E: Engine>(e: &mut E, s: &E::Var, k: f64) -> E::Var {
    let den = e.shift(s, k);
    e.div(s, &den)
}

impl Dynamics for TrueDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    fn rhs<E: Engine>(&self, e: &mut E, s: &E::Var, _t: f64) -> E::Var {
        let c: Vec<E::Var> = (0..self.spec.state_dim).map(|i| e.component(s, i)).collect();
        let out: Vec<E::Var> = match self.spec.system {
            System::LotkaVolterra => {
                let (x, y) = (&c[0], &c[1]);
                let xy = e.mul(x, y);
                let dx = e.scale(x, 1.5);
                let dx = e.sub(&dx, &xy);
                let dy = e.sub(&xy, y);
                vec![dx, dy]
            }
            System::Goodwin => {
                let [a, big_a, b, alpha, beta, gamma, sigma, delta] = GW;
                let (x, y, z) = (&c[0], &c[1], &c[2]);
                let zs = e.powf(z, sigma);
                let den = e.shift(&zs, big_a);
                let num = e.constant(&[a]);
                let frac = e.div(&num, &den);
                let dx = e.axpy(&frac, -b, x);
                let ax = e.scale(x, alpha);
                let dy = e.axpy(&ax, -beta, y);
                let gy = e.scale(y, gamma);
                let dz = e.axpy(&gy, -delta, z);
                vec![dx, dy, dz]
            }
            System::VanDerPol => {
                let (x, y) = (&c[0], &c[1]);
                let dx = if self.spec.variants.vdp_as_printed {
                    x.clone()
                } else {
                    y.clone()
                };
                let x2 = e.mul(x, x);
                let damp = e.scale(&x2, -1.0);
                let damp = e.shift(&damp, 1.0);
                let dy = e.mul(&damp, y);
                let dy = e.scale(&dy, 0.5);
                let dy = e.sub(&dy, x);
                vec![dx, dy]
            }
            System::FitzHughNagumo => {
                let (a, b, cc) = (0.2, 0.2, 3.5);
                let (x, y) = (&c[0], &c[1]);
                let x3 = e.powf(x, 3.0);
                let inner = e.axpy(x, -1.0 / 3.0, &x3);
                let inner = e.add(&inner, y);
                let dx = e.scale(&inner, cc);
                let lin = e.axpy(x, b, y);
                let lin = e.shift(&lin, -a);
                let dy = e.scale(&lin, -1.0 / cc);
                vec![dx, dy]
            }
            System::Brusselator => {
                let (a, b, cc) = (0.8, 2.0, 0.8);
                let (x, y) = (&c[0], &c[1]);
                let x2 = e.mul(x, x);
                let x2y = e.mul(&x2, y);
                let dx = e.scale(x, -(b + 1.0));
                let dx = e.axpy(&dx, cc, &x2y);
                let dx = e.shift(&dx, a);
                let dy = e.scale(x, b);
                let dy = e.axpy(&dy, -cc, &x2y);
                vec![dx, dy]
            }
            System::Zebrafish => {
                let [p1, p2, p3, p4, p5, p6, p7] = ZF_P;
                let [a1, a2] = ZF_A;
                let (x, y) = (&c[0], &c[1]);
                let x2 = e.mul(x, x);
                let x3 = e.mul(&x2, x);
                let xy = e.mul(x, y);
                let dx = e.scale(x, p2);
                let dx = e.axpy(&dx, p3, &x2);
                let dx = e.axpy(&dx, p4, &x3);
                let dx = e.axpy(&dx, p5, y);
                let dx = e.axpy(&dx, p6, &xy);
                let dx = e.shift(&dx, p1);
                let dy = e.scale(x, a2);
                let dy = e.axpy(&dy, p7, y);
                let dy = e.shift(&dy, a1);
                vec![dx, dy]
            }
            System::Oregonator => {
                let (x, y, z) = (&c[0], &c[1], &c[2]);
                let logistic = e.mul(x, x);
                let logistic = e.sub(x, &logistic);
                let num = e.shift(x, -ORE_Q);
                let den = if self.spec.variants.oregonator_standard {
                    e.shift(x, ORE_Q)
                } else {
                    e.shift(z, ORE_Q)
                };
                let frac = e.div(&num, &den);
                let coupling = e.mul(y, &frac);
                let dx = e.axpy(&logistic, -ORE_F, &coupling);
                let dx = e.scale(&dx, 1.0 / ORE_EPS);
                let dy = e.sub(x, y);
                let dz = e.sub(y, z);
                let dz = e.scale(&dz, ORE_PHI);
                vec![dx, dy, dz]
            }
            System::Mhd => {
                let (x, y, z, w, a, b) = (&c[0], &c[1], &c[2], &c[3], &c[4], &c[5]);
                let pair = |e: &mut E, p: &E::Var, q: &E::Var, r: &E::Var, s: &E::Var| {
                    let pq = e.mul(p, q);
                    let rs = e.mul(r, s);
                    e.sub(&pq, &rs)
                };
                let q = [
                    pair(e, y, z, a, b),
                    pair(e, x, z, w, b),
                    pair(e, x, y, w, a),
                    pair(e, b, y, z, a),
                    pair(e, z, w, b, x),
                    pair(e, x, a, w, y),
                ];
                let coef = [4.0, -7.0, 3.0, 2.0, 5.0, 9.0];
                let damping = [
                    -2.0 * MHD_NU,
                    -5.0 * MHD_NU,
                    -9.0 * MHD_NU,
                    -2.0 * MHD_MU,
                    -5.0 * MHD_MU,
                    -9.0 * MHD_MU,
                ];
                (0..6)
                    .map(|i| {
                        let lin = e.scale(&c[i], damping[i]);
                        e.axpy(&lin, coef[i], &q[i])
                    })
                    .collect()
            }
            System::Calcium => {
                let k = CA_K;
                let km = CA_KM;
                let (x, y, z, w) = (&c[0], &c[1], &c[2], &c[3]);
                let sx1 = saturation(e, x, km[0]);
                let sx2 = saturation(e, x, km[1]);
                let sy3 = saturation(e, y, km[2]);
                let sw4 = saturation(e, w, km[3]);
                let sz5 = saturation(e, z, km[4]);
                let sz6 = saturation(e, z, km[5]);
                let y_sx1 = e.mul(y, &sx1);
                let z_sx2 = e.mul(z, &sx2);
                let dx = e.scale(x, k[1]);
                let dx = e.axpy(&dx, -k[2], &y_sx1);
                let dx = e.axpy(&dx, -k[3], &z_sx2);
                let dx = e.shift(&dx, k[0]);
                let dy = e.scale(x, k[4]);
                let dy = e.axpy(&dy, -k[5], &sy3);
                let yz = e.mul(y, z);
                let yzw = e.mul(&yz, &sw4);
                let dz = e.scale(&yzw, k[6]);
                let dz = e.axpy(&dz, k[7], y);
                let dz = e.axpy(&dz, k[8], x);
                let dz = e.axpy(&dz, -k[9], &sz5);
                let dz = e.axpy(&dz, -k[10], &sz6);
                let dw = e.scale(&yzw, -k[6]);
                let dw = e.axpy(&dw, k[10], &sz6);
                vec![dx, dy, dz, dw]
            }
            System::Km => unreachable!("delayed system has no plain ODE form"),
        };
        e.concat(&out)
    }
}

/// Past-state lookup for delayed systems.
pub type History<'a> = &'a dyn Fn(f64) -> Vec<f64>;

fn km_rhs(x: &[f64], t: f64, (tau1, tau2): (f64, f64), history: History<'_>) -> Vec<f64> {
    let y1 = history(t - tau1)[1];
    let y2 = history(t - tau2)[1];
    vec![-x[0] * y1 + y2, x[0] * y1 - x[1], x[1] - y2]
}

/// Closed-form right-hand side with the reference parameters.
pub fn rhs_eval(spec: &SystemSpec, x: &[f64], t: f64, history: Option<History<'_>>) -> Result<Vec<f64>> {
    check_len("state", spec.state_dim, x.len())?;
    match (spec.delays, history) {
        (Some(d), Some(h)) => Ok(km_rhs(x, t, d, h)),
        (Some(_), None) => Err(Error::DelayedSystem {
            system: spec.system.name(),
        }),
        (None, _) => {
            let mut e = Eval::default();
            Ok(spec.ode()?.rhs(&mut e, &x.to_vec(), t))
        }
    }
}

/// Per-state standardization.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Scaler {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }
}

/// Time grid and state samples, row-major `T × n`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeasurementSet {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub state_dim: usize,
    /// Present when `values` are standardized.
    pub scaler: Option<Scaler>,
}

impl MeasurementSet {
    pub fn new(times: Vec<f64>, values: Vec<f64>, state_dim: usize) -> Result<Self> {
        check_len("measurement values", times.len() * state_dim, values.len())?;
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("measurement times must be strictly increasing".into()));
        }
        Ok(MeasurementSet {
            times,
            values,
            state_dim,
            scaler: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Samples `range` as a new set, keeping the scaler.
    pub fn window(&self, range: core::ops::Range<usize>) -> MeasurementSet {
        let n = self.state_dim;
        MeasurementSet {
            times: self.times[range.clone()].to_vec(),
            values: self.values[range.start * n..range.end * n].to_vec(),
            state_dim: n,
            scaler: self.scaler.clone(),
        }
    }

    /// Values in original units.
    pub fn unscaled(&self) -> MeasurementSet {
        let Some(s) = &self.scaler else {
            return self.clone();
        };
        let mut out = self.clone();
        out.scaler = None;
        for row in out.values.chunks_exact_mut(self.state_dim) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * s.std[j] + s.mean[j];
            }
        }
        out
    }

    /// Standardizes with a given scaler; the set must be in original units.
    pub fn apply_scaler(&self, scaler: &Scaler) -> MeasurementSet {
        debug_assert!(self.scaler.is_none());
        let mut out = self.clone();
        for row in out.values.chunks_exact_mut(self.state_dim) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - scaler.mean[j]) / scaler.std[j];
            }
        }
        out.scaler = Some(scaler.clone());
        out
    }
}

/// Mean and population standard deviation per state; zero-variance states
/// get a unit scale (mean shift only).
pub fn fit_scaler(ms: &MeasurementSet) -> Result<Scaler> {
    if ms.len() < 2 {
        return Err(Error::InvalidConfig("scaling needs at least two samples".into()));
    }
    let n = ms.state_dim;
    let t = ms.len() as f64;
    let mut mean = vec![0.0; n];
    for i in 0..ms.len() {
        for (m, v) in mean.iter_mut().zip(ms.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; n];
    for i in 0..ms.len() {
        for j in 0..n {
            let d = ms.row(i)[j] - mean[j];
            var[j] += d * d;
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = libm::sqrt(v / t);
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(Scaler { mean, std })
}

/// Standardizes `ms` with statistics computed from `ms` itself.
pub fn scale(ms: &MeasurementSet) -> Result<MeasurementSet> {
    let base = ms.unscaled();
    let s = fit_scaler(&base)?;
    Ok(base.apply_scaler(&s))
}

/// Samples a trajectory of a non-delayed field every `period` for `samples`
/// points, with `substeps` RK4 steps per period.
pub fn rollout<D: Dynamics>(
    f: &D,
    params: &[f64],
    x0: &[f64],
    t_start: f64,
    period: f64,
    samples: usize,
    substeps: usize,
) -> Result<Vec<f64>> {
    check_len("initial state", f.state_dim(), x0.len())?;
    if samples < 2 {
        return Ok(x0.to_vec());
    }
    let steps = (samples - 1) * substeps;
    let plan = IntervalPlan::new(
        t_start,
        t_start + (samples - 1) as f64 * period,
        steps,
        (0..samples).map(|j| j * substeps).collect(),
    )?;
    let mut e = Eval::new(params);
    let (_, saved) = integrate_with(&mut e, f, &x0.to_vec(), &plan)?;
    Ok(saved.concat())
}

/// Failure of ground-truth generation partway through a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTrajectory {
    /// Samples produced before the failure.
    pub values: Vec<f64>,
    pub error: Error,
}

fn sample_times(spec: &SystemSpec, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|j| spec.t_start + j as f64 * spec.sample_period)
        .collect()
}

/// Integrates the reference system for `samples` points. On failure the
/// samples obtained so far are returned alongside the error.
fn reference_trajectory(
    spec: &SystemSpec,
    samples: usize,
    substeps: usize,
) -> core::result::Result<Vec<f64>, PartialTrajectory> {
    let n = spec.state_dim;
    let h = spec.sample_period / substeps as f64;
    let mut values = Vec::with_capacity(samples * n);
    values.extend_from_slice(&spec.x0);
    let fail = |values: Vec<f64>, step: usize| {
        let time = spec.t_start + step as f64 * h;
        let error = if spec.system == System::Oregonator || spec.system == System::Calcium {
            Error::DomainViolation {
                system: spec.system.name(),
                time,
            }
        } else {
            Error::non_finite_at("ground truth substep", step)
        };
        PartialTrajectory { values, error }
    };

    match spec.delays {
        None => {
            let f = spec.ode().expect("non-delayed");
            let mut e = Eval::default();
            let mut x = spec.x0.clone();
            for j in 1..samples {
                for i in 0..substeps {
                    let step = (j - 1) * substeps + i;
                    x = rk4_step_with(&mut e, &f, &x, spec.t_start + step as f64 * h, h);
                    if !x.iter().all(|v| v.is_finite()) || !spec.domain_ok(&x) {
                        return Err(fail(values, step));
                    }
                }
                values.extend_from_slice(&x);
            }
            Ok(values)
        }
        Some(delays) => {
            // every substep state is kept for the delayed lookups
            let mut path: Vec<f64> = spec.x0.clone();
            let t0 = spec.t_start;
            let x0 = spec.x0.clone();
            for j in 1..samples {
                for i in 0..substeps {
                    let step = (j - 1) * substeps + i;
                    let t = t0 + step as f64 * h;
                    let x = path[step * n..(step + 1) * n].to_vec();
                    let lookup = |s: f64| -> Vec<f64> {
                        if s <= t0 {
                            return x0.clone();
                        }
                        let pos = (s - t0) / h;
                        let lo = (libm::floor(pos) as usize).min(step);
                        let hi = (lo + 1).min(step);
                        let w = (pos - lo as f64).clamp(0.0, 1.0);
                        (0..n)
                            .map(|k| (1.0 - w) * path[lo * n + k] + w * path[hi * n + k])
                            .collect()
                    };
                    let k1 = km_rhs(&x, t, delays, &lookup);
                    let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect();
                    let k2 = km_rhs(&x2, t + 0.5 * h, delays, &lookup);
                    let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect();
                    let k3 = km_rhs(&x3, t + 0.5 * h, delays, &lookup);
                    let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, b)| a + h * b).collect();
                    let k4 = km_rhs(&x4, t + h, delays, &lookup);
                    let next: Vec<f64> = (0..n)
                        .map(|k| x[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]))
                        .collect();
                    if !next.iter().all(|v| v.is_finite()) {
                        return Err(fail(values, step));
                    }
                    path.extend_from_slice(&next);
                }
                let last = path.len() - n;
                values.extend_from_slice(&path[last..]);
            }
            Ok(values)
        }
    }
}

/// Ground-truth samples over the system's printed horizon.
pub fn generate_data(spec: &SystemSpec, substeps_per_sample: usize) -> Result<MeasurementSet> {
    let samples = spec.sample_count();
    let values = reference_trajectory(spec, samples, substeps_per_sample).map_err(|p| p.error)?;
    MeasurementSet::new(sample_times(spec, samples), values, spec.state_dim)
}

/// Training and test windows in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    /// `[t_start, t_end]`
    pub train: MeasurementSet,
    /// `(t_end, 2 t_end - t_start]`, absent when the reference trajectory
    /// fails on the continuation.
    pub test: Option<MeasurementSet>,
}

impl DataSplit {
    /// Standardizes both windows with statistics of the training window.
    pub fn scaled(&self) -> Result<DataSplit> {
        let s = fit_scaler(&self.train)?;
        Ok(DataSplit {
            train: self.train.apply_scaler(&s),
            test: self.test.as_ref().map(|t| t.apply_scaler(&s)),
        })
    }
}

/// Generates the training horizon and its equal-length continuation in one
/// reference integration.
pub fn train_test_split(spec: &SystemSpec, substeps_per_sample: usize) -> Result<DataSplit> {
    let n_train = spec.sample_count();
    let total = 2 * n_train - 1;
    let n = spec.state_dim;
    let times = sample_times(spec, total);
    let (values, complete) = match reference_trajectory(spec, total, substeps_per_sample) {
        Ok(v) => (v, true),
        Err(p) if p.values.len() >= n_train * n => (p.values, false),
        Err(p) => return Err(p.error),
    };
    let train = MeasurementSet::new(times[..n_train].to_vec(), values[..n_train * n].to_vec(), n)?;
    let test = if complete {
        Some(MeasurementSet::new(
            times[n_train..].to_vec(),
            values[n_train * n..].to_vec(),
            n,
        )?)
    } else {
        None
    };
    Ok(DataSplit { train, test })
}

/// A field expressed in standardized coordinates `z = (x - mean) / std`:
/// `dz/dt = f(mean + std ∘ z) / std`.
pub struct ScaledDynamics<D> {
    inner: D,
    scaler: Scaler,
}

impl<D: Dynamics> ScaledDynamics<D> {
    pub fn new(inner: D, scaler: Scaler) -> Self {
        ScaledDynamics { inner, scaler }
    }
}

impl<D: Dynamics> Dynamics for ScaledDynamics<D> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn param_len(&self) -> usize {
        self.inner.param_len()
    }

    fn rhs<E: Engine>(&self, e: &mut E, z: &E::Var, t: f64) -> E::Var {
        let s = e.constant(&self.scaler.std);
        let m = e.constant(&self.scaler.mean);
        let x = e.mul(z, &s);
        let x = e.add(&x, &m);
        let fx = self.inner.rhs(e, &x, t);
        e.div(&fx, &s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for s in System::ALL {
            assert_eq!(System::from_name(s.name()), Some(s));
        }
        assert_eq!(System::from_name("nope"), None);
    }

    #[test]
    fn lotka_volterra_at_unit_state() {
        let spec = SystemSpec::standard(System::LotkaVolterra);
        assert_eq!(rhs_eval(&spec, &[1.0, 1.0], 0.0, None).unwrap(), [0.5, 0.0]);
    }

    #[test]
    fn goodwin_at_initial_state() {
        let spec = SystemSpec::standard(System::Goodwin);
        let r = rhs_eval(&spec, &spec.x0, 0.0, None).unwrap();
        assert!(r.iter().all(|v| v.is_finite()));
        assert!((r[1] - (0.0969 * 0.3617 - 0.0581 * 0.9137)).abs() < 1e-15);
        let expect_x = 3.4884 / (2.15 + libm::pow(1.3934, 10.0)) - 0.0969 * 0.3617;
        assert!((r[0] - expect_x).abs() < 1e-14);
    }

    #[test]
    fn mhd_origin_is_fixed_point() {
        let spec = SystemSpec::standard(System::Mhd);
        assert_eq!(rhs_eval(&spec, &[0.0; 6], 0.0, None).unwrap(), [0.0; 6]);
    }

    #[test]
    fn van_der_pol_variants() {
        let std = SystemSpec::standard(System::VanDerPol);
        let printed = SystemSpec::new(
            System::VanDerPol,
            Variants {
                vdp_as_printed: true,
                ..Variants::default()
            },
        );
        assert_eq!(rhs_eval(&std, &[2.0, 3.0], 0.0, None).unwrap()[0], 3.0);
        assert_eq!(rhs_eval(&printed, &[2.0, 3.0], 0.0, None).unwrap()[0], 2.0);
        // dy = 0.5 (1 - 4) 3 - 2
        assert_eq!(rhs_eval(&std, &[2.0, 3.0], 0.0, None).unwrap()[1], -6.5);
    }

    #[test]
    fn oregonator_variants() {
        let x = [0.3, 0.2, 0.5];
        let printed = rhs_eval(&SystemSpec::standard(System::Oregonator), &x, 0.0, None).unwrap();
        let expect = (0.3 * 0.7 - 1.4 * 0.2 * (0.3 - 0.002) / (0.5 + 0.002)) / 0.1;
        assert!((printed[0] - expect).abs() < 1e-13);
        let std = SystemSpec::new(
            System::Oregonator,
            Variants {
                oregonator_standard: true,
                ..Variants::default()
            },
        );
        let r = rhs_eval(&std, &x, 0.0, None).unwrap();
        let expect = (0.3 * 0.7 - 1.4 * 0.2 * (0.3 - 0.002) / (0.3 + 0.002)) / 0.1;
        assert!((r[0] - expect).abs() < 1e-13);
    }

    #[test]
    fn delayed_system_needs_history() {
        let spec = SystemSpec::standard(System::Km);
        assert!(rhs_eval(&spec, &spec.x0, 0.0, None).is_err());
        let hist = |_: f64| vec![5.0, 0.1, 1.0];
        let r = rhs_eval(&spec, &spec.x0, 0.0, Some(&hist)).unwrap();
        assert_eq!(r, [-5.0 * 0.1 + 0.1, 5.0 * 0.1 - 0.1, 0.1 - 0.1]);
        assert!(spec.ode().is_err());
    }

    #[test]
    fn sample_counts() {
        assert_eq!(SystemSpec::standard(System::LotkaVolterra).sample_count(), 201);
        assert_eq!(SystemSpec::standard(System::Zebrafish).sample_count(), 501);
        assert_eq!(SystemSpec::standard(System::Goodwin).sample_count(), 801);
    }

    #[test]
    fn constant_state_scales_by_one() {
        let ms = MeasurementSet::new(vec![0.0, 1.0, 2.0], vec![3.0, 1.0, 3.0, 2.0, 3.0, 3.0], 2).unwrap();
        let s = scale(&ms).unwrap();
        let sc = s.scaler.as_ref().unwrap();
        assert_eq!(sc.std[0], 1.0);
        assert_eq!(sc.mean[0], 3.0);
        assert_eq!(s.row(1)[0], 0.0);
        assert!(scale(&ms.window(0..1)).is_err());
    }
}
