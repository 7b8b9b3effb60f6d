//! Training loops (multiple and single shooting) and evaluation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::integrator::Dynamics;
use crate::loss::{interval_loss, lagrangian_grads, single_shooting_grad};
use crate::network::{init_params, NetworkSpec, NeuralDynamics};
use crate::optimizer::{adam_update, lr_at, AdamConfig, AdamState, DecayRule, LrSchedule, ShootingAdam};
use crate::shooting::{
    condensed_step, direct_step, jacobians_by_vjp, linearized_defect, CgOptions, Linearization,
    ShootingGrid, ShootingVariables, SolverPath, DEFAULT_DENSE_CAP,
};
use crate::systems::{rollout, DataSplit, MeasurementSet, System, SystemSpec};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub intervals: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Epoch budget.
    pub epochs: usize,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    pub cg: CgOptions,
    /// RK4 steps per measurement period.
    pub substeps: usize,
    pub solver: SolverPath,
    /// Early stop once `Φ < stop_phi` and `‖G‖∞ < stop_g`.
    pub stop_phi: f64,
    pub stop_g: f64,
    pub time_input: bool,
    pub freeze_multipliers: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            intervals: 20,
            hidden: alloc::vec![32, 64, 32],
            seed: 0,
            epochs: 400,
            lr: LrSchedule::constant(0.01),
            adam: AdamConfig::default(),
            cg: CgOptions::default(),
            substeps: 10,
            solver: SolverPath::Auto,
            stop_phi: 1e-5,
            stop_g: 1e-3,
            time_input: false,
            freeze_multipliers: false,
        }
    }
}

/// Learning-rate schedule of a system's reference setup: the plateau rule,
/// except where it was found to diverge or stall at the default seed.
pub fn reference_schedule(system: System, initial: f64) -> LrSchedule {
    match system {
        // A constant 0.01 diverges within ~150 epochs; three early halvings
        // reach a stable 0.00125, and a late one damps the Adam noise floor.
        System::LotkaVolterra => LrSchedule::new(initial, DecayRule::Epochs { at: alloc::vec![10, 20, 30, 400] }),
        System::FitzHughNagumo => LrSchedule::new(
            initial,
            DecayRule::Plateau {
                patience: 200,
                rel_improvement: 0.01,
            },
        ),
        _ => LrSchedule::plateau(initial),
    }
}

impl TrainConfig {
    /// Reference setup of a benchmark system.
    pub fn for_system(spec: &SystemSpec) -> Self {
        let s = &spec.setup;
        TrainConfig {
            intervals: s.intervals,
            hidden: s.hidden.clone(),
            epochs: s.epochs,
            lr: reference_schedule(spec.system, s.lr),
            time_input: spec.time_input(),
            ..TrainConfig::default()
        }
    }

    pub fn network_spec(&self, state_dim: usize) -> NetworkSpec {
        NetworkSpec::new(state_dim, self.hidden.clone()).with_time_input(self.time_input)
    }

    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.intervals == 0 || self.intervals + 1 > samples {
            return Err(Error::InvalidConfig(alloc::format!(
                "intervals must lie in 1..={}",
                samples.saturating_sub(1)
            )));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidConfig("substeps must be at least 1".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidConfig("adam needs betas in [0, 1) and eps > 0".into()));
        }
        if !(self.cg.tol > 0.0) {
            return Err(Error::InvalidConfig("cg tolerance must be positive".into()));
        }
        self.lr.validate()
    }
}

/// One row of the training log, taken before that epoch's update.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub phi: f64,
    pub g_inf: f64,
    pub lr: f64,
    /// `‖G_xΔx + G_pΔp + G‖∞` of the step taken; zero for single shooting.
    pub defect: f64,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "status"))]
pub enum RunStatus {
    Converged { epoch: usize },
    BudgetExhausted,
    /// Numerical failure; the returned variables are the last finite ones.
    Aborted { epoch: usize, message: String },
}

impl RunStatus {
    pub fn is_aborted(&self) -> bool {
        matches!(self, RunStatus::Aborted { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsOutcome {
    pub vars: ShootingVariables,
    pub history: Vec<EpochRecord>,
    pub status: RunStatus,
    /// `Φ` and `‖G‖∞` at the returned variables; `None` if they cannot be
    /// evaluated.
    pub final_phi: Option<f64>,
    pub final_g_inf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsOutcome {
    pub params: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub status: RunStatus,
    pub final_phi: Option<f64>,
}

/// `x_k` set to the measurement at each interval's start, `λ = 0`.
pub fn init_shooting_vars(grid: &ShootingGrid, train: &MeasurementSet, params: Vec<f64>) -> Result<ShootingVariables> {
    let m = grid.m();
    let n = train.state_dim;
    check_len("measurement count", grid.boundaries()[m] + 1, train.len())?;
    let states = (0..m).flat_map(|k| train.row(grid.boundaries()[k]).iter().copied()).collect();
    ShootingVariables::new(m, n, states, alloc::vec![0.0; m * n], params)
}

fn grid_for(config: &TrainConfig, train: &MeasurementSet, intervals: usize) -> Result<ShootingGrid> {
    config.validate(train.len())?;
    ShootingGrid::split(&train.times, intervals, config.substeps)
}

/// `(Φ, ‖G‖∞)` at `vars`.
fn measure<D: Dynamics>(
    f: &D,
    grid: &ShootingGrid,
    vars: &ShootingVariables,
    train: &MeasurementSet,
) -> Result<(f64, f64)> {
    let lin = Linearization::new(f, grid, vars)?;
    let phi = (0..grid.m()).map(|k| interval_loss(&lin, k, train)).sum();
    let g = lin.residual(train.row(0))?;
    Ok((phi, g.norm_inf()))
}

struct EpochResult {
    record: EpochRecord,
    converged: bool,
    step: Option<crate::shooting::CondensedStep>,
}

/// The anchor rows of `G_x` are the identity and those of `G_p` are zero,
/// so `Δx₁ = -G₁` exactly. Solver round-off there would otherwise be blown
/// up by Adam's normalization, since the true gradient is zero once `x₁`
/// sits on the anchor.
fn pin_anchor(step: &mut crate::shooting::CondensedStep, g: &[f64], n: usize) {
    for (d, gi) in step.dx[..n].iter_mut().zip(&g[..n]) {
        *d = -gi;
    }
}

fn ms_epoch<D: Dynamics>(
    f: &D,
    grid: &ShootingGrid,
    vars: &ShootingVariables,
    train: &MeasurementSet,
    config: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<EpochResult> {
    let mut lin = Linearization::new(f, grid, vars)?;
    let res = lin.residual(train.row(0))?;
    let grads = lagrangian_grads(&mut lin, train)?;
    let g_inf = res.norm_inf();
    let mut record = EpochRecord {
        epoch,
        phi: grads.phi,
        g_inf,
        lr,
        defect: 0.0,
        cg_iterations: 0,
    };
    if grads.phi < config.stop_phi && g_inf < config.stop_g {
        return Ok(EpochResult {
            record,
            converged: true,
            step: None,
        });
    }
    let step = if config.solver.uses_dense(res.g.len(), vars.params.len()) {
        let jac = jacobians_by_vjp(&mut lin, DEFAULT_DENSE_CAP)?;
        let mut step = direct_step(&jac, &res.g, &grads.l_x, &grads.l_p)?;
        pin_anchor(&mut step, &res.g, train.state_dim);
        record.defect = jac.defect(&step, &res.g);
        step
    } else {
        let mut step = condensed_step(&mut lin, &res.g, &grads.l_x, &grads.l_p, config.cg)?;
        pin_anchor(&mut step, &res.g, train.state_dim);
        record.defect = linearized_defect(&lin, &step, &res.g)?;
        record.cg_iterations = step.cg_iterations;
        step
    };
    Ok(EpochResult {
        record,
        converged: false,
        step: Some(step),
    })
}

/// Multiple-shooting training of any parameterized field.
pub fn train_ms_with<D: Dynamics>(
    f: &D,
    params: Vec<f64>,
    config: &TrainConfig,
    train: &MeasurementSet,
) -> Result<MsOutcome> {
    let grid = grid_for(config, train, config.intervals)?;
    let mut vars = init_shooting_vars(&grid, train, params)?;
    let mut adam = ShootingAdam::new(vars.states.len(), vars.params.len(), config.adam);
    adam.freeze_multipliers = config.freeze_multipliers;
    let mut schedule = config.lr.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut status = RunStatus::BudgetExhausted;

    for epoch in 0..config.epochs {
        let lr = lr_at(&schedule, epoch);
        let result = ms_epoch(f, &grid, &vars, train, config, epoch, lr).and_then(|r| {
            if let Some(step) = &r.step {
                adam_update(&mut adam, &mut vars, &step.dx, &step.dp, &step.dlambda, lr)?;
            }
            Ok(r)
        });
        match result {
            Ok(r) => {
                schedule.observe(epoch, r.record.phi);
                history.push(r.record);
                if r.converged {
                    status = RunStatus::Converged { epoch };
                    break;
                }
            }
            Err(e) => {
                status = RunStatus::Aborted {
                    epoch,
                    message: e.to_string(),
                };
                break;
            }
        }
    }
    let (final_phi, final_g_inf) = match measure(f, &grid, &vars, train) {
        Ok((p, g)) => (Some(p), Some(g)),
        Err(_) => (None, None),
    };
    Ok(MsOutcome {
        vars,
        history,
        status,
        final_phi,
        final_g_inf,
    })
}

/// Single-shooting baseline: one trajectory from the first measurement,
/// plain reverse-mode gradient, Adam on the parameters only.
pub fn train_ss_with<D: Dynamics>(
    f: &D,
    params: Vec<f64>,
    config: &TrainConfig,
    train: &MeasurementSet,
) -> Result<SsOutcome> {
    let grid = grid_for(config, train, 1)?;
    let plan = grid.plan(0);
    let x0 = train.row(0);
    check_len("parameters", f.param_len(), params.len())?;
    let mut params = params;
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut schedule = config.lr.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut status = RunStatus::BudgetExhausted;

    for epoch in 0..config.epochs {
        let lr = lr_at(&schedule, epoch);
        let result = single_shooting_grad(f, &params, x0, plan, train).and_then(|(phi, grad)| {
            if phi < config.stop_phi {
                return Ok((phi, true));
            }
            adam.update(&mut params, &grad, lr)?;
            Ok((phi, false))
        });
        match result {
            Ok((phi, converged)) => {
                schedule.observe(epoch, phi);
                history.push(EpochRecord {
                    epoch,
                    phi,
                    g_inf: 0.0,
                    lr,
                    defect: 0.0,
                    cg_iterations: 0,
                });
                if converged {
                    status = RunStatus::Converged { epoch };
                    break;
                }
            }
            Err(e) => {
                status = RunStatus::Aborted {
                    epoch,
                    message: e.to_string(),
                };
                break;
            }
        }
    }
    let final_phi = single_shooting_grad(f, &params, x0, plan, train).ok().map(|(p, _)| p);
    Ok(SsOutcome {
        params,
        history,
        status,
        final_phi,
    })
}

/// Builds the learned field and its seeded initial parameters.
pub fn network_for(config: &TrainConfig, state_dim: usize) -> Result<(NeuralDynamics, Vec<f64>)> {
    let spec = config.network_spec(state_dim);
    let dynamics = NeuralDynamics::new(spec.clone())?;
    Ok((dynamics, init_params(&spec, config.seed).values))
}

pub fn train_ms(config: &TrainConfig, train: &MeasurementSet) -> Result<(NeuralDynamics, MsOutcome)> {
    let (f, p) = network_for(config, train.state_dim)?;
    let out = train_ms_with(&f, p, config, train)?;
    Ok((f, out))
}

pub fn train_ss(config: &TrainConfig, train: &MeasurementSet) -> Result<(NeuralDynamics, SsOutcome)> {
    let (f, p) = network_for(config, train.state_dim)?;
    let out = train_ss_with(&f, p, config, train)?;
    Ok((f, out))
}

/// Mean squared errors of a single-shooting rollout; `None` marks a window
/// whose rollout failed or whose data is unavailable.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    /// In the units of the data (standardized if it carries a scaler).
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub train_mse_original: Option<f64>,
    pub test_mse_original: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// Rollout states at every available sample, row-major.
    pub trajectory: Vec<f64>,
    /// Number of rows in `trajectory`.
    pub rows: usize,
}

fn window_mse(pred: &[f64], data: &MeasurementSet, first_row: usize) -> f64 {
    let n = data.state_dim;
    let sum: f64 = (0..data.len())
        .map(|j| {
            let p = &pred[(first_row + j) * n..(first_row + j + 1) * n];
            p.iter().zip(data.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum();
    sum / (data.len() * n) as f64
}

fn unscale_rows(pred: &[f64], data: &MeasurementSet) -> Vec<f64> {
    let Some(s) = &data.scaler else {
        return pred.to_vec();
    };
    let n = data.state_dim;
    pred.iter()
        .enumerate()
        .map(|(i, v)| v * s.std[i % n] + s.mean[i % n])
        .collect()
}

/// Single-shooting rollout from the first training measurement across the
/// training and test windows.
pub fn evaluate<D: Dynamics>(f: &D, params: &[f64], split: &DataSplit, substeps: usize) -> Evaluation {
    let train = &split.train;
    let n = train.state_dim;
    let x0 = train.row(0);
    let period = train.times[1] - train.times[0];
    let t0 = train.times[0];
    let train_rows = train.len();
    let total = train_rows + split.test.as_ref().map_or(0, |t| t.len());

    let (traj, rows) = match rollout(f, params, x0, t0, period, total, substeps) {
        Ok(t) => (t, total),
        Err(_) => match rollout(f, params, x0, t0, period, train_rows, substeps) {
            Ok(t) => (t, train_rows),
            Err(_) => (Vec::new(), 0),
        },
    };

    let mut metrics = Metrics::default();
    if rows >= train_rows && rows > 0 {
        metrics.train_mse = Some(window_mse(&traj, train, 0));
        let orig = unscale_rows(&traj[..train_rows * n], train);
        metrics.train_mse_original = Some(window_mse(&orig, &train.unscaled(), 0));
    }
    if let Some(test) = &split.test {
        if rows == total {
            metrics.test_mse = Some(window_mse(&traj, test, train_rows));
            let orig = unscale_rows(&traj, test);
            metrics.test_mse_original = Some(window_mse(&orig, &test.unscaled(), train_rows));
        }
    }
    Evaluation {
        metrics,
        trajectory: traj,
        rows,
    }
}
