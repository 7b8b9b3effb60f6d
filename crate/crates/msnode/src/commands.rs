//! The work behind each subcommand, independent of argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use msnode_core::network::NeuralDynamics;
use msnode_core::shooting::{Linearization, ShootingGrid, ShootingVariables};
use msnode_core::systems::{DataSplit, MeasurementSet, SystemSpec};
use msnode_core::trainer::{evaluate, train_ms, train_ss, Evaluation, Metrics, RunStatus};

use crate::config::RunConfig;
use crate::dataset;
use crate::plot::{column, state_plot, Series};
use crate::report::{write_history, Checkpoint, MethodReport, RunReport};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    PropertyFailure = 1,
    Usage = 2,
    NumericalAbort = 3,
}

/// Maps an error to its exit code: configuration problems are usage
/// errors, failures inside the numerics are aborts.
pub fn exit_for(err: &anyhow::Error) -> Exit {
    if err.chain().any(|e| e.is::<msnode_core::Error>()) {
        Exit::NumericalAbort
    } else {
        Exit::Usage
    }
}

pub const CONFIG_ECHO: &str = "config.conf";
pub const REPORT: &str = "report.json";
pub const HISTORY: &str = "history.csv";
pub const PARAMS: &str = "params.json";
pub const SS_HISTORY: &str = "ss_history.csv";
pub const SS_PARAMS: &str = "ss_params.json";
pub const VARIABLES: &str = "variables.json";
pub const EVALUATION: &str = "evaluation.json";
pub const DATA_DIR: &str = "data";

/// Writes the reference data of `spec` into `dir`.
pub fn generate(spec: &SystemSpec, substeps: usize, dir: &Path) -> Result<dataset::DatasetFiles> {
    Ok(dataset::generate(spec, substeps, dir)?.1)
}

/// The split the models are trained on: standardized when configured.
pub fn training_split(cfg: &RunConfig, split: &DataSplit) -> Result<DataSplit> {
    Ok(if cfg.scale { split.scaled()? } else { split.clone() })
}

/// Trains the configured models and writes the run directory. Returns the
/// report even when training aborted; the status records it.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let conf = cfg.to_conf_string();
    fs::write(out.join(CONFIG_ECHO), &conf)?;

    let spec = cfg.spec();
    let (raw, _) = dataset::generate(&spec, cfg.data_substeps, &out.join(DATA_DIR))?;
    let split = training_split(cfg, &raw)?;
    cfg.train.validate(split.train.len())?;

    let (f, ms) = train_ms(&cfg.train, &split.train)?;
    let ms_eval = evaluate(&f, &ms.vars.params, &split, cfg.train.substeps);
    write_history(&out.join(HISTORY), &ms.history)?;
    Checkpoint {
        network: f.spec().clone(),
        values: ms.vars.params.clone(),
    }
    .write(&out.join(PARAMS))?;
    fs::write(out.join(VARIABLES), serde_json::to_string(&ms.vars)?)?;
    let ms_report = MethodReport {
        method: "multiple_shooting".into(),
        epochs_run: ms.history.len(),
        status: ms.status,
        final_phi: ms.final_phi,
        final_g_inf: ms.final_g_inf,
        metrics: ms_eval.metrics.clone(),
        history: ms.history,
    };

    let mut ss_eval = None;
    let ss_report = if cfg.baseline {
        let (_, ss) = train_ss(&cfg.train, &split.train)?;
        let eval = evaluate(&f, &ss.params, &split, cfg.train.substeps);
        write_history(&out.join(SS_HISTORY), &ss.history)?;
        Checkpoint {
            network: f.spec().clone(),
            values: ss.params.clone(),
        }
        .write(&out.join(SS_PARAMS))?;
        let report = MethodReport {
            method: "single_shooting".into(),
            epochs_run: ss.history.len(),
            status: ss.status,
            final_phi: ss.final_phi,
            final_g_inf: None,
            metrics: eval.metrics.clone(),
            history: ss.history,
        };
        ss_eval = Some(eval);
        Some(report)
    } else {
        None
    };

    write_plots(out, &split, &ms_eval, ss_eval.as_ref())?;
    let report = RunReport {
        system: spec.system.name().into(),
        param_count: f.spec().param_count(),
        multiple_shooting: ms_report,
        single_shooting: ss_report,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: conf,
    };
    report.write(&out.join(REPORT))?;
    Ok(report)
}

fn unscale(rows: &[f64], data: &MeasurementSet) -> Vec<f64> {
    match &data.scaler {
        None => rows.to_vec(),
        Some(s) => {
            let n = data.state_dim;
            rows.iter().enumerate().map(|(i, v)| v * s.std[i % n] + s.mean[i % n]).collect()
        }
    }
}

/// `state_<i>.svg` per state in original units: measurements, both
/// rollouts and the end of the training window.
pub fn write_plots(out: &Path, split: &DataSplit, ms: &Evaluation, ss: Option<&Evaluation>) -> Result<()> {
    let train = split.train.unscaled();
    let n = train.state_dim;
    let mut times = train.times.clone();
    let mut values = train.values.clone();
    if let Some(test) = &split.test {
        let test = test.unscaled();
        times.extend_from_slice(&test.times);
        values.extend_from_slice(&test.values);
    }
    let ms_rows = unscale(&ms.trajectory, &split.train);
    let ss_rows = ss.map(|e| (unscale(&e.trajectory, &split.train), e.rows));
    let divider = train.times.last().copied();
    for i in 0..n {
        let mut series = vec![
            Series {
                label: "measurements",
                color: "#222222",
                dashed: false,
                points: true,
                times: &times,
                values: column(&values, n, i),
            },
            Series {
                label: "multiple shooting",
                color: "#1f77b4",
                dashed: false,
                points: false,
                times: &times[..ms.rows],
                values: column(&ms_rows, n, i),
            },
        ];
        if let Some((rows, count)) = &ss_rows {
            series.push(Series {
                label: "single shooting",
                color: "#d62728",
                dashed: true,
                points: false,
                times: &times[..*count],
                values: column(rows, n, i),
            });
        }
        let svg = state_plot(&format!("x{}", i + 1), &series, divider);
        fs::write(out.join(format!("state_{}.svg", i + 1)), svg)?;
    }
    Ok(())
}

/// Metrics recomputed from a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub system: String,
    pub multiple_shooting: Metrics,
    /// `‖G‖∞` at the saved shooting variables.
    pub g_inf: Option<f64>,
    pub single_shooting: Option<Metrics>,
}

/// Reloads a run directory, regenerates its data and re-evaluates the
/// saved models.
pub fn evaluate_run(run: &Path) -> Result<RunEvaluation> {
    let conf = fs::read_to_string(run.join(CONFIG_ECHO)).with_context(|| format!("reading {}", run.display()))?;
    let cfg = RunConfig::load(Some(&conf), &[])?;
    let split = training_split(&cfg, &msnode_core::systems::train_test_split(&cfg.spec(), cfg.data_substeps)?)?;
    let ckpt = Checkpoint::read(&run.join(PARAMS))?;
    let f = NeuralDynamics::new(ckpt.network.clone())?;
    let ms = evaluate(&f, &ckpt.values, &split, cfg.train.substeps);

    let text = fs::read_to_string(run.join(VARIABLES))?;
    let v: ShootingVariables = serde_json::from_str(&text)?;
    let vars = ShootingVariables::new(v.m(), v.n(), v.states, v.multipliers, v.params)?;
    let grid = ShootingGrid::split(&split.train.times, vars.m(), cfg.train.substeps)?;
    let g_inf = Linearization::new(&f, &grid, &vars)
        .and_then(|lin| lin.residual(split.train.row(0)))
        .map(|r| r.norm_inf())
        .ok();

    let ss_path = run.join(SS_PARAMS);
    let single_shooting = if ss_path.exists() {
        let c = Checkpoint::read(&ss_path)?;
        Some(evaluate(&f, &c.values, &split, cfg.train.substeps).metrics)
    } else {
        None
    };
    let eval = RunEvaluation {
        system: cfg.system.name().into(),
        multiple_shooting: ms.metrics,
        g_inf,
        single_shooting,
    };
    fs::write(run.join(EVALUATION), serde_json::to_string_pretty(&eval)?)?;
    Ok(eval)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3e}"))
}

fn status_name(s: &RunStatus) -> &'static str {
    match s {
        RunStatus::Converged { .. } => "converged",
        RunStatus::BudgetExhausted => "budget",
        RunStatus::Aborted { .. } => "aborted",
    }
}

/// One summary line per run, `-` for unavailable values.
pub fn summary_table(reports: &[RunReport]) -> String {
    let mut s = String::from("system,ms_status,ms_train_mse,ms_test_mse,ms_g_inf,ss_status,ss_train_mse,ss_test_mse\n");
    for r in reports {
        let ms = &r.multiple_shooting;
        let (ss_status, ss_train, ss_test) = match &r.single_shooting {
            Some(ss) => (status_name(&ss.status), ss.metrics.train_mse, ss.metrics.test_mse),
            None => ("-", None, None),
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.system,
            status_name(&ms.status),
            cell(ms.metrics.train_mse),
            cell(ms.metrics.test_mse),
            cell(ms.final_g_inf),
            ss_status,
            cell(ss_train),
            cell(ss_test)
        ));
    }
    s
}

/// Trains every configuration into `out/<system>` and writes
/// `out/summary.csv`.
pub fn compare(configs: &[RunConfig], out: &Path) -> Result<(Vec<RunReport>, PathBuf)> {
    let mut reports = Vec::new();
    for cfg in configs {
        reports.push(train(cfg, &out.join(cfg.system.name()))?);
    }
    let path = out.join("summary.csv");
    fs::write(&path, summary_table(&reports))?;
    Ok((reports, path))
}
