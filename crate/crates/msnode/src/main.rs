use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use msnode::commands::{self, exit_for, Exit};
use msnode::config::{parse_override, RunConfig};
use msnode::selftest::{self, OperatorTable};
use msnode_core::systems::System;

#[derive(Parser)]
#[command(name = "msnode", version, about = "Multiple-shooting neural ODE training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the reference dataset of a system (CSV plus JSON sidecar).
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train multiple shooting (and the single-shooting baseline) and write
    /// a run directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `runs/<system>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a run directory.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Train several systems and tabulate the results.
    Compare {
        /// Comma-separated system names; all systems when omitted.
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
        /// Directory holding `<system>.conf` files to start from.
        #[arg(long)]
        configs: Option<PathBuf>,
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
        /// Overrides applied to every system.
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        set: Vec<(String, String)>,
    },
    /// Run the operator oracle suites.
    Selftest,
    /// Print the resolved configuration in `key = value` form.
    Config {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    intervals: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// auto, dense or matrix-free.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    scale: Option<bool>,
    /// RK4 steps per measurement period during training.
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    vdp_as_printed: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    oregonator_standard: Option<bool>,
    /// Any configuration key; applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, String)>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("system", self.system.clone());
        push("intervals", self.intervals.map(|v| v.to_string()));
        push("hidden", self.hidden.clone());
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("solver", self.solver.clone());
        push("scale", self.scale.map(|v| v.to_string()));
        push("substeps", self.substeps.map(|v| v.to_string()));
        push("vdp_as_printed", self.vdp_as_printed.map(|v| v.to_string()));
        push("oregonator_standard", self.oregonator_standard.map(|v| v.to_string()));
        o.extend(self.set.iter().cloned());
        o
    }

    fn load(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("reading {}: {e}", p.display()))?),
            None => None,
        };
        Ok(RunConfig::load(text.as_deref(), &self.overrides())?)
    }
}

fn run(cli: Cli) -> Result<Exit> {
    match cli.command {
        Command::Generate { run, out } => {
            let cfg = run.load()?;
            let files = commands::generate(&cfg.spec(), cfg.data_substeps, &out)?;
            println!("wrote {}", files.train.display());
            if let Some(t) = &files.test {
                println!("wrote {}", t.display());
            }
            println!("wrote {}", files.sidecar.display());
            Ok(Exit::Success)
        }
        Command::Train { run, out } => {
            let cfg = run.load()?;
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(cfg.system.name()));
            let report = commands::train(&cfg, &out)?;
            print!("{}", commands::summary_table(std::slice::from_ref(&report)));
            println!("run directory: {}", out.display());
            let aborted = report.multiple_shooting.status.is_aborted();
            if aborted {
                eprintln!("multiple-shooting training aborted: {:?}", report.multiple_shooting.status);
            }
            Ok(if aborted { Exit::NumericalAbort } else { Exit::Success })
        }
        Command::Evaluate { run } => {
            let eval = commands::evaluate_run(&run)?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
            Ok(Exit::Success)
        }
        Command::Compare {
            systems,
            configs,
            out,
            set,
        } => {
            let systems: Vec<String> = if systems.is_empty() {
                System::ALL.iter().map(|s| s.name().to_string()).collect()
            } else {
                systems
            };
            let mut cfgs = Vec::new();
            for name in &systems {
                let text = match &configs {
                    Some(dir) => std::fs::read_to_string(dir.join(format!("{name}.conf"))).ok(),
                    None => None,
                };
                let mut o = vec![("system".to_string(), name.clone())];
                o.extend(set.iter().cloned());
                cfgs.push(RunConfig::load(text.as_deref(), &o)?);
            }
            let (reports, path) = commands::compare(&cfgs, &out)?;
            print!("{}", commands::summary_table(&reports));
            println!("summary: {}", path.display());
            Ok(Exit::Success)
        }
        Command::Config { run } => {
            print!("{}", run.load()?.to_conf_string());
            Ok(Exit::Success)
        }
        Command::Selftest => {
            let table = OperatorTable::default();
            let cases = selftest::default_cases();
            let start = Instant::now();
            let report = selftest::run(&table, &cases);
            for s in &report.suites {
                let verdict = if s.passed() { "pass" } else { "FAIL" };
                println!(
                    "{verdict} {:<20} {:>3} cases {:>8.3} s",
                    s.name,
                    s.cases_run,
                    s.elapsed.as_secs_f64()
                );
            }
            println!("total {:.3} s", start.elapsed().as_secs_f64());
            match report.first_failure() {
                None => Ok(Exit::Success),
                Some(f) => {
                    eprintln!("first failure: {f}");
                    Ok(Exit::PropertyFailure)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_for(&e) as u8)
        }
    }
}
