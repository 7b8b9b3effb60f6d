//! Run outputs: JSON report, per-epoch CSV history and parameter checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use msnode_core::network::NetworkSpec;
use msnode_core::trainer::{EpochRecord, Metrics, RunStatus};

use crate::dataset::fmt_f64;

/// Outcome of one training method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub status: RunStatus,
    pub epochs_run: usize,
    /// `Φ` at the returned variables; null when it could not be evaluated.
    pub final_phi: Option<f64>,
    /// Null for single shooting or when it could not be evaluated.
    pub final_g_inf: Option<f64>,
    /// Rollout errors; a null window failed or has no data.
    pub metrics: Metrics,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub system: String,
    pub param_count: usize,
    pub multiple_shooting: MethodReport,
    pub single_shooting: Option<MethodReport>,
    pub wall_time_s: f64,
    /// Canonical configuration text.
    pub config: String,
}

impl RunReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `epoch,phi,g_inf,lr`
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "epoch,phi,g_inf,lr")?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.epoch, fmt_f64(r.phi), fmt_f64(r.g_inf), fmt_f64(r.lr))?;
    }
    f.flush()?;
    Ok(())
}

/// Network description plus flat parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub network: NetworkSpec,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let c: Checkpoint = serde_json::from_str(&text)?;
        anyhow::ensure!(
            c.values.len() == c.network.param_count(),
            "{}: {} values for a network with {} parameters",
            path.display(),
            c.values.len(),
            c.network.param_count()
        );
        Ok(c)
    }
}
