//! Dataset files: one CSV per window (`t,x1..xn`, 17 significant digits)
//! and a JSON sidecar describing how the data was produced.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use msnode_core::systems::{fit_scaler, train_test_split, DataSplit, MeasurementSet, Scaler, SystemSpec};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, ms: &MeasurementSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=ms.state_dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (i, t) in ms.times.iter().enumerate() {
        let mut rec = vec![fmt_f64(*t)];
        rec.extend(ms.row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<MeasurementSet> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    let n = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x{i}")))
        .collect();
    if n == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        bail!("{}: header must be t,x1..xn", path.display());
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        times.push(nums[0]);
        values.extend_from_slice(&nums[1..]);
    }
    Ok(MeasurementSet::new(times, values, n)?)
}

/// What a dataset directory contains and how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SystemSpec,
    pub substeps_per_sample: usize,
    /// Last training time; the test window starts after it.
    pub split_time: f64,
    pub train_rows: usize,
    pub train_file: String,
    /// Absent when the reference trajectory failed on the continuation.
    pub test_file: Option<String>,
    /// Standardization fitted on the training window; the CSVs stay in
    /// original units.
    pub scaler: Scaler,
}

pub struct DatasetFiles {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub sidecar: PathBuf,
}

/// Generates the reference data of `spec` and writes `<system>.csv`,
/// `<system>_test.csv` and `<system>.json` into `dir`.
pub fn generate(spec: &SystemSpec, substeps: usize, dir: &Path) -> Result<(DataSplit, DatasetFiles)> {
    let split = train_test_split(spec, substeps)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = spec.system.name();
    let train = dir.join(format!("{name}.csv"));
    write_csv(&train, &split.train)?;
    let test = match &split.test {
        Some(t) => {
            let p = dir.join(format!("{name}_test.csv"));
            write_csv(&p, t)?;
            Some(p)
        }
        None => None,
    };
    let sidecar = Sidecar {
        spec: spec.clone(),
        substeps_per_sample: substeps,
        split_time: *split.train.times.last().unwrap(),
        train_rows: split.train.len(),
        train_file: file_name(&train),
        test_file: test.as_deref().map(file_name),
        scaler: fit_scaler(&split.train)?,
    };
    let side = dir.join(format!("{name}.json"));
    fs::write(&side, serde_json::to_string_pretty(&sidecar)?)?;
    Ok((
        split,
        DatasetFiles {
            train,
            test,
            sidecar: side,
        },
    ))
}

fn file_name(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

/// Reads a dataset written by [`generate`], given its sidecar path.
pub fn load(sidecar: &Path) -> Result<(Sidecar, DataSplit)> {
    let text = fs::read_to_string(sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let meta: Sidecar = serde_json::from_str(&text)?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let train = read_csv(&dir.join(&meta.train_file))?;
    if train.len() != meta.train_rows || train.state_dim != meta.spec.state_dim {
        bail!("{}: training file does not match the sidecar", sidecar.display());
    }
    let test = match &meta.test_file {
        Some(f) => Some(read_csv(&dir.join(f))?),
        None => None,
    };
    Ok((meta, DataSplit { train, test }))
}
