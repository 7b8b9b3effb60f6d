//! Run configuration: a flat `key = value` file plus command-line overrides.
//!
//! Keys are applied in a fixed canonical order (last value wins per key), so
//! the echo written next to every run reproduces the configuration exactly.

use std::fmt::Write as _;

use msnode_core::optimizer::{DecayRule, LrSchedule};
use msnode_core::shooting::SolverPath;
use msnode_core::systems::{System, SystemSpec, Variants};
use msnode_core::trainer::TrainConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("no system given; valid systems: {}", system_names())]
    MissingSystem,
}

pub fn system_names() -> String {
    System::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}

/// Every accepted key, in application order.
pub const KEYS: &[&str] = &[
    "system",
    "vdp_as_printed",
    "oregonator_standard",
    "intervals",
    "hidden",
    "seed",
    "epochs",
    "lr",
    "lr_schedule",
    "lr_factor",
    "lr_patience",
    "lr_min_improvement",
    "lr_floor",
    "lr_decay_epochs",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "cg_tol",
    "cg_max_iter",
    "substeps",
    "data_substeps",
    "solver",
    "scale",
    "stop_phi",
    "stop_g",
    "time_input",
    "freeze_multipliers",
    "baseline",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: System,
    pub variants: Variants,
    /// Standardize the data before training.
    pub scale: bool,
    /// RK4 substeps per sample for the reference data.
    pub data_substeps: usize,
    /// Also train the single-shooting baseline.
    pub baseline: bool,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Reference setup for `system`.
    pub fn for_system(system: System, variants: Variants) -> Self {
        let spec = SystemSpec::new(system, variants);
        RunConfig {
            system,
            variants,
            scale: spec.setup.scaled,
            data_substeps: 100,
            baseline: true,
            train: TrainConfig::for_system(&spec),
        }
    }

    pub fn spec(&self) -> SystemSpec {
        SystemSpec::new(self.system, self.variants)
    }

    /// Builds a configuration from file text and overrides, the latter
    /// taking precedence.
    pub fn load(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut pairs = match text {
            Some(t) => parse_pairs(t)?,
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        for (k, _) in &pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let system_name = last("system").ok_or(ConfigError::MissingSystem)?;
        let system = System::from_name(system_name).ok_or_else(|| ConfigError::BadValue {
            key: "system".into(),
            value: system_name.into(),
            reason: format!("valid systems: {}", system_names()),
        })?;
        let mut variants = Variants::default();
        if let Some(v) = last("vdp_as_printed") {
            variants.vdp_as_printed = parse_bool("vdp_as_printed", v)?;
        }
        if let Some(v) = last("oregonator_standard") {
            variants.oregonator_standard = parse_bool("oregonator_standard", v)?;
        }
        let mut cfg = RunConfig::for_system(system, variants);
        for key in &KEYS[3..] {
            if let Some(v) = last(key) {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "intervals" => t.intervals = parse_num(key, v)?,
            "hidden" => t.hidden = parse_list(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "lr" => t.lr.initial = parse_num(key, v)?,
            "lr_schedule" => {
                let initial = t.lr.initial;
                t.lr = match v {
                    "constant" => LrSchedule::constant(initial),
                    "plateau" => LrSchedule::plateau(initial),
                    "epochs" => LrSchedule::new(initial, DecayRule::Epochs { at: Vec::new() }),
                    _ => return Err(bad(key, v, "expected constant, plateau or epochs")),
                };
            }
            "lr_factor" => t.lr.factor = parse_num(key, v)?,
            "lr_floor" => t.lr.floor = parse_num(key, v)?,
            "lr_patience" | "lr_min_improvement" => match &mut t.lr.rule {
                DecayRule::Plateau {
                    patience,
                    rel_improvement,
                } => {
                    if key == "lr_patience" {
                        *patience = parse_num(key, v)?;
                    } else {
                        *rel_improvement = parse_num(key, v)?;
                    }
                }
                _ => return Err(bad(key, v, "only valid with lr_schedule = plateau")),
            },
            "lr_decay_epochs" => {
                let at: Vec<usize> = parse_list(key, v)?;
                let initial = t.lr.initial;
                let (factor, floor) = (t.lr.factor, t.lr.floor);
                if !matches!(t.lr.rule, DecayRule::Epochs { .. }) {
                    return Err(bad(key, v, "only valid with lr_schedule = epochs"));
                }
                t.lr = LrSchedule::new(initial, DecayRule::Epochs { at });
                t.lr.factor = factor;
                t.lr.floor = floor;
            }
            "adam_beta1" => t.adam.beta1 = parse_num(key, v)?,
            "adam_beta2" => t.adam.beta2 = parse_num(key, v)?,
            "adam_eps" => t.adam.eps = parse_num(key, v)?,
            "cg_tol" => t.cg.tol = parse_num(key, v)?,
            "cg_max_iter" => {
                t.cg.max_iter = match v {
                    "auto" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "substeps" => t.substeps = parse_num(key, v)?,
            "data_substeps" => self.data_substeps = parse_num(key, v)?,
            "solver" => {
                t.solver = SolverPath::from_name(v).ok_or_else(|| bad(key, v, "expected auto, dense or matrix-free"))?
            }
            "scale" => self.scale = parse_bool(key, v)?,
            "stop_phi" => t.stop_phi = parse_num(key, v)?,
            "stop_g" => t.stop_g = parse_num(key, v)?,
            "time_input" => t.time_input = parse_bool(key, v)?,
            "freeze_multipliers" => t.freeze_multipliers = parse_bool(key, v)?,
            "baseline" => self.baseline = parse_bool(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Canonical `key = value` text; loading it gives back `self`.
    pub fn to_conf_string(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("system", self.system.name().into());
        line("vdp_as_printed", self.variants.vdp_as_printed.to_string());
        line("oregonator_standard", self.variants.oregonator_standard.to_string());
        line("intervals", t.intervals.to_string());
        line("hidden", join(&t.hidden));
        line("seed", t.seed.to_string());
        line("epochs", t.epochs.to_string());
        line("lr", t.lr.initial.to_string());
        match &t.lr.rule {
            DecayRule::Constant => line("lr_schedule", "constant".into()),
            DecayRule::Plateau {
                patience,
                rel_improvement,
            } => {
                line("lr_schedule", "plateau".into());
                line("lr_patience", patience.to_string());
                line("lr_min_improvement", rel_improvement.to_string());
            }
            DecayRule::Epochs { at } => {
                line("lr_schedule", "epochs".into());
                line("lr_decay_epochs", join(at));
            }
        }
        line("lr_factor", t.lr.factor.to_string());
        line("lr_floor", t.lr.floor.to_string());
        line("adam_beta1", t.adam.beta1.to_string());
        line("adam_beta2", t.adam.beta2.to_string());
        line("adam_eps", t.adam.eps.to_string());
        line("cg_tol", t.cg.tol.to_string());
        line(
            "cg_max_iter",
            t.cg.max_iter.map_or_else(|| "auto".into(), |n| n.to_string()),
        );
        line("substeps", t.substeps.to_string());
        line("data_substeps", self.data_substeps.to_string());
        line("solver", t.solver.name().into());
        line("scale", self.scale.to_string());
        line("stop_phi", t.stop_phi.to_string());
        line("stop_g", t.stop_g.to_string());
        line("time_input", t.time_input.to_string());
        line("freeze_multipliers", t.freeze_multipliers.to_string());
        line("baseline", self.baseline.to_string());
        s
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| bad(key, v, &e.to_string()))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, v, "expected true or false")),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}
