use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// A NaN or infinity surfaced at an operation boundary.
    #[error("non-finite value in {stage}{}", fmt_index(*.index))]
    NonFinite {
        stage: &'static str,
        index: Option<usize>,
    },

    /// Integration of shooting interval `interval` produced a non-finite state.
    #[error("interval {interval} diverged{}", fmt_substep(*.substep))]
    IntervalDiverged {
        interval: usize,
        substep: Option<usize>,
    },

    #[error("invalid interval plan: {0}")]
    InvalidPlan(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dense assembly refused: {size} exceeds cap {cap}; use the matrix-free path")]
    DenseCapExceeded { size: usize, cap: usize },

    #[error("dense system is singular or not positive definite (pivot {pivot})")]
    Singular { pivot: usize },

    #[error("{system}: state left the admissible region at t = {time}")]
    DomainViolation { system: &'static str, time: f64 },

    #[error("{system} has delayed terms and needs a history lookup")]
    DelayedSystem { system: &'static str },
}

fn fmt_index(index: Option<usize>) -> String {
    match index {
        Some(i) => alloc::format!(" (index {i})"),
        None => String::new(),
    }
}

fn fmt_substep(substep: Option<usize>) -> String {
    match substep {
        Some(s) => alloc::format!(" at substep {s}"),
        None => String::new(),
    }
}

impl Error {
    /// Tags integration failures with the shooting interval they came from.
    pub(crate) fn in_interval(self, interval: usize) -> Self {
        match self {
            Error::NonFinite { index, .. } => Error::IntervalDiverged {
                interval,
                substep: index,
            },
            other => other,
        }
    }

    pub(crate) fn non_finite(stage: &'static str) -> Self {
        Error::NonFinite { stage, index: None }
    }

    pub(crate) fn non_finite_at(stage: &'static str, index: usize) -> Self {
        Error::NonFinite {
            stage,
            index: Some(index),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

pub(crate) fn check_finite(stage: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(stage))
    }
}
