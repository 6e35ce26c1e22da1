use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: unsupported broadcast between {lhs:?} and {rhs:?}")]
    Broadcast {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("row {row} is not a probability vector (sum {sum})")]
    NotProbability { row: usize, sum: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("target weights must sum to 1, got {0}")]
    WeightSum(f64),

    #[error("partition function underflowed to zero")]
    PartitionUnderflow,

    #[error("GEV scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("cannot fit GEV to zero-variance data")]
    ZeroVariance,

    #[error("no feasible starting point for the GEV likelihood")]
    NoFeasiblePoint,

    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class {class} is missing from the {domain} domain")]
    MissingRoleClass { class: usize, domain: &'static str },

    #[error("{0} pool is empty")]
    EmptyPool(&'static str),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence { epoch: usize, step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Broad failure classes, used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::MissingRoleClass { .. }
            | Error::EmptyPool(_)
            | Error::Format(_)
            | Error::CorruptCheckpoint(_)
            | Error::InsufficientData { .. }
            | Error::LabelOutOfRange { .. }
            | Error::Io(_) => ErrorKind::Data,
            Error::Shape { .. }
            | Error::Broadcast { .. }
            | Error::NonFinite { .. }
            | Error::NotScalar(_)
            | Error::NotProbability { .. }
            | Error::WeightSum(_)
            | Error::PartitionUnderflow
            | Error::NonPositiveScale(_)
            | Error::ZeroVariance
            | Error::NoFeasiblePoint
            | Error::Divergence { .. } => ErrorKind::Numerical,
        }
    }
}
