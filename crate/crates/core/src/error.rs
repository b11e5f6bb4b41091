use std::path::PathBuf;

use crate::network::BusId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classes used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Convergence,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    // network
    #[error("network has no slack bus")]
    MissingSlack,
    #[error("slack bus must be bus 1 and unique, found slack buses {0:?}")]
    BadSlack(Vec<BusId>),
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("bus {id}: {reason}")]
    InvalidBus { id: BusId, reason: String },
    #[error("branch {id}: {reason}")]
    InvalidBranch { id: u32, reason: String },
    #[error("branch {branch} references unknown bus {bus}")]
    UnknownBus { branch: u32, bus: BusId },
    #[error("network is not radial: cycle through buses {buses:?} closed by branch {branch}")]
    Cycle { branch: u32, buses: Vec<BusId> },
    #[error("network is not connected: buses {0:?} unreachable from the slack bus")]
    Disconnected(Vec<BusId>),
    #[error("{device} references missing element {reference}")]
    DanglingDevice { device: String, reference: u32 },
    #[error("{device}: {reason}")]
    InvalidDevice { device: String, reason: String },
    #[error("invalid voltage band [{min}, {max}]")]
    VoltageBand { min: f64, max: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid value for {what}: {reason}")]
    InvalidInput { what: &'static str, reason: String },

    // rpo
    #[error("degenerate baseline: {0} is zero, objective normalizer undefined")]
    DegenerateBaseline(&'static str),
    #[error("baseline power flow did not converge after {iterations} iterations")]
    BaselineDiverged { iterations: usize },

    // regressor
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty {0}")]
    Empty(&'static str),

    // shapley
    #[error("exact Shapley enumeration refused for {features} features (limit {limit}); use the kernel method")]
    TooManyFeatures { features: usize, limit: usize },
    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    // explain
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown output {0:?}")]
    UnknownOutput(String),

    // pipeline
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::BaselineDiverged { .. } => ErrorClass::Convergence,
            Error::NonFiniteLoss { .. } => ErrorClass::Numerical,
            Error::Stage { source, .. } | Error::Instance { source, .. } => source.class(),
            _ => ErrorClass::Validation,
        }
    }
}
