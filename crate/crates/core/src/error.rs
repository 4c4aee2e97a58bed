use thiserror::Error;

use crate::checkpoint::CheckpointError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("tape has no marked output")]
    NoOutput,

    #[error("gradient requested for untracked leaf {0}")]
    UntrackedLeaf(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("value {value} at index {index} outside [0, {max}]")]
    ValueOutOfRange { index: usize, value: i64, max: i64 },

    #[error("non-finite log density at dimension {dim} (sample {sample})")]
    NonFiniteDensity { sample: usize, dim: usize },

    #[error("non-finite loss {value} for sample {sample} at t={t}")]
    NonFiniteLoss { sample: usize, t: f64, value: f64 },

    #[error("non-finite parameters after step {step}")]
    NonFiniteParameters { step: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("sampler diverged at step {step}: |x| = {norm}")]
    Divergence { step: usize, norm: f64 },

    #[error("prefix is not a contiguous raster-order prefix (first gap at {gap}, observed at {observed})")]
    NonContiguousPrefix { gap: usize, observed: usize },

    #[error("unknown generator '{name}'; available: {available}")]
    UnknownGenerator { name: String, available: String },

    #[error("grid file: {0}")]
    GridFormat(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteDensity { .. }
                | Error::NonFiniteLoss { .. }
                | Error::NonFiniteParameters { .. }
                | Error::Divergence { .. }
        )
    }
}
