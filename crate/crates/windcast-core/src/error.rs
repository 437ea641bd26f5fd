//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("`{path}` has no column named `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("row {row}: cannot parse `{cell}` as a number")]
    NonNumericCell { row: usize, cell: String },

    #[error("row {row}: cannot parse `{cell}` as a timestamp")]
    BadTimestamp { row: usize, cell: String },

    #[error("row {row}: timestamp spacing deviates more than 1% from the step inferred from the first two rows")]
    IrregularSpacing { row: usize },

    #[error("row {row}: value is not finite")]
    NonFiniteValue { row: usize },

    #[error("series is empty")]
    EmptySeries,

    #[error("series of length {len} is too short (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },

    #[error("split boundary {boundary} out of range for series of length {len}")]
    BoundaryOutOfRange { boundary: usize, len: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("ground truth is zero at indices {indices:?}: MAPE and MRE are undefined")]
    ZeroGroundTruth { indices: Vec<usize> },

    #[error("constant series (min == max == {value}): min-max scaling is undefined")]
    ConstantSeries { value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite activation in {stage}")]
    NonFiniteActivation { stage: String },

    #[error("normal equations remained singular at maximum damping {lambda:e}")]
    SingularNormalEquations { lambda: f64 },

    #[error("insufficient history: need {need} values, have {have}")]
    InsufficientHistory { need: usize, have: usize },

    #[error("model archive: {0}")]
    Archive(String),

    #[error("{stage}{}: {source}", .subseries.map(|i| format!(" (subseries {i})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        subseries: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the pipeline stage (and optional subseries index) it occurred in.
    pub fn in_stage(self, stage: &'static str, subseries: Option<usize>) -> Self {
        Error::Stage {
            stage,
            subseries,
            source: Box::new(self),
        }
    }
}
