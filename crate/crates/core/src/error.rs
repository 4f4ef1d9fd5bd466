use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification:\n  {}", .0.join("\n  "))]
    InvalidSpec(Vec<String>),

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("objective function failed at point {point:?}: {message}")]
    Objective { point: Vec<f64>, message: String },

    #[error("log-density at the start point {point:?} is {value}, expected a finite value")]
    NonFiniteStart { point: Vec<f64>, value: f64 },

    #[error("matrix is not symmetric positive definite")]
    SingularMatrix,

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("series has zero variance")]
    DegenerateSeries,

    #[error("series too short: need at least {needed} points, have {have}")]
    TooShort { needed: usize, have: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("file {} ends with a truncated record", .0.display())]
    TruncatedFile(PathBuf),

    #[error("restart file {} holds no complete record", .0.display())]
    Corrupt(PathBuf),

    #[error("restart does not match the current specification: {0}")]
    SpecMismatch(String),

    #[error(
        "output files with prefix `{0}` already exist; \
         specify a unique output prefix for the new simulation"
    )]
    Clash(String),

    #[error("output file set with prefix `{0}` is incomplete and cannot be restarted")]
    IncompleteOutput(String),

    #[error("could not create output directory {}: {source}", path.display())]
    DirectoryCreationFailed { path: PathBuf, source: std::io::Error },

    #[error("worker rank {rank} failed: {message}")]
    WorkerFailure { rank: usize, message: String },

    #[error("run interrupted after {0} verbose steps")]
    Interrupted(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Maps an I/O failure while reading `path` to a format error naming it.
    pub(crate) fn unreadable(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |e| Error::format(path, format!("cannot read: {e}"))
    }
}
