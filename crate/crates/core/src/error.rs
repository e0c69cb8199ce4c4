use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cohort is empty")]
    EmptyCohort,

    #[error("row {row}: covariate dimension {found} does not match cohort dimension {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: field {field} must be 0 or 1, got {value}")]
    NonBinary {
        row: usize,
        field: &'static str,
        value: String,
    },

    #[error("row {row}: field {field} is not finite")]
    NonFinite { row: usize, field: String },

    #[error("randomization probability must lie in (0, 1), got {0}")]
    InvalidRandomization(f64),

    #[error("complete separation detected on column {column}")]
    Separation { column: usize },

    #[error("design matrix is rank deficient; dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("{solver} did not converge after {iterations} iterations")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
    },

    #[error("positivity violation at rows {rows:?}")]
    Positivity { rows: Vec<usize> },

    #[error(
        "information matrix is singular (condition number {condition:e}); reduce the working basis"
    )]
    SingularInformation { condition: f64 },

    #[error("cohort has no {0} rows")]
    MissingStudyGroup(&'static str),

    #[error("{0} contains a single treatment arm")]
    SingleArm(&'static str),

    #[error("external pool exhausted: needed {needed}, available {available}")]
    PoolExhausted { needed: usize, available: usize },

    #[error("target size {target} exceeds available size {available}")]
    TargetTooLarge { target: usize, available: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for violations of a statistical precondition (as opposed to a
    /// numerical or I/O failure).
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::MissingStudyGroup(_)
                | Error::SingleArm(_)
                | Error::PoolExhausted { .. }
                | Error::TargetTooLarge { .. }
                | Error::Positivity { .. }
                | Error::Separation { .. }
                | Error::SingularInformation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
