use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("invalid subject `{subject}`: {msg}")]
    InvalidSubject { subject: String, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("degenerate axis {axis}: {msg}")]
    DegenerateAxis { axis: usize, msg: String },

    #[error("point outside grid on axis {axis}: value {value}")]
    OutOfGrid { axis: usize, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no occupied cells: every cell has zero at-risk mass")]
    NoOccupiedCells,

    #[error(
        "risk unbounded below is impossible but model is degenerate: λ̂≡0 (no failures in data)"
    )]
    NoFailures,

    #[error("gradient is zero; descent has terminated")]
    ZeroGradient,

    #[error("descent direction has zero norm")]
    ZeroDirection,

    #[error("fold {fold} has no failures in its training part; use fewer folds")]
    FoldWithoutFailures { fold: usize },

    #[error("hazard {value} exceeds the thinning bound {bound}")]
    HazardExceedsBound { value: f64, bound: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Process exit code: 3 for data validation, 4 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoFailures
            | Error::ZeroGradient
            | Error::ZeroDirection
            | Error::NoOccupiedCells
            | Error::HazardExceedsBound { .. } => 4,
            _ => 3,
        }
    }
}
