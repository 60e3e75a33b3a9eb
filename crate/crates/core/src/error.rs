use thiserror::Error;

pub type Result<T> = std::result::Result<T, PegError>;

#[derive(Debug, Error)]
pub enum PegError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row} (subject {subject}): missing or unparsable value in column `{column}`")]
    MissingValue {
        row: usize,
        subject: String,
        column: String,
    },

    #[error("row {row} (subject {subject}): treatment must be 0 or 1, found `{value}`")]
    NonBinaryTreatment {
        row: usize,
        subject: String,
        value: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("perfect separation in the propensity model (linear predictor reached {max_eta:.1})")]
    Separation { max_eta: f64 },

    #[error("propensity Newton iterations did not converge after {iterations} steps")]
    PropensityNotConverged { iterations: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("ill-conditioned system (condition number {cond:.3e}); reduce the model")]
    IllConditioned { cond: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("unstructured working correlation requires a common session count per subject")]
    Unbalanced,

    #[error("degenerate partial information {value:.3e} for coordinate {coordinate}")]
    DegenerateInformation { coordinate: usize, value: f64 },

    #[error("linear program: {0}")]
    Infeasible(String),

    #[error("tuning grid is empty")]
    EmptyGrid,

    #[error("no fit in the tuning grid converged")]
    NoConvergence,
}
