use thiserror::Error;

/// Errors produced by basis construction, estimation, subsampling and IO.
#[derive(Error, Debug)]
pub enum FlpreError {
    #[error("invalid basis configuration: {0}")]
    InvalidBasisConfig(String),

    #[error("invalid functional sample{}: {reason}", fmt_index(.index))]
    InvalidSample {
        index: Option<usize>,
        reason: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("response {index} is not strictly positive ({value})")]
    NonPositiveResponse { index: usize, value: f64 },

    #[error(
        "linear predictor magnitude {value:.3e} at observation {index} exceeds the exp-safe bound ({bound})"
    )]
    ExpOverflow { index: usize, value: f64, bound: f64 },

    #[error(
        "Hessian is numerically singular at iteration {iteration}: {detail}. \
         A small ridge jitter (--jitter) or a positive smoothing parameter may help."
    )]
    SingularHessian { iteration: usize, detail: String },

    #[error("matrix is not positive definite ({context}): {detail}")]
    SingularMatrix { context: String, detail: String },

    #[error("estimation did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error(
        "all subsampling scores are zero (the reference fit is exact everywhere); \
         use uniform probabilities instead"
    )]
    DegenerateProbabilities,

    #[error("probability {pi:.3e} at index {index} is too small for a nonzero term")]
    ZeroProbability { index: usize, pi: f64 },

    #[error("BIC is undefined: residual loss is zero (perfect fit); inspect the lambda path instead")]
    BicUndefined,

    #[error("lambda selection failed: {0}")]
    LambdaSelection(String),

    #[error("model mismatch: expected {expected}, found {found}")]
    ModelMismatch { expected: String, found: String },

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_index(index: &Option<usize>) -> String {
    match index {
        Some(i) => format!(" at index {i}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, FlpreError>;

impl FlpreError {
    /// Coarse classification used by the CLI to choose its exit code.
    pub fn kind(&self) -> ErrorKind {
        use FlpreError::*;
        match self {
            InvalidBasisConfig(_) | InvalidInput(_) | LambdaSelection(_) => ErrorKind::Usage,
            InvalidSample { .. }
            | DimensionMismatch { .. }
            | NonPositiveResponse { .. }
            | ModelMismatch { .. }
            | Csv { .. }
            | Data(_)
            | Io(_)
            | Json(_) => ErrorKind::Data,
            ExpOverflow { .. }
            | SingularHessian { .. }
            | SingularMatrix { .. }
            | NotConverged { .. }
            | DegenerateProbabilities
            | ZeroProbability { .. }
            | BicUndefined => ErrorKind::Numerical,
        }
    }
}

/// Error classes with a stable mapping to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid configuration or arguments (exit code 2).
    Usage,
    /// Unreadable or inconsistent data (exit code 3).
    Data,
    /// Numerical failure during estimation (exit code 4).
    Numerical,
}
