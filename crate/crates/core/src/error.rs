use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported operation `{0}` in recorded expression")]
    UnsupportedOp(String),

    #[error("non-finite value at tape node {node}")]
    NonFiniteNode { node: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("sparsity pattern was not produced from this tape")]
    PatternMismatch,

    #[error("{family}: {detail}")]
    Domain { family: &'static str, detail: String },

    #[error("invalid knots: {0}")]
    Knots(String),

    #[error("non-finite h-likelihood contribution at observation {0}")]
    NonFiniteObservation(usize),

    #[error("indefinite inner Hessian")]
    IndefiniteInnerHessian,

    #[error("inner Newton did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    InnerNoConvergence { iterations: usize, grad_norm: f64 },

    #[error("inner problem structure: {0}")]
    Structure(String),

    #[error("Schur complement is not positive definite")]
    SchurNotPositiveDefinite,

    #[error("mode search failed: {0}")]
    ModeSearch(String),

    #[error("quadrature order {0} outside 1..=101")]
    QuadratureOrder(usize),

    #[error("tensor-grid oracle needs {requested} random effects (limit {limit}); use the single-factor product oracle instead")]
    OracleDimension { requested: usize, limit: usize },

    #[error("outer optimizer stopped after {iterations} iterations (gradient norm {grad_norm:e}, objective {objective})")]
    OuterNoConvergence {
        iterations: usize,
        grad_norm: f64,
        objective: f64,
    },

    #[error("optimum not interior or flat")]
    NotInterior,

    #[error("infeasible truncation: {0}")]
    InfeasibleTruncation(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("study: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Knots(_) | Error::InvalidModel(_) | Error::Json(_) => {
                ErrorKind::Config
            }
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Domain { .. } => ErrorKind::Data,
            _ => ErrorKind::Numerical,
        }
    }
}
