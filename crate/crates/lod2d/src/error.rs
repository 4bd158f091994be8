use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum LodError {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),
    #[error("invalid coefficient field: {0}")]
    InvalidCoefficient(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("Gram-Schmidt breakdown at column {column} of {entity}: pivot {pivot:.3e}")]
    GramSchmidtBreakdown {
        column: usize,
        pivot: f64,
        entity: String,
    },
    #[error("conjugate gradient breakdown: p'Ap = {0:.3e} <= 0")]
    CgBreakdown(f64),
    #[error("conjugate gradient did not converge within {0} iterations")]
    CgStalled(usize),
    #[error(
        "dual node selection failed for element {element}: \
         S_i inverse condition {inv_cond:.3e} after {attempts} attempts"
    )]
    DualSelectionFailed {
        element: usize,
        inv_cond: f64,
        attempts: usize,
    },
    #[error("element {element}: refine ratio {refine_ratio} too small for {count} separated dual nodes")]
    DualNodesInfeasible {
        element: usize,
        refine_ratio: usize,
        count: usize,
    },
    #[error("eigensolver failure: {0}")]
    EigenFailure(String),
    #[error("contraction estimate invalid: q = {0}")]
    InvalidContraction(f64),
    #[error("raster error: {0}")]
    Raster(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("basis file error: {0}")]
    BasisFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LodError>;
