use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum MolError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("degenerate stencil at point {index}: {reason}")]
    DegenerateStencil { index: usize, reason: String },

    #[error("conditioning failure: {0}")]
    Conditioning(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MolError>;
