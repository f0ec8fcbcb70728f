use thiserror::Error;

/// Errors raised by mesh construction, reconstruction, assembly and solves.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent mesh: {0}")]
    InconsistentMesh(String),

    #[error("unsupported quadrature degree {degree} for dimension {dim}")]
    UnsupportedQuadrature { dim: usize, degree: usize },

    #[error("element {element}: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("patch for element {element} exhausted the mesh at {nodes} nodes (need {required})")]
    PatchExhausted {
        element: usize,
        nodes: usize,
        required: usize,
    },

    #[error("element {element}: least-squares fit is not unisolvent (rank {rank} < {required})")]
    NotUnisolvent {
        element: usize,
        rank: usize,
        required: usize,
    },

    #[error("element {element}: smallest eigenvalue of the evaluation Gram matrix is {value:e}")]
    SingularGram { element: usize, value: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("spectral bound {lambda:e} is below the measured spectral radius {measured:e}")]
    SpectralBound { lambda: f64, measured: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
