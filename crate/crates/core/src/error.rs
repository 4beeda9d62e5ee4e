use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The pair of points is not joined by a unique minimizing geodesic inside
    /// the working radius.
    #[error("points at distance {distance} are outside the radius {limit} (cut locus)")]
    CutLocus { distance: f64, limit: f64 },

    #[error("argument outside the admissible domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("integrator step failed: {0}")]
    StepFailure(String),

    #[error("quadrature did not reach tolerance {tolerance} (estimate {estimate})")]
    QuadratureFailure { estimate: f64, tolerance: f64 },

    #[error("Fourier cutoff {cutoff} too small for field frequency {frequency}")]
    CutoffTooSmall { cutoff: usize, frequency: usize },

    #[error("spectral sum not converged: {0}")]
    NotConverged(String),

    #[error("least-squares design is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("corrupt cache file: {0}")]
    Cache(String),
}

impl Error {
    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepFailure(_)
                | Error::QuadratureFailure { .. }
                | Error::NotConverged(_)
                | Error::IllConditioned { .. }
        )
    }
}
