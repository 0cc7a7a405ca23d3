use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("time {t} outside the admissible interval [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("point is {distance:e} away from the surface (tolerance {tolerance:e})")]
    OffSurface { distance: f64, tolerance: f64 },

    #[error("singular geometry: {0}")]
    Singular(&'static str),

    #[error("degenerate element {element}: measure {measure:e}")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("diffusion coefficient {value:e} is not positive at {point:?}, t = {t}")]
    Ellipticity { value: f64, point: Vec<f64>, t: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("conjugate gradients stopped after {iterations} iterations with relative residual {residual:e}")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("Jacobi preconditioner needs a positive diagonal, row {row} has {value:e}")]
    Preconditioner { row: usize, value: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample {sample} failed at step {step}: {source}")]
    Path {
        step: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
