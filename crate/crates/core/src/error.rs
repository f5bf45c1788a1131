use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Best iterate of an inner solve that hit its iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub struct NonConvergence {
    pub iterations: usize,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    pub residual_x: f64,
    pub residual_q: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error(
        "inner solve did not converge after {} iterations (r_x = {:e}, r_q = {:e})",
        .0.iterations, .0.residual_x, .0.residual_q
    )]
    NonConvergence(Box<NonConvergence>),

    #[error("objective family does not provide Hessians")]
    MissingHessian,

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}
