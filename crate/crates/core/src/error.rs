use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("symmetric eigensolver did not converge for a {n}x{n} matrix")]
    NoConvergence { n: usize },

    #[error("ill-conditioned system: smallest eigenvalue is {min_eigenvalue:e}; add a ridge or raise the eigenvalue floor")]
    IllConditioned { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point {index} is off the unit sphere (norm {norm})")]
    OffSphere { index: usize, norm: f64 },

    #[error("kernel evaluation failed for pair ({row}, {col}): {source}")]
    KernelPair {
        row: usize,
        col: usize,
        source: Box<Error>,
    },

    #[error("spectrum map produced {value} for eigenvalue {eigenvalue}; values must be positive")]
    InvalidSpectrumMap { eigenvalue: f64, value: f64 },

    #[error("non-finite activation in layer {layer}")]
    Overflow { layer: usize },

    #[error("training diverged at iteration {iteration} (residual norm {residual:e})")]
    Diverged { iteration: usize, residual: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("memory budget exceeded: {required} bytes requested, budget is {budget}")]
    MemoryBudget { required: usize, budget: usize },

    #[error("direction {0} is not tracked by this trace")]
    UntrackedDirection(usize),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
