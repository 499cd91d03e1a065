use thiserror::Error;

/// Errors raised by the message-passing rules, the quadrature constructors
/// and the inference drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix {matrix} is ill-conditioned or singular (condition estimate {condition:e})")]
    Conditioning { matrix: String, condition: f64 },

    #[error(
        "matrix {matrix} is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})"
    )]
    NotPsd { matrix: String, min_eigenvalue: f64 },

    #[error("matrix {matrix} is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { matrix: String, asymmetry: f64 },

    #[error("covariance produced by the {rule} rule is indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    Indefinite { rule: String, min_eigenvalue: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("quadrature rule too large: {points} points exceeds the limit of {limit}")]
    Size { points: u128, limit: u128 },

    #[error("non-finite function value at quadrature node {node}: {detail}")]
    NonFiniteAtNode { node: usize, detail: String },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("state diverged at step {step}")]
    Divergence { step: usize },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            other => Error::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, with step annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
