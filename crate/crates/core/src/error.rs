use thiserror::Error;

pub type Result<T, E = CpmError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpmError {
    /// Non-finite input or an intermediate that would overflow.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// Parameter outside the model's parameter domain.
    #[error("parameter outside the model domain: {0}")]
    Domain(String),

    /// The model does not provide an optional capability (e.g. a coefficient Jacobian).
    #[error("model `{model}` does not provide {capability}")]
    Capability {
        model: String,
        capability: &'static str,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A structural model assumption failed at runtime, e.g. a nonpositive
    /// observed component where the logarithm is required.
    #[error("model assumption violated ({assumption}): {detail}")]
    ModelAssumption {
        assumption: &'static str,
        detail: String,
    },

    #[error("information matrix ill-conditioned at x = {x:?} (condition number {condition:.3e})")]
    IllConditioned { x: Vec<f64>, condition: f64 },

    #[error("chain diverged: {0}")]
    Divergence(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for CpmError {
    fn from(e: serde_json::Error) -> Self {
        CpmError::Serialization(e.to_string())
    }
}
