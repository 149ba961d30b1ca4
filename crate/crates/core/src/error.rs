use thiserror::Error;

use crate::model::State;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Dimensions or parameters that cannot describe a valid system.
    #[error("configuration error: {0}")]
    Config(String),

    /// A certificate, vector field or comparison function produced a
    /// non-finite value.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// A state that the closed-form regions should cover was not covered,
    /// or the multiplier system was singular where it cannot be.
    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),

    #[error("bound unavailable: {0}")]
    BoundUnavailable(String),

    #[error("estimate unavailable: {0}")]
    EstimateUnavailable(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("indeterminate: {0}")]
    Indeterminate(String),

    #[error("nominal controller rejected: CLF condition violated by {violation:e} at {state:?}")]
    NominalRejected { state: Vec<f64>, violation: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("malformed scenario document: {0}")]
    MalformedDocument(String),

    #[error("certificate sanity check failed: {0}")]
    CertificateSanity(String),
}

impl Error {
    pub(crate) fn rejected(state: &State, violation: f64) -> Self {
        Error::NominalRejected {
            state: state.iter().copied().collect(),
            violation,
        }
    }
}
