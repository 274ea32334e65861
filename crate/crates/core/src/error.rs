use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite membrane in layer {layer}")]
    NonFiniteMembrane { layer: usize },

    #[error("non-finite membrane")]
    NonFiniteInput,

    #[error("non-finite adjoint in layer {layer} at timestep {t}")]
    NonFiniteAdjoint { layer: usize, t: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("unresolvable same-step cycle in cat connections at layer {layer}")]
    UnresolvableCycle { layer: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{0}")]
    Topology(String),

    #[error("BPTT is not an online estimator")]
    NotOnline,

    #[error("online estimators require the per-step (online) loss")]
    OfflineLossUnsupported,
}

impl Error {
    /// Errors caused by values leaving the finite range rather than by
    /// malformed inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteMembrane { .. }
                | Error::NonFiniteInput
                | Error::NonFiniteAdjoint { .. }
                | Error::NonFiniteLoss
        )
    }
}
