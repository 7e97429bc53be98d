use thiserror::Error;

/// Errors raised by synthesis, certification and simulation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A structural identity that must hold by construction was violated.
    #[error("internal consistency check `{label}` failed: {detail}")]
    InternalConsistency { label: &'static str, detail: String },

    #[error("subspace is not invariant: residual {residual:.3e} exceeds {bound:.3e}")]
    NotInvariant { residual: f64, bound: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A stability certificate did not hold. `value` is the violating quantity
    /// (an eigenvalue, a norm, a residual).
    #[error("certificate `{label}` failed: {detail} (value {value:.6e})")]
    CertificateFailure {
        label: &'static str,
        detail: String,
        value: f64,
    },

    #[error("iteration cap {cap} exceeded while searching for `{what}`")]
    NonTermination { what: &'static str, cap: u64 },

    #[error("state norm {norm:.3e} exceeded overflow guard at event {tau}")]
    Overflow { tau: u64, norm: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn consistency(label: &'static str, detail: impl Into<String>) -> Self {
        Error::InternalConsistency {
            label,
            detail: detail.into(),
        }
    }

    pub(crate) fn certificate(label: &'static str, detail: impl Into<String>, value: f64) -> Self {
        Error::CertificateFailure {
            label,
            detail: detail.into(),
            value,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
