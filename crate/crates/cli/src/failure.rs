//! Exit codes and machine-readable error records.

use serde::Serialize;

pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    #[serde(skip)]
    pub code: i32,
    pub kind: &'static str,
    /// Name of the violated check or invariant.
    pub label: String,
    pub message: String,
}

impl Failure {
    pub fn invalid(label: impl Into<String>, message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INVALID_INPUT,
            kind: "invalid_input",
            label: label.into(),
            message: message.into(),
        }
    }

    pub fn certificate(label: impl Into<String>, message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CERTIFICATE,
            kind: "certificate_failure",
            label: label.into(),
            message: message.into(),
        }
    }

    pub fn io(label: &str, err: std::io::Error) -> Self {
        Failure::invalid(label, err.to_string())
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a Failure,
            exit_code: i32,
        }
        serde_json::to_string(&Record {
            error: self,
            exit_code: self.code,
        })
        .expect("failure record serializes")
    }
}

impl From<distobs::Error> for Failure {
    fn from(err: distobs::Error) -> Self {
        use distobs::Error as E;
        let message = err.to_string();
        let (code, kind, label) = match &err {
            E::InvalidInput(msg) if msg.contains("joint observability") => (
                EXIT_INVALID_INPUT,
                "invalid_input",
                "joint_observability".to_string(),
            ),
            E::InvalidInput(_) => (EXIT_INVALID_INPUT, "invalid_input", "input".into()),
            E::CertificateFailure { label, .. } => {
                (EXIT_CERTIFICATE, "certificate_failure", label.to_string())
            }
            E::InternalConsistency { label, .. } => {
                (EXIT_NUMERICAL, "numerical_failure", label.to_string())
            }
            E::NotInvariant { .. } => (
                EXIT_NUMERICAL,
                "numerical_failure",
                "subspace_invariance".into(),
            ),
            E::NumericalFailure(_) => (EXIT_NUMERICAL, "numerical_failure", "numerics".into()),
            E::NonTermination { what, .. } => {
                (EXIT_NUMERICAL, "numerical_failure", what.to_string())
            }
            E::Overflow { .. } => (EXIT_NUMERICAL, "numerical_failure", "overflow_guard".into()),
        };
        Failure {
            code,
            kind,
            label,
            message,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let f: Failure = distobs::Error::Overflow { tau: 3, norm: 1e13 }.into();
        assert_eq!(
            (f.code, f.label.as_str()),
            (EXIT_NUMERICAL, "overflow_guard")
        );
        let f: Failure = distobs::Error::InvalidInput("joint observability violated".into()).into();
        assert_eq!(
            (f.code, f.label.as_str()),
            (EXIT_INVALID_INPUT, "joint_observability")
        );
    }

    #[test]
    fn record_is_json() {
        let rec = Failure::certificate("lyapunov_decrement", "positive").record();
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        assert_eq!(v["exit_code"], 3);
        assert_eq!(v["error"]["label"], "lyapunov_decrement");
    }
}
