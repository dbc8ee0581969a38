use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the region where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// `A(s, y) = ∇² log p_s(y) − ψ(s) I` is too ill-conditioned to solve.
    #[error("singular mode system at s = {s} (y = {y:?}): condition number {condition:e}")]
    SingularMode { s: f64, y: Vec<f64>, condition: f64 },

    /// A state became non-finite while integrating.
    #[error("integration failed at node {node} (t = {t}){}", path.map(|p| format!(" on path {p}")).unwrap_or_default())]
    Integration { node: usize, t: f64, path: Option<u64> },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// Attach a path index to an integration failure.
    pub fn on_path(self, path: u64) -> Self {
        match self {
            Error::Integration { node, t, .. } => Error::Integration {
                node,
                t,
                path: Some(path),
            },
            other => other,
        }
    }
}
