use thiserror::Error;

/// Every failure the toolkit reports. The CLI maps `exit_code` onto the process status.
#[derive(Error, Debug)]
pub enum KmsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("limit exceeded: {0}")]
    Limit(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("near-critical: {0}")]
    NearCritical(String),
    #[error("guard tripped: {0}")]
    Guard(String),
    #[error("form mismatch: {0}")]
    FormMismatch(String),
    #[error("integration-order error: {0}")]
    IntegrationOrder(String),
    #[error("unstable ratio: {0}")]
    UnstableRatio(String),
    #[error("unsupported vertex: {0}")]
    UnsupportedVertex(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl KmsError {
    pub fn exit_code(&self) -> i32 {
        match self {
            KmsError::Parse(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, KmsError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(KmsError::Domain(msg.into()))
}
