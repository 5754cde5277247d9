use thiserror::Error;

/// Errors surfaced by the matching pipeline.
///
/// The CLI maps these onto exit codes: input/config problems caused by the
/// caller exit with 2, everything else (runtime failures, I/O) with 1.
#[derive(Debug, Error)]
pub enum TmError {
    /// Two tensors (or a tensor and an expected contract) disagree on shape.
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A model or run configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data is invalid (bad text, bad file contents, bad args).
    #[error("input error: {0}")]
    Input(String),

    /// An internal API contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training produced a non-finite loss; aborted rather than clamped.
    #[error("runtime failure: {0}")]
    Runtime(String),

    /// A serialized artifact (checkpoint, manifest, image) failed to parse.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TmError {
    /// Process exit code for this error: 2 for usage/input errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            TmError::Input(_) | TmError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, TmError>;
