use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: input too short (need at least {needed} samples, got {got})")]
    InputTooShort {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Raised when an allocation would push the tape's live activation bytes
    /// past its logical budget.
    #[error(
        "feasibility error in {op}: allocating {requested} bytes with {live} live exceeds budget of {budget} bytes"
    )]
    Feasibility {
        op: &'static str,
        requested: usize,
        live: usize,
        budget: usize,
    },

    #[error("backward already ran on this tape; record a new forward pass")]
    TapeSpent,

    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("selective scan requires positive step sizes, found {value} at flat index {index}")]
    NonPositiveDelta { index: usize, value: f64 },

    #[error("pooling over the first {k} tokens needs at least {k} tokens, sequence has {len}")]
    Pooling { k: usize, len: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("wav error at byte {offset} ({field}): {msg}")]
    Wav {
        offset: usize,
        field: &'static str,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGrad { param: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Divergence { epoch: usize, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
