use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("kernel overflow at tap {tap}: exponent argument {exponent} exceeds {limit}")]
    KernelOverflow { tap: usize, exponent: f64, limit: f64 },

    #[error("laplace kernel at tap {tap} received a positive pre-activation ({value}); adder outputs must be <= 0")]
    PositivePreactivation { tap: usize, value: f64 },

    #[error("variable belongs to a different tape")]
    ForeignVar,

    #[error("loss must hold exactly one element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("architecture `{arch}`, layer {index} ({kind}): {detail}")]
    Arch {
        arch: String,
        index: usize,
        kind: String,
        detail: String,
    },

    #[error("checkpoint format error at offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("dataset {}: {detail}", path.display())]
    Dataset { path: PathBuf, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::Invalid(detail.into())
    }
}
