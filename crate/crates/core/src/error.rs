use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced anywhere in the search engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid attribute for {op}: {detail}")]
    InvalidAttribute { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("backward needs a single-valued output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor does not belong to this tape")]
    NotOnTape,

    #[error("gradient requested for a tensor that does not require grad (node {0})")]
    NotDifferentiable(usize),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("parameter sets have different signatures: {0}")]
    SignatureMismatch(String),

    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at {position}: {detail}")]
    Parse { position: usize, detail: String },

    #[error("search diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}
