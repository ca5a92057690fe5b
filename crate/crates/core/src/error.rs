use alloc::string::String;
use thiserror::Error;

pub type Result<T, E = CoreError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss {loss} at task {task}, epoch {epoch}")]
    NumericalAbort { task: usize, epoch: usize, loss: f64 },

    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl CoreError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        CoreError::ShapeMismatch {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }
}

/// Failure while decoding a binary dataset or checkpoint. Offsets are byte
/// positions in the input buffer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("bad magic 0x{found:08x} at offset {offset}")]
    BadMagic { offset: usize, found: u32 },

    #[error("truncated input at offset {offset}: need {needed} bytes, have {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("dimension mismatch at offset {offset}: {detail}")]
    DimMismatch { offset: usize, detail: String },

    #[error("invalid label {label} in record {record} (offset {offset})")]
    BadLabel {
        record: usize,
        offset: usize,
        label: u8,
    },

    #[error("unsupported format version {version} at offset {offset}")]
    Version { offset: usize, version: u32 },
}
