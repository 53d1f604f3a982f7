use std::io;

use thiserror::Error;

use crate::tensor::Shape;

/// Tensor axis named in shape errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channels,
    Height,
    Width,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Axis::Batch => "batch",
            Axis::Channels => "channels",
            Axis::Height => "height",
            Axis::Width => "width",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {axis} mismatch (expected {expected}, got {got})")]
    AxisMismatch {
        op: &'static str,
        axis: Axis,
        expected: usize,
        got: usize,
    },

    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    IncompatibleShapes {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("missing {kind} `{name}`")]
    Missing { kind: &'static str, name: String },

    #[error("{format}: {msg}")]
    Format { format: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn format(format: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { format, msg: msg.into() }
    }
}
