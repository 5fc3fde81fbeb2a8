use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry{}: {reason}", axis_label(*.axis))]
    InvalidGeometry { axis: Option<usize>, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("range error: {0}")]
    Range(String),

    /// A layer of a network rejected its input shape.
    #[error("layer {layer}: {source}")]
    Composition {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A reshape or bookkeeping step that cannot fail on valid inputs did.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

fn axis_label(axis: Option<usize>) -> String {
    match axis {
        Some(a) => format!(" (axis {a})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn geometry(axis: impl Into<Option<usize>>, reason: impl Into<String>) -> Self {
        Error::InvalidGeometry {
            axis: axis.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        match self {
            e @ Error::Composition { .. } => e,
            e => Error::Composition {
                layer,
                source: Box::new(e),
            },
        }
    }
}
