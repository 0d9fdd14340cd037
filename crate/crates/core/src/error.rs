use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands disagree along a named axis.
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    /// An input is too small for the requested window or architecture.
    #[error("input too small on {axis}: extent {extent} < {required}")]
    TooSmall {
        axis: &'static str,
        extent: usize,
        required: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class index {index} out of range (num classes {num_classes})")]
    Class { index: usize, num_classes: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported PNG color type {color_type} in {path}")]
    ColorType { color_type: String, path: PathBuf },

    #[error("png: {0}")]
    Png(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            axis,
            expected,
            got,
        }
    }
}

pub(crate) fn check_dim(axis: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(axis, expected, got))
    }
}
