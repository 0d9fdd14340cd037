use std::path::Path;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
        }
    }

    /// Wraps a library error, naming the file it concerns.
    pub fn at(path: &Path, err: unet_cd::Error) -> Self {
        match CliError::from(err) {
            CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            e => e,
        }
    }
}

impl From<unet_cd::Error> for CliError {
    fn from(e: unet_cd::Error) -> Self {
        match e {
            unet_cd::Error::Io(_) | unet_cd::Error::Png(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(format!("json: {e}"))
        }
    }
}
