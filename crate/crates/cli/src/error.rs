use thiserror::Error;

/// Failure classes of a run; each maps to one process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("i/o failure on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

impl From<kpplab::Error> for CliError {
    fn from(e: kpplab::Error) -> Self {
        match e {
            kpplab::Error::Precondition(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 2;
