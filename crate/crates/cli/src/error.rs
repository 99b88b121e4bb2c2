use std::path::Path;

/// Command failures, mapped to process exit codes by [`CliError::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: missing required key '{key}'")]
    MissingKey { path: String, key: String },
    #[error("{path} line {line}: {message}")]
    Config { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: nino_core::Error,
    },
    #[error(transparent)]
    Core(#[from] nino_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn file(path: &Path) -> impl FnOnce(nino_core::Error) -> CliError + '_ {
        move |source| CliError::File {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 usage, 2 data error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::MissingKey { .. } | CliError::Config { .. } => 2,
            CliError::File { source, .. } | CliError::Core(source) => {
                if source.is_numerical() {
                    3
                } else {
                    2
                }
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
