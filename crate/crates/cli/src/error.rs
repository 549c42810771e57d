use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] siamtcn_core::Error),

    #[error("invalid configuration in {path}: {detail}")]
    ConfigFile { path: PathBuf, detail: String },

    #[error("invalid option: {0}")]
    Option(String),

    #[error("cannot read {path}: {source}")]
    Missing {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "output directory {0} is in use by another run (delete its .lock file if that run is gone)"
    )]
    Locked(PathBuf),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn missing(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Missing {
            path: path.into(),
            source,
        }
    }

    pub fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.into(),
            source,
        }
    }

    /// Process exit code. 2 is left to argument parsing.
    pub fn exit_code(&self) -> u8 {
        use siamtcn_core::Error as E;
        match self {
            CliError::ConfigFile { .. } | CliError::Option(_) | CliError::Core(E::Config(_)) => 3,
            CliError::Missing { .. } | CliError::Write { .. } | CliError::Core(E::Io { .. }) => 4,
            CliError::Core(
                E::Schema { .. }
                | E::Csv(_)
                | E::Json(_)
                | E::Corrupt(_)
                | E::Version { .. }
                | E::Shape { .. },
            ) => 5,
            CliError::Core(E::NonFinite(_) | E::Degenerate(_)) => 6,
            CliError::Verification(_) => 7,
            CliError::Locked(_) => 8,
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            3 => "config",
            4 => "io",
            5 => "data",
            6 => "numerical",
            7 => "verification",
            _ => "busy",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
