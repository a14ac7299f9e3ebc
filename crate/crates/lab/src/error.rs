use std::path::PathBuf;

/// Everything a subcommand can fail with, mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] catapult_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type LabResult<T> = Result<T, LabError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

impl LabError {
    pub fn exit_code(&self) -> i32 {
        use catapult_core::Error as E;
        match self {
            LabError::Config(_) => EXIT_CONFIG,
            LabError::Core(E::BadMagic { .. } | E::TruncatedFile { .. } | E::LabelOutOfRange { .. }) => EXIT_IO,
            LabError::Core(_) => EXIT_CONFIG,
            LabError::Io { .. } | LabError::Json(_) | LabError::Csv(_) => EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}
