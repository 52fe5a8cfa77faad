use std::path::{Path, PathBuf};

use pointclean::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("{0}")]
    Schema(String),
}

impl CliError {
    /// 2 config, 3 I/O, 4 checkpoint, 5 data mismatch, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Schema(_) => 5,
            CliError::Lib(e) => match e {
                Error::Config(_) | Error::Argument(_) => 2,
                Error::Io { .. } | Error::Parse { .. } => 3,
                Error::Checkpoint(_) => 4,
                Error::DataMismatch(_) | Error::Structural(_) => 5,
                Error::Numeric { .. } | Error::Generation(_) => 1,
            },
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(path, "no such file"))
    }
}

/// Creates `dir` (and parents) up front so later writes cannot fail on it.
pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Makes sure the directory that will hold `file` exists.
pub fn ensure_parent(file: &Path) -> CliResult<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}
