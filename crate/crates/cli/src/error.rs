use std::path::PathBuf;

use decoupling_lab::LabError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} invariant check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad input or violated preconditions, 3 for numerical degeneracy,
    /// 4 for I/O, 1 when `verify` finds a failing invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Lab(e) if e.is_numerical() => 3,
            CliError::Lab(_) => 2,
            CliError::Io { .. } => 4,
            CliError::VerifyFailed(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
