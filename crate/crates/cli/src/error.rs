use std::io;
use std::path::{Path, PathBuf};

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] thermobnn_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

fn core_is_numeric(e: &thermobnn_core::Error) -> bool {
    match e {
        thermobnn_core::Error::Numeric(_) => true,
        thermobnn_core::Error::Stage { source, .. } => core_is_numeric(source),
        _ => false,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Core(e) if core_is_numeric(e) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

macro_rules! data_err {
    ($($arg:tt)*) => {
        $crate::error::CliError::Data(format!($($arg)*))
    };
}
pub(crate) use data_err;
