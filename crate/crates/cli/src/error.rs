use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use taxrewire_core::Error;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Core error raised while reading a specific file.
    InFile(PathBuf, Error),
    Io(PathBuf, io::Error),
    Usage(String),
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PARSE: u8 = 4;
pub const EXIT_TAXONOMY: u8 = 5;
pub const EXIT_FINGERPRINT: u8 = 6;
pub const EXIT_NUMERIC: u8 = 7;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn in_file(path: &Path) -> impl FnOnce(Error) -> CliError + '_ {
        move |e| CliError::InFile(path.to_path_buf(), e)
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(..) => EXIT_IO,
            CliError::Core(e) | CliError::InFile(_, e) => match e {
                Error::Io(_) => EXIT_IO,
                Error::Parse { .. } => EXIT_PARSE,
                Error::Taxonomy(_) | Error::UnknownNode(_) | Error::Rewire(_) => EXIT_TAXONOMY,
                Error::FingerprintMismatch { .. } => EXIT_FINGERPRINT,
                Error::NonFinite(_) | Error::DimensionMismatch { .. } => EXIT_NUMERIC,
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_OTHER,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::InFile(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
