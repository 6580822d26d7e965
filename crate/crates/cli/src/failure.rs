use std::fmt::Display;
use std::path::Path;

/// Bad arguments, unreadable or invalid inputs.
pub const EXIT_USAGE: u8 = 2;
/// Outputs could not be written.
pub const EXIT_IO: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn load(path: &Path, err: impl Display) -> Self {
        Self::usage(format!("{}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("cannot write {}: {err}", path.display()),
        }
    }
}

impl From<convlens_core::Error> for Failure {
    fn from(e: convlens_core::Error) -> Self {
        Self::usage(e.to_string())
    }
}
