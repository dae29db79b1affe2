use std::fmt;
use std::path::PathBuf;

/// Exit code for invalid specs, arguments and input files.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for failures while running (I/O, divergence).
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    Spec(String),
    /// Checkpoints that cannot be combined or compared.
    Incompatible(String),
    Io(PathBuf, std::io::Error),
    Core(iea_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) | CliError::Incompatible(_) => EXIT_VALIDATION,
            CliError::Io(..) => EXIT_RUNTIME,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Spec(msg) => write!(f, "invalid run spec: {msg}"),
            CliError::Incompatible(msg) => write!(f, "incompatible checkpoints: {msg}"),
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<iea_core::Error> for CliError {
    fn from(e: iea_core::Error) -> Self {
        CliError::Core(e)
    }
}
