use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use adagev::ErrorKind;

#[derive(Debug)]
pub enum CliError {
    Core(adagev::Error),
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    /// Attaches the path to I/O failures raised inside the library.
    pub fn at(path: &Path) -> impl FnOnce(adagev::Error) -> Self + '_ {
        move |e| match e {
            adagev::Error::Io(io) => CliError::io(path, io),
            e => CliError::Core(e),
        }
    }

    /// 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> ExitCode {
        let kind = match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Data(_) => ErrorKind::Data,
        };
        ExitCode::from(match kind {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<adagev::Error> for CliError {
    fn from(e: adagev::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
