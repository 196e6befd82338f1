use std::fmt;

use flowad_core::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Usage(_) | Error::InvalidArgument(_) | Error::MissingFile(_) => EXIT_USAGE,
            Error::Numerical(_) => EXIT_NUMERICAL,
            Error::Shape(_)
            | Error::Format(_)
            | Error::Corrupt { .. }
            | Error::Image(_)
            | Error::UndefinedMetric(_)
            | Error::Io { .. }
            | Error::Json(_) => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps an io error with the path it concerns.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::data(format!("io error on {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(CliError::from(Error::MissingFile(PathBuf::from("x"))).code, 2);
        assert_eq!(CliError::from(Error::InvalidArgument("x".into())).code, 2);
        assert_eq!(CliError::from(Error::Shape("x".into())).code, 3);
        assert_eq!(CliError::from(Error::Format("x".into())).code, 3);
        assert_eq!(CliError::from(Error::Numerical("x".into())).code, 4);
        let e = CliError::from(Error::MissingFile(PathBuf::from("/a/manifest.json")));
        assert!(e.message.contains("/a/manifest.json"));
    }
}
