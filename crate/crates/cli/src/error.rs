use std::fmt;

use ksbl_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_DIAGNOSTICS: i32 = 5;
pub const EXIT_SIZE_CAP: i32 = 6;

/// A failure together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    /// Set for numerical failures so the run directory can record them.
    pub numerical: bool,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into(), numerical: false }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, message)
    }

    /// Maps core errors raised while validating configuration; everything is a config error.
    pub fn from_config(e: Error) -> Self {
        Self::config(e.to_string())
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidModel { .. } | Error::DimensionMismatch { .. } | Error::InvalidInput(_) => EXIT_CONFIG,
            Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
            Error::NotPositiveDefinite(_) | Error::NonMonotone { .. } => EXIT_NUMERICAL,
            Error::SizeCap { .. } => EXIT_SIZE_CAP,
        };
        CliError { code, message: e.to_string(), numerical: e.is_numerical() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let cases = [
            (Error::InvalidInput("x".into()), EXIT_CONFIG),
            (Error::Parse { path: "a".into(), reason: "b".into() }, EXIT_IO),
            (Error::NotPositiveDefinite("R"), EXIT_NUMERICAL),
            (Error::NonMonotone { iter: 1, before: 0.0, after: -1.0 }, EXIT_NUMERICAL),
            (Error::SizeCap { what: "K", value: 30, cap: 12 }, EXIT_SIZE_CAP),
        ];
        for (e, code) in cases {
            assert_eq!(CliError::from(e).code, code);
        }
        assert!(CliError::from(Error::NotPositiveDefinite("R")).numerical);
    }
}
