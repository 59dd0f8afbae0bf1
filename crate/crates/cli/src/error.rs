use conevac::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("numeric failure at {at}: {source}")]
    Numeric { at: String, source: Error },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("verification failed: {failed} of {total} checks")]
    Verify { failed: usize, total: usize },

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify { .. } => 1,
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric { .. } => 3,
            CliError::Fit(_) => 4,
        }
    }

    pub fn io(path: &str, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_string(),
            source,
        }
    }

    /// Configuration and domain errors exit with 2, anything else is numeric.
    pub fn eval(at: impl Into<String>, e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Coincidence => CliError::Config(e.to_string()),
            source => CliError::Numeric { at: at.into(), source },
        }
    }

    pub fn fit(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) => CliError::Config(e.to_string()),
            Error::NonIdentifiable { .. } => CliError::Fit(format!("non-identifiable amplitude: {e}")),
            Error::FitDiverged(_) | Error::NonConvergence { .. } => CliError::Fit(format!("non-convergence: {e}")),
            _ => CliError::Fit(e.to_string()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        assert_eq!(CliError::Verify { failed: 1, total: 2 }.exit_code(), 1);
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::eval("row 1", Error::Coincidence).exit_code(), 2);
        assert_eq!(CliError::eval("row 1", Error::NonFinite("x".into())).exit_code(), 3);
        let unidentified = CliError::fit(Error::NonIdentifiable {
            signal: 0.0,
            floor: 1.0,
        });
        assert_eq!(unidentified.exit_code(), 4);
        assert!(unidentified.to_string().contains("non-identifiable"));
        let diverged = CliError::fit(Error::FitDiverged("stalled".into()));
        assert_eq!(diverged.exit_code(), 4);
        assert!(diverged.to_string().contains("non-convergence"));
    }
}
