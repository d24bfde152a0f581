//! Batch front end: config parsing, sweep orchestration and result files.

pub mod commands;
pub mod config;
pub mod output;

use serde::Serialize;

pub use commands::{run, Command, RunOptions};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] korn_shell::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Process exit status for an error.
pub fn exit_code(err: &CliError) -> i32 {
    use korn_shell::Error as E;
    match err {
        CliError::Config(_) => 2,
        CliError::Io(_) | CliError::Core(E::Io(_)) => 1,
        CliError::Core(E::NoConvergence { .. } | E::Breakdown(_) | E::NotPositiveDefinite) => 3,
        CliError::Core(_) => 2,
    }
}

fn error_kind(err: &CliError) -> String {
    match err {
        CliError::Config(_) => "config".into(),
        CliError::Io(_) => "io".into(),
        CliError::Core(e) => {
            let s = format!("{e:?}");
            s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("core").to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub status: &'static str,
    pub exit_code: i32,
    pub kind: String,
    pub message: String,
}

impl Diagnostic {
    pub fn from_error(err: &CliError) -> Self {
        Self { status: "error", exit_code: exit_code(err), kind: error_kind(err), message: err.to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&CliError::Config("x".into())), 2);
        assert_eq!(exit_code(&korn_shell::Error::NoConvergence { iterations: 1, residual: 1.0 }.into()), 3);
        assert_eq!(exit_code(&korn_shell::Error::Breakdown("b".into()).into()), 3);
        assert_eq!(exit_code(&korn_shell::Error::ThicknessTooLarge { h: 3.0, ratio: 1.5 }.into()), 2);
        let d = Diagnostic::from_error(&korn_shell::Error::NoFlatPoints.into());
        assert_eq!((d.kind.as_str(), d.exit_code), ("NoFlatPoints", 2));
    }
}
