//! Driver for the dual-control bound solver: configuration, parallel
//! orchestration of optimizer and simulator, and CSV/text reports.

use std::path::PathBuf;

pub mod config;
pub mod report;
pub mod run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    /// 1 for invalid input or unwritable output, 2 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn numerical(e: dualbound_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}
