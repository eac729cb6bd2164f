//! Benchmark harness: synthetic benchmark generation, calibrator runs and leaderboard reports.

pub mod report;
pub mod run;
pub mod synth;

use std::fmt;

use calbench::io::IoError;

pub use report::{cmd_report, ReportConfig, ReportOutputs};
pub use run::{cmd_run, RunConfig, RunSummary};
pub use synth::{cmd_synth, Miscalibration, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    IncompleteResults(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::IncompleteResults(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::IncompleteResults(m) => write!(f, "incomplete results: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
