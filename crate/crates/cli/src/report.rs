use std::io;
use std::path::{Path, PathBuf};

use pmrf::bench::BenchError;
use pmrf::fis::FisError;
use pmrf::model::ParseError;
use pmrf::ve::VeError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PARSE: i32 = 4;
pub const EXIT_BOUND: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("{0}")]
    Bound(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Parse { source: ParseError::Io(_), .. } => EXIT_IO,
            CliError::Parse { .. } => EXIT_PARSE,
            CliError::Bound(_) => EXIT_BOUND,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, source: ParseError) -> Self {
        CliError::Parse { path: path.to_path_buf(), source }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::TooManyVariables { .. } => CliError::Bound(e.to_string()),
            BenchError::LengthMismatch(..) => CliError::Other(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<VeError> for CliError {
    fn from(e: VeError) -> Self {
        match e {
            VeError::ClauseTooWide { .. } | VeError::TooWide { .. } => CliError::Bound(e.to_string()),
            VeError::OrderIncomplete(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<FisError> for CliError {
    fn from(e: FisError) -> Self {
        match e {
            FisError::TooManyVariables { .. } => CliError::Bound(e.to_string()),
            FisError::NoSamples => CliError::Usage(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

/// Non-finite values serialize as `null`.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct ModelInfo {
    pub path: String,
    pub sha256: String,
    pub num_vars: u32,
    pub hard_clauses: usize,
    pub soft_clauses: usize,
}

#[derive(Debug, Default, Serialize)]
pub struct Stats {
    pub nodes: u64,
    pub leaves: u64,
    pub cache_hits: u64,
    pub samples: u64,
    pub elapsed_seconds: f64,
}

/// The single JSON object written to stdout. Field names are stable.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub model: Option<ModelInfo>,
    pub seed: Option<u64>,
    pub result: serde_json::Value,
    pub stats: Stats,
}
