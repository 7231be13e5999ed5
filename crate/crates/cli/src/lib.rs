//! Library half of the `vecmap` binary, so suites and manifests can be
//! driven from tests without spawning processes.

pub mod commands;
pub mod manifest;
pub mod suite;

use std::fmt;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad flags; clap uses the same code.
    pub const USAGE: i32 = 2;
    /// Inputs parse but are inconsistent: bad config, rig mismatch, corrupt
    /// dataset, incompatible checkpoint.
    pub const VALIDATION: i32 = 3;
    /// Anything that goes wrong while doing the work.
    pub const RUNTIME: i32 = 4;
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => exit::USAGE,
            Self::Validation(_) => exit::VALIDATION,
            Self::Runtime(_) => exit::RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Validation(m) => write!(f, "validation error: {m}"),
            Self::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<vecmap::Error> for Failure {
    fn from(e: vecmap::Error) -> Self {
        use vecmap::Error::*;
        match e {
            Config(_) | CorruptDataset { .. } | Checkpoint { .. } | Contract(_) | Json { .. } => {
                Self::Validation(e.to_string())
            }
            Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => Self::Validation(e.to_string()),
            NonFinite { .. } | UndefinedSummary(_) | Io { .. } => Self::Runtime(e.to_string()),
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

/// Worker count: `VECMAP_WORKERS` wins over `flag`, which wins over the
/// machine's parallelism.
pub fn workers(flag: Option<usize>) -> Outcome<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")));
    }
    Ok(flag.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1))
}

pub const WORKERS_ENV: &str = "VECMAP_WORKERS";
