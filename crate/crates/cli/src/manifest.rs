use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{Failure, Outcome};

pub const FILE: &str = "experiment.json";

/// Provenance record written next to every artifact directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub command_line: Vec<String>,
    pub code_version: String,
    pub master_seed: u64,
    pub dataset_checksum: Option<String>,
    /// Snapshot of the effective configuration, if the command has one.
    pub config: Option<serde_json::Value>,
    /// Seconds since the Unix epoch; the only nondeterministic field.
    pub created: u64,
}

impl ExperimentManifest {
    pub fn new(command: &str, master_seed: u64) -> Self {
        Self {
            command: command.into(),
            command_line: std::env::args().collect(),
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            master_seed,
            dataset_checksum: None,
            config: None,
            created: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> Outcome<()> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("creating {}: {e}", dir.display())))?;
        let path = dir.join(FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
    }

    pub fn read(dir: &Path) -> Outcome<Self> {
        let path = dir.join(FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::Validation(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("parsing {}: {e}", path.display())))
    }
}
