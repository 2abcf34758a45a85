//! Persistent record of job outcomes, written by atomic rename.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEDGER_FILE: &str = "ledger.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobStatus {
    Done,
    Failed { error: String },
    Skipped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    /// Digest of the job definition, its training settings, the input data
    /// and the hashes of its dependencies.
    pub hash: String,
    pub seed: u64,
    pub status: JobStatus,
    pub dir: PathBuf,
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl JobRecord {
    pub fn is_done(&self) -> bool {
        self.status == JobStatus::Done
    }

    /// Done and every recorded artifact still on disk.
    pub fn is_reusable(&self, hash: &str) -> bool {
        self.is_done() && self.hash == hash && self.artifacts.values().all(|p| p.exists())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub jobs: BTreeMap<String, JobRecord>,
}

impl RunLedger {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Writes to a sibling temporary file and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("ledger serializes");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn failures(&self) -> Vec<(&str, &str)> {
        self.jobs
            .iter()
            .filter_map(|(id, r)| match &r.status {
                JobStatus::Failed { error } => Some((id.as_str(), error.as_str())),
                _ => None,
            })
            .collect()
    }

    pub fn artifact(&self, job: &str, name: &str) -> Option<&Path> {
        self.jobs.get(job).filter(|r| r.is_done()).and_then(|r| r.artifacts.get(name)).map(PathBuf::as_path)
    }

    /// Metric report CSVs of every completed segmentation and bound job.
    pub fn reports(&self) -> BTreeMap<&str, &Path> {
        self.jobs
            .iter()
            .filter(|(_, r)| r.is_done())
            .filter_map(|(id, r)| r.artifacts.get("report").map(|p| (id.as_str(), p.as_path())))
            .collect()
    }
}
