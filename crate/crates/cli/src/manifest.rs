//! Every run directory carries a manifest.json that pins what ran: the
//! resolved config after flag merging, every named seed, the artifact paths,
//! the code version, and wall clock bounds. It is written atomically before
//! the first artifact, so a killed run leaves an honest `incomplete` marker
//! next to whatever it managed to produce.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub command: String,
    pub status: RunStatus,
    pub started_at_unix_ms: u64,
    pub finished_at_unix_ms: Option<u64>,
    /// Every named random seed the run draws from.
    pub seeds: BTreeMap<String, u64>,
    /// Paths of the artifacts this run writes, relative to the run directory.
    pub artifacts: Vec<String>,
    /// The effective configuration after file and flag merging. Replaying
    /// this config with these seeds reproduces the run's artifacts.
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn begin(
        command: &str,
        config: serde_json::Value,
        seeds: BTreeMap<String, u64>,
        artifacts: Vec<String>,
    ) -> RunManifest {
        RunManifest {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            status: RunStatus::Incomplete,
            started_at_unix_ms: now_ms(),
            finished_at_unix_ms: None,
            seeds,
            artifacts,
            config,
        }
    }

    pub fn mark_complete(&mut self) {
        self.status = RunStatus::Complete;
        self.finished_at_unix_ms = Some(now_ms());
    }

    /// Write `dir/manifest.json` through a temp file plus rename so readers
    /// never observe a half-written manifest.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(".manifest.json.tmp");
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(&tmp, body.as_bytes()).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_back(dir: &Path) -> RunManifest {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap();
        serde_json::from_str(&text).unwrap()
    }

    #[test]
    fn manifest_lifecycle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let seeds = BTreeMap::from([("sampling".to_string(), 42u64)]);
        let mut manifest = RunManifest::begin(
            "train-toy",
            serde_json::json!({"max_steps": 3}),
            seeds,
            vec!["checkpoint.json".into()],
        );
        manifest.save(dir.path()).unwrap();

        let on_disk = read_back(dir.path());
        assert_eq!(on_disk.status, RunStatus::Incomplete);
        assert_eq!(on_disk.finished_at_unix_ms, None);
        assert_eq!(on_disk.seeds["sampling"], 42);

        manifest.mark_complete();
        manifest.save(dir.path()).unwrap();
        let on_disk = read_back(dir.path());
        assert_eq!(on_disk.status, RunStatus::Complete);
        assert!(on_disk.finished_at_unix_ms.unwrap() >= on_disk.started_at_unix_ms);
        assert!(!dir.path().join(".manifest.json.tmp").exists());
    }

    #[test]
    fn status_serializes_lowercase() {
        let json = serde_json::to_string(&RunStatus::Incomplete).unwrap();
        assert_eq!(json, "\"incomplete\"");
    }
}
