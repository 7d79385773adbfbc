//! Content-addressed run cache: one directory per (tool version, command,
//! config digest) holding the artifacts and the run status.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::artifact::{Artifact, Outcome, Status};
use crate::{Command, LabError, RunConfig, VERSION};

const STATUS_FILE: &str = "_status";

pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn new(root: &Path, cmd: Command, cfg: &RunConfig) -> Self {
        let key = Sha256::digest(format!("{VERSION}\n{}\n{}", cmd.name(), cfg.digest()).as_bytes());
        Self {
            dir: root.join(hex::encode(key)),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// The stored outcome, or `None` on a miss or an unreadable entry.
    pub fn load(&self) -> Option<Outcome> {
        let status = std::fs::read_to_string(self.dir.join(STATUS_FILE)).ok()?;
        let (label, message) = status.split_once('\n').unwrap_or((status.as_str(), ""));
        let status = match label {
            "ok" => Status::Ok,
            "partial" => Status::Partial(message.to_string()),
            "failed" => Status::Failed(message.to_string()),
            _ => return None,
        };
        let mut names: Vec<String> = std::fs::read_dir(&self.dir)
            .ok()?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n != STATUS_FILE)
            .collect();
        names.sort();
        let artifacts = names
            .into_iter()
            .map(|n| Some(Artifact::new(n.clone(), std::fs::read(self.dir.join(&n)).ok()?)))
            .collect::<Option<Vec<_>>>()?;
        Some(Outcome { status, artifacts })
    }

    /// Writes into a sibling temporary directory and renames it into place.
    pub fn store(&self, outcome: &Outcome) -> Result<(), LabError> {
        let parent = self.dir.parent().expect("cache entry has a parent");
        std::fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".tmp-{}-{}", std::process::id(), self.dir.file_name().unwrap().to_string_lossy()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp)?;
        for a in &outcome.artifacts {
            std::fs::write(tmp.join(&a.name), &a.bytes)?;
        }
        let status = format!("{}\n{}", outcome.status.label(), outcome.status.message().unwrap_or(""));
        std::fs::write(tmp.join(STATUS_FILE), status)?;
        if self.dir.exists() {
            std::fs::remove_dir_all(&tmp)?;
            return Ok(());
        }
        std::fs::rename(&tmp, &self.dir)?;
        Ok(())
    }
}
