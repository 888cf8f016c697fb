//! Reference solutions on disk, one file per SHA-256 of the reference key.

use std::fs;
use std::path::{Path, PathBuf};

use gark::estimate::ReferenceCache;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub struct DiskCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    state: Vec<f64>,
}

impl DiskCache {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(DiskCache { dir: dir.to_path_buf() })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.json", hex::encode(Sha256::digest(key.as_bytes()))))
    }
}

impl ReferenceCache for DiskCache {
    fn load(&self, key: &str) -> Option<Vec<f64>> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let entry: Entry = serde_json::from_str(&text).ok()?;
        // the full key guards against a truncated or foreign file
        (entry.key == key).then_some(entry.state)
    }

    fn store(&self, key: &str, state: &[f64]) {
        let entry = Entry {
            key: key.to_string(),
            state: state.to_vec(),
        };
        let path = self.path(key);
        let tmp = path.with_extension("tmp");
        let written = gark::io::to_json(&entry)
            .map_err(|e| e.to_string())
            .and_then(|s| fs::write(&tmp, s).map_err(|e| e.to_string()))
            .and_then(|_| fs::rename(&tmp, &path).map_err(|e| e.to_string()));
        if let Err(e) = written {
            log::warn!("could not cache reference solution in {}: {e}", path.display());
        }
    }
}
