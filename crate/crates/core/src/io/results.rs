//! Result directories: every file written through [`ResultDir`] is listed
//! with its SHA-256 in `manifest.json`, and a lock file keeps two runs out
//! of the same directory.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::snapshot::write_snapshot;
use crate::nn::WeightSnapshot;

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".rll.lock";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub created_unix: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug)]
pub struct ResultDir {
    root: PathBuf,
    files: Vec<String>,
}

impl ResultDir {
    /// Creates `root` if needed and takes its lock.
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::Locked(lock)),
            Err(e) => return Err(Error::io(&lock, e)),
        }
        Ok(ResultDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    /// Writes a CSV; fields must not contain commas or newlines.
    pub fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_snapshot(&mut self, rel: &str, w: &WeightSnapshot) -> Result<PathBuf> {
        let mut bytes = Vec::new();
        write_snapshot(w, &mut bytes)?;
        self.write_bytes(rel, &bytes)
    }

    /// Hashes every written file, writes the manifest and releases the lock.
    pub fn finish(mut self, config_json: &str) -> Result<ResultManifest> {
        self.files.sort();
        let files = self
            .files
            .iter()
            .map(|rel| {
                let path = self.root.join(rel);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                Ok(ManifestEntry {
                    path: rel.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = ResultManifest {
            tool: "rll".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config_json.as_bytes()),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

impl Drop for ResultDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK));
    }
}

/// Reads `dir/manifest.json` and checks every listed file's checksum.
pub fn verify_manifest(dir: &Path) -> Result<ResultManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ResultManifest = serde_json::from_str(&text)?;
    for entry in &manifest.files {
        let file = dir.join(&entry.path);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let found = sha256_hex(&bytes);
        if found != entry.sha256 {
            return Err(Error::Checksum {
                path: file,
                expected: entry.sha256.clone(),
                found,
            });
        }
    }
    Ok(manifest)
}
