//! Output directory confinement and the run manifest.

use std::path::{Component, Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// SHA-256 of the effective configuration after overrides, serialized
    /// with sorted keys.
    pub config_sha256: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("output name {0:?} must be a plain file name")]
    Name(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Writes files directly inside one directory and records their checksums.
/// Names with separators or parent references are refused, so nothing is
/// written outside the directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, OutputError> {
        std::fs::create_dir_all(root).map_err(|source| OutputError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    #[cfg(test)]
    fn files(&self) -> &[FileEntry] {
        &self.files
    }

    fn checked_path(&self, name: &str) -> Result<PathBuf, OutputError> {
        let mut parts = Path::new(name).components();
        match (parts.next(), parts.next()) {
            (Some(Component::Normal(_)), None) if !name.contains(['/', '\\']) => Ok(self.root.join(name)),
            _ => Err(OutputError::Name(name.to_string())),
        }
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), OutputError> {
        let path = self.checked_path(name)?;
        std::fs::write(&path, contents).map_err(|source| OutputError::Io { path, source })?;
        let entry = FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len() as u64,
        };
        match self.files.iter_mut().find(|f| f.name == name) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        Ok(())
    }

    /// Writes the manifest listing every file written so far.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest, OutputError> {
        manifest.files = self.files.clone();
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.checked_path(MANIFEST_NAME)?;
        std::fs::write(&path, text).map_err(|source| OutputError::Io { path, source })?;
        Ok(manifest)
    }
}
