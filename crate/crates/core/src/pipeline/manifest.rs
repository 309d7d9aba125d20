//! Run manifests: which config produced a stage directory, what it read and
//! the content hash of every file it wrote.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the directory the listing was taken from.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Stage name to config hash of each upstream stage.
    pub upstream: Vec<(String, String)>,
    /// Input files, prefixed by the upstream stage (or `data`).
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wall_time_seconds: f64,
}

/// Hex sha256 of a JSON value's canonical (sorted-key) serialization.
pub fn hash_json(value: &serde_json::Value) -> String {
    // serde_json maps are BTreeMaps unless `preserve_order` is enabled, so
    // `to_string` already sorts keys.
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

pub fn hash_file(path: &Path) -> Result<(String, u64)> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let bytes = io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(hasher.finalize()), bytes))
}

fn collect(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect(&path, base, out)?;
        } else if !(dir == base && entry.file_name() == MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file below `dir` except its top-level manifest, sorted by
/// relative path (with `/` separators).
pub fn hash_tree(dir: &Path) -> Result<Vec<FileHash>> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    let mut out = files
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).expect("below dir");
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let (sha256, bytes) = hash_file(p)?;
            Ok(FileHash { path: rel, sha256, bytes })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// First listed file whose current content differs from its recorded hash.
pub fn first_mismatch(dir: &Path, files: &[FileHash]) -> Result<Option<String>> {
    for f in files {
        let path = dir.join(&f.path);
        if !path.is_file() {
            return Ok(Some(format!("{} is missing", f.path)));
        }
        if hash_file(&path)?.0 != f.sha256 {
            return Ok(Some(format!("{} changed since it was written", f.path)));
        }
    }
    Ok(None)
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = Self::path(dir);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Why this manifest's stage must be rerun given the expected config
    /// hash and inputs, or `None` when its outputs are current.
    pub fn staleness(&self, dir: &Path, config_hash: &str, inputs: &[FileHash]) -> Result<Option<String>> {
        if self.config_hash != config_hash {
            return Ok(Some("config changed".into()));
        }
        if self.inputs != inputs {
            return Ok(Some("inputs changed".into()));
        }
        if let Some(reason) = first_mismatch(dir, &self.outputs)? {
            return Ok(Some(reason));
        }
        let current = hash_tree(dir)?;
        if current.len() != self.outputs.len() {
            return Ok(Some("stage directory holds unlisted files".into()));
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        fs::write(&p, "abc").unwrap();
        // FIPS 180-2 test vector
        assert_eq!(
            hash_file(&p).unwrap(),
            ("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad".to_string(), 3)
        );
    }

    #[test]
    fn json_hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":[1,2],"a":1}"#).unwrap();
        assert_eq!(hash_json(&a), hash_json(&b));
    }

    #[test]
    fn tree_listing_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("b.txt"), "1").unwrap();
        fs::write(dir.path().join("sub/a.txt"), "2").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{}").unwrap();
        let files = hash_tree(dir.path()).unwrap();
        let names: Vec<_> = files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["b.txt", "sub/a.txt"]);
        assert_eq!(first_mismatch(dir.path(), &files).unwrap(), None);
        fs::write(dir.path().join("sub/a.txt"), "3").unwrap();
        assert!(first_mismatch(dir.path(), &files).unwrap().unwrap().contains("sub/a.txt"));
    }
}
