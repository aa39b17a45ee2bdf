//! Stage manifests: content digests that make stages skippable and runs
//! auditable.
//!
//! Every stage records a digest of its relevant config slice, of each input
//! file, and of each output file. A stage re-runs only if any of those
//! digests changed; otherwise it is a no-op that leaves the outputs alone.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(PipelineError::io(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(PipelineError::io(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest of a config slice: `key = value` lines joined in order.
pub fn config_digest(entries: &[(String, String)]) -> String {
    let joined: String = entries
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    sha256_bytes(joined.as_bytes())
}

/// What one stage read, wrote, and was configured with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_digest: String,
    /// Input path -> content digest.
    pub inputs: BTreeMap<String, String>,
    /// Output path -> content digest.
    pub outputs: BTreeMap<String, String>,
    pub unix_timestamp: u64,
    /// "ran", optionally with detail, or "skipped: up to date".
    pub note: String,
}

impl StageManifest {
    pub fn was_skipped(&self) -> bool {
        self.note.starts_with("skipped")
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Loads a manifest if present; a missing file is `None`, a corrupt one an
/// error.
pub fn load_manifest(path: &Path) -> Result<Option<StageManifest>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(PipelineError::io(path)(e)),
    };
    let manifest = serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Format(format!("manifest {}: {e}", path.display())))?;
    Ok(Some(manifest))
}

pub fn save_manifest(manifest: &StageManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(PipelineError::io(parent))?;
    }
    let mut json =
        serde_json::to_vec_pretty(manifest).map_err(|e| PipelineError::Format(e.to_string()))?;
    json.push(b'\n');
    std::fs::write(path, json).map_err(PipelineError::io(path))
}

/// Digests a list of files into a path -> digest map, using the given root
/// for display-friendly relative keys where possible.
pub fn digest_files(paths: &[PathBuf], root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for path in paths {
        let key = path
            .strip_prefix(root)
            .unwrap_or(path)
            .display()
            .to_string();
        out.insert(key, sha256_file(path)?);
    }
    Ok(out)
}

/// True when a previous manifest proves this stage's work is current: same
/// config digest, same input digests, and every output still present with
/// its recorded digest.
pub fn is_up_to_date(
    previous: &StageManifest,
    config_digest: &str,
    inputs: &BTreeMap<String, String>,
    output_paths: &[PathBuf],
    root: &Path,
) -> bool {
    if previous.config_digest != config_digest || &previous.inputs != inputs {
        return false;
    }
    let expected: std::collections::BTreeSet<String> = output_paths
        .iter()
        .map(|p| p.strip_prefix(root).unwrap_or(p).display().to_string())
        .collect();
    if expected != previous.outputs.keys().cloned().collect() {
        return false;
    }
    for path in output_paths {
        let key = path
            .strip_prefix(root)
            .unwrap_or(path)
            .display()
            .to_string();
        match sha256_file(path) {
            Ok(digest) => {
                if previous.outputs.get(&key) != Some(&digest) {
                    return false;
                }
            }
            Err(_) => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_stable_and_content_sensitive() {
        assert_eq!(sha256_bytes(b"abc"), sha256_bytes(b"abc"));
        assert_ne!(sha256_bytes(b"abc"), sha256_bytes(b"abd"));
        // A fixed reference value pins the algorithm choice.
        assert_eq!(
            sha256_bytes(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifests_round_trip_via_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifests/ingest.json");
        assert_eq!(load_manifest(&path).unwrap(), None);
        let manifest = StageManifest {
            stage: "ingest".into(),
            config_digest: "cfg".into(),
            inputs: [("a".to_string(), "1".to_string())].into_iter().collect(),
            outputs: BTreeMap::new(),
            unix_timestamp: 123,
            note: "ran".into(),
        };
        save_manifest(&manifest, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), Some(manifest));
    }

    #[test]
    fn corrupt_manifests_error_instead_of_vanishing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, b"{ not json").unwrap();
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn up_to_date_requires_matching_everything() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let out = root.join("out.txt");
        std::fs::write(&out, b"payload").unwrap();
        let outputs = digest_files(std::slice::from_ref(&out), root).unwrap();
        let manifest = StageManifest {
            stage: "demo".into(),
            config_digest: "cfg".into(),
            inputs: BTreeMap::new(),
            outputs,
            unix_timestamp: 0,
            note: "ran".into(),
        };
        let empty = BTreeMap::new();
        assert!(is_up_to_date(
            &manifest,
            "cfg",
            &empty,
            std::slice::from_ref(&out),
            root
        ));
        // Different config digest.
        assert!(!is_up_to_date(
            &manifest,
            "cfg2",
            &empty,
            std::slice::from_ref(&out),
            root
        ));
        // Different inputs.
        let inputs = [("x".to_string(), "1".to_string())].into_iter().collect();
        assert!(!is_up_to_date(
            &manifest,
            "cfg",
            &inputs,
            std::slice::from_ref(&out),
            root
        ));
        // Output rewritten.
        std::fs::write(&out, b"tampered").unwrap();
        assert!(!is_up_to_date(
            &manifest,
            "cfg",
            &empty,
            std::slice::from_ref(&out),
            root
        ));
        // Output gone.
        std::fs::remove_file(&out).unwrap();
        assert!(!is_up_to_date(&manifest, "cfg", &empty, &[out], root));
    }

    #[test]
    fn config_digest_tracks_entry_changes() {
        let a = vec![("k".to_string(), "1".to_string())];
        let b = vec![("k".to_string(), "2".to_string())];
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a), config_digest(&a.clone()));
    }
}
