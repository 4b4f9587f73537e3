//! Output directory layout and the content-hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::experiments::{Artifacts, Check};

pub const SUBDIRS: [&str; 3] = ["densities", "ledgers", "plots"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoError {
    pub path: PathBuf,
    pub operation: &'static str,
    pub message: String,
}

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cannot {} {}: {}", self.operation, self.path.display(), self.message)
    }
}

impl std::error::Error for IoError {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub passed: bool,
    pub error: Option<String>,
    pub config_sha256: String,
    pub checks: Vec<Check>,
    pub entries: Vec<ManifestEntry>,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|e| IoError { path: path.into(), operation: "write", message: e.to_string() })
}

/// Writes `config.echo`, every artifact and `MANIFEST.json` under `outdir`.
/// Entries are sorted by path so identical runs give identical manifests.
pub fn emit_results(
    kind: &str,
    seed: u64,
    config_echo: &str,
    artifacts: &Artifacts,
    error: Option<&str>,
    outdir: &Path,
) -> Result<Manifest, IoError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| IoError { path: p.into(), operation: "create directory", message: e.to_string() })
    };
    mkdir(outdir)?;
    for d in SUBDIRS {
        mkdir(&outdir.join(d))?;
    }
    write(&outdir.join("config.echo"), config_echo.as_bytes())?;
    let mut files: Vec<_> = artifacts.files.iter().collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let p = outdir.join(&f.path);
        if let Some(parent) = p.parent() {
            mkdir(parent)?;
        }
        write(&p, &f.bytes)?;
        entries.push(ManifestEntry { path: f.path.clone(), bytes: f.bytes.len(), sha256: sha256(&f.bytes) });
    }
    let manifest = Manifest {
        kind: kind.to_string(),
        seed,
        passed: error.is_none() && artifacts.passed(),
        error: error.map(str::to_string),
        config_sha256: sha256(config_echo.as_bytes()),
        checks: artifacts.checks.clone(),
        entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    write(&outdir.join("MANIFEST.json"), text.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_artifact_set_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = emit_results("distance", 1, "seed = 1\n", &Artifacts::default(), None, dir.path()).unwrap();
        assert!(m.entries.is_empty() && m.passed);
        for d in SUBDIRS {
            assert!(dir.path().join(d).is_dir());
        }
        assert!(dir.path().join("MANIFEST.json").is_file());
    }

    #[test]
    fn hashes_match_known_digest() {
        assert_eq!(sha256(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn unwritable_outdir_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, b"x").unwrap();
        let e = emit_results("jko", 0, "", &Artifacts::default(), None, &file.join("out")).unwrap_err();
        assert_eq!(e.operation, "create directory");
        assert!(e.to_string().contains("plain"));
    }
}
