//! Run manifests: a JSON record of the fully resolved configuration,
//! input digests, and outputs of one command invocation, sufficient to
//! reproduce the run.

use pcdistill::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One input file and its content digest.
#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    /// Path as given on the command line.
    pub path: String,
    /// SHA-256 of the file contents, lowercase hex.
    pub sha256: String,
}

/// The reproducibility record written beside every artifact-producing run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Subcommand name.
    pub command: String,
    /// Tool version that produced the artifacts.
    pub version: String,
    /// Fully resolved configuration (defaults materialized), as the flat
    /// key/value pairs a config file would hold.
    pub config: BTreeMap<String, String>,
    /// Digests of every input file.
    pub inputs: Vec<InputDigest>,
    /// Paths of every file the run wrote (manifest excluded).
    pub outputs: Vec<String>,
    /// Wall-clock duration of the run in seconds.
    pub wall_seconds: f64,
}

impl RunManifest {
    /// Fresh manifest for a command, stamped with the crate version.
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    /// Records one resolved configuration value.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    /// Records an input file with its digest.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(path)?,
        });
        Ok(())
    }

    /// Records an output path.
    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Serializes to pretty JSON and writes.
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// SHA-256 of a file's contents as lowercase hex.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Sibling path with the final extension replaced (e.g. `out.pcds` →
/// `out.trace.csv`).
pub fn sibling(primary: &Path, extension: &str) -> PathBuf {
    primary.with_extension(extension)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_hex(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bin");
        std::fs::write(&input, b"data").unwrap();
        let mut m = RunManifest::new("distill");
        m.set("ppc", 3);
        m.set("lambda_alpha", 0.006);
        m.add_input(&input).unwrap();
        m.add_output(&dir.path().join("out.pcds"));
        m.wall_seconds = 1.5;
        let path = dir.path().join("m.json");
        m.write(&path).unwrap();
        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parsed["command"], "distill");
        assert_eq!(parsed["config"]["ppc"], "3");
        assert_eq!(parsed["config"]["lambda_alpha"], "0.006");
        assert_eq!(parsed["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn sibling_replaces_the_extension() {
        assert_eq!(sibling(Path::new("runs/out.pcds"), "trace.csv"), Path::new("runs/out.trace.csv"));
        assert_eq!(sibling(Path::new("out"), "manifest.json"), Path::new("out.manifest.json"));
    }
}
