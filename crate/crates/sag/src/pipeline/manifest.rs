//! Per-stage manifests: content hashes of inputs and outputs plus a config
//! echo, so an unchanged stage can be skipped and any artifact re-verified.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::Digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    /// Artifact file name to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
    /// The stage-relevant slice of the pipeline config.
    pub config_echo: serde_json::Value,
}

impl StageManifest {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("manifest serializes")
    }

    /// True when the recorded hashes still describe the filesystem.
    pub fn still_valid(
        &self,
        inputs: &BTreeMap<String, String>,
        config_echo: &serde_json::Value,
        dir: &Path,
    ) -> bool {
        if &self.inputs != inputs || &self.config_echo != config_echo {
            return false;
        }
        self.outputs.iter().all(|(name, recorded)| {
            file_hash(dir.join(name)).map(|h| &h == recorded).unwrap_or(false)
        })
    }
}

/// sha256 of a file's bytes, hex encoded.
pub fn file_hash(path: impl AsRef<Path>) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(sha2::Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("artifact.bin");
        std::fs::write(&path, b"some bytes").unwrap();
        let a = file_hash(&path).unwrap();
        let b = file_hash(&path).unwrap();
        assert_eq!(a, b);
        std::fs::write(&path, b"other bytes").unwrap();
        assert_ne!(a, file_hash(&path).unwrap());
    }

    #[test]
    fn validity_tracks_inputs_outputs_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.txt");
        std::fs::write(&out, b"result").unwrap();

        let inputs = BTreeMap::from([("in.txt".to_string(), "abc".to_string())]);
        let outputs =
            BTreeMap::from([("out.txt".to_string(), file_hash(&out).unwrap())]);
        let echo = serde_json::json!({"seed": 1});
        let manifest = StageManifest {
            stage: "demo".into(),
            inputs: inputs.clone(),
            outputs,
            wall_time_secs: 0.1,
            config_echo: echo.clone(),
        };
        assert!(manifest.still_valid(&inputs, &echo, dir.path()));

        // changed config invalidates
        assert!(!manifest.still_valid(&inputs, &serde_json::json!({"seed": 2}), dir.path()));
        // changed input hash invalidates
        let other = BTreeMap::from([("in.txt".to_string(), "zzz".to_string())]);
        assert!(!manifest.still_valid(&other, &echo, dir.path()));
        // tampered output invalidates
        std::fs::write(&out, b"tampered").unwrap();
        assert!(!manifest.still_valid(&inputs, &echo, dir.path()));
    }
}
