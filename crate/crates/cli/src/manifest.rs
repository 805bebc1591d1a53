use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one invocation. Not byte-stable across runs: it carries the
/// wall-clock duration.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_s: f64,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            inputs: Vec::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_s: 0.0,
            outputs: Vec::new(),
            started: Some(Instant::now()),
        }
    }

    /// Records the digest of the exact bytes that were read.
    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self) -> Self {
        if let Some(t) = self.started.take() {
            self.duration_s = t.elapsed().as_secs_f64();
        }
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
