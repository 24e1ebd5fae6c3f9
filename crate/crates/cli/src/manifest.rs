use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Record of one CLI invocation: inputs, resolved constants, outputs with digests.
#[derive(Debug, Serialize)]
pub struct ExperimentManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub input_digest: String,
    pub lambda: serde_json::Value,
    pub outputs: Vec<OutputFile>,
    pub stages: Vec<Stage>,
    #[serde(skip)]
    dir: PathBuf,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

impl ExperimentManifest {
    pub fn new(dir: &Path, command: &str, seed: u64, config: serde_json::Value) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let input_digest = sha256_hex(format!("{command}\n{seed}\n{config}").as_bytes());
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config,
            input_digest,
            lambda: serde_json::Value::Null,
            outputs: Vec::new(),
            stages: Vec::new(),
            dir: dir.to_path_buf(),
            clock: None,
        })
    }

    pub fn start(&mut self, name: &str) {
        self.stop();
        self.clock = Some((name.to_string(), Instant::now()));
    }

    pub fn stop(&mut self) {
        if let Some((name, t0)) = self.clock.take() {
            self.stages.push(Stage { name, seconds: t0.elapsed().as_secs_f64() });
        }
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.outputs.push(OutputFile { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        self.stop();
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&self).expect("manifest serializes"))?;
        Ok(path)
    }
}
