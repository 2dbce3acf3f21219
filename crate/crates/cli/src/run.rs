//! Run provenance and config loading.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use zoneforge::{Error, Result};

/// Reads a strict JSON config, or the default when no path is given.
pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// SHA-256 of the canonical JSON form of an effective configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialise");
    hex::encode(Sha256::digest(&bytes))
}

/// Provenance shared by every artifact of one run. Contains nothing
/// time-dependent so that artifacts of identical runs are byte-identical.
pub struct Run {
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    started: Instant,
}

impl Run {
    pub fn new<T: Serialize>(command: &'static str, seed: u64, config: &T) -> Self {
        Run {
            command,
            seed,
            config_hash: config_hash(config),
            config: serde_json::to_value(config).expect("configs serialise"),
            started: Instant::now(),
        }
    }

    pub fn provenance(&self) -> Value {
        json!({
            "tool": "zoneforge",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "config_hash": self.config_hash,
        })
    }

    /// Writes `run.json` into `dir`.
    pub fn finish(&self, dir: &Path, deterministic: bool, threads: Option<usize>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let record = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "versions": { "zoneforge": env!("CARGO_PKG_VERSION") },
            "deterministic": deterministic,
            "threads": threads,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
        });
        let path = dir.join("run.json");
        let mut text = serde_json::to_string_pretty(&record).expect("json");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}
