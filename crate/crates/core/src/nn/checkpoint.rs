//! Network checkpoints.
//!
//! `X.ckpt` holds every parameter as little-endian `f32`, in the order of
//! [`ArchConfig::conv_shapes`] (kernel then bias per convolution). The sidecar
//! `X.ckpt.json` carries the architecture, step count, RNG position and any
//! trainer metadata. Reloading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{ArchConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::io::{header_path, read_json, write_json};
use crate::rng::RngPosition;

const FORMAT: &str = "zoneforge-ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    arch: ArchConfig,
    step: u64,
    rng: RngPosition,
    dtype: String,
    n_params: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams<f32>,
    pub step: u64,
    pub rng: RngPosition,
    /// Trainer metadata (regime, normalisation statistics, ...).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let header = Header {
            format: FORMAT.into(),
            version: 1,
            arch: self.params.arch().clone(),
            step: self.step,
            rng: self.rng,
            dtype: "f32le".into(),
            n_params: self.params.num_params(),
            meta: self.meta.clone(),
        };
        let payload: Vec<u8> = self
            .params
            .tensors()
            .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect();
        fs::write(path, payload).map_err(|e| Error::io(path, e))?;
        write_json(&header_path(path), &header)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: Header = read_json(&header_path(path))?;
        if header.format != FORMAT || header.version != 1 || header.dtype != "f32le" {
            return Err(Error::Format(format!(
                "{}: not a version-1 f32 checkpoint",
                path.display()
            )));
        }
        let mut params = NetworkParams::<f32>::zeros(&header.arch)?;
        if params.num_params() != header.n_params {
            return Err(Error::Format(format!(
                "{}: header declares {} parameters, architecture has {}",
                path.display(),
                header.n_params,
                params.num_params()
            )));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 4 * header.n_params {
            return Err(Error::Format(format!(
                "{}: expected {} payload bytes, found {}",
                path.display(),
                4 * header.n_params,
                bytes.len()
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.set_flat(&values)?;
        Ok(Self {
            params,
            step: header.step,
            rng: header.rng,
            meta: header.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::rng::RngState;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = RngState::new(2);
        let params = init_params(&ArchConfig::tiny(3), &mut rng).unwrap();
        let ckpt = Checkpoint {
            params,
            step: 17,
            rng: rng.position(),
            meta: serde_json::json!({"regime": "um"}),
        };
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let bytes = fs::read(&path).unwrap();
        ckpt.save(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = init_params(&ArchConfig::tiny(1), &mut RngState::new(0)).unwrap();
        Checkpoint {
            params,
            step: 0,
            rng: RngState::new(0).position(),
            meta: serde_json::Value::Null,
        }
        .save(&path)
        .unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    }
}
