//! Single-file model checkpoints: `FBCK` magic, u32 format version, u64
//! header length, JSON header, then all parameters as little-endian f32 in
//! declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

use super::layers::Module;
use super::real::Real;

pub const MAGIC: &[u8; 4] = b"FBCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: String,
    pub config_hash: String,
    pub seed: u64,
    pub fold: Option<usize>,
    pub scenario: Option<String>,
    /// Free-form metadata (e.g. the training subject ids).
    pub meta: serde_json::Value,
    #[serde(default)]
    pub params: Vec<ParamInfo>,
}

pub fn save<T: Real, M: Module<T>>(path: &Path, header: &CheckpointHeader, model: &M) -> Result<()> {
    let mut header = header.clone();
    header.params = model
        .params()
        .iter()
        .map(|p| ParamInfo {
            name: p.name.clone(),
            shape: p.shape.clone(),
        })
        .collect();
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + model.num_params() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params() {
        for v in &p.value {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, buf).at(path)
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    blob: Vec<u8>,
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Missing(path.display().to_string()));
    }
    let bytes = fs::read(path).at(path)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::InvalidInput(format!("{}: not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(
        bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::InvalidInput("truncated checkpoint header".into()))?,
    )?;
    Ok(Checkpoint {
        header,
        blob: bytes[16 + hlen..].to_vec(),
    })
}

impl Checkpoint {
    /// Copies stored parameters into a freshly constructed model of the same
    /// architecture, checking names and shapes.
    pub fn restore<T: Real, M: Module<T>>(&self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.header.params.len() {
            return Err(Error::InvalidInput(format!(
                "checkpoint has {} tensors, model has {}",
                self.header.params.len(),
                params.len()
            )));
        }
        let total: usize = params.iter().map(|p| p.value.len()).sum();
        if self.blob.len() != total * 4 {
            return Err(Error::InvalidInput("checkpoint parameter blob size mismatch".into()));
        }
        let mut off = 0;
        for (p, info) in params.iter_mut().zip(&self.header.params) {
            if p.name != info.name || p.shape != info.shape {
                return Err(Error::InvalidInput(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    info.name, info.shape, p.name, p.shape
                )));
            }
            for v in p.value.iter_mut() {
                let f = f32::from_le_bytes(self.blob[off..off + 4].try_into().unwrap());
                *v = T::lit(f as f64);
                off += 4;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use crate::seed;

    #[test]
    fn round_trip_restores_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let lin = Linear::<f32>::new("head", 3, 2, &mut seed::rng(9));
        let header = CheckpointHeader {
            architecture: "linear".into(),
            config_hash: "abc".into(),
            seed: 9,
            fold: Some(1),
            scenario: None,
            meta: serde_json::json!({}),
            params: vec![],
        };
        save(&path, &header, &lin).unwrap();
        let ck = read(&path).unwrap();
        assert_eq!(ck.header.fold, Some(1));
        let mut other = Linear::<f32>::zeroed("head", 3, 2);
        ck.restore(&mut other).unwrap();
        assert_eq!(other.weight.value, lin.weight.value);

        let mut wrong = Linear::<f32>::zeroed("head", 2, 3);
        assert!(ck.restore(&mut wrong).is_err());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let lin = Linear::<f32>::zeroed("h", 1, 1);
        let header = CheckpointHeader {
            architecture: "linear".into(),
            config_hash: String::new(),
            seed: 0,
            fold: None,
            scenario: None,
            meta: serde_json::Value::Null,
            params: vec![],
        };
        save(&path, &header, &lin).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read(&path), Err(Error::Version { found: 9, .. })));
    }
}
