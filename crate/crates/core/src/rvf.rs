//! Raw volume format: a JSON header `<name>.rvf.json` next to a raw
//! little-endian, C-ordered payload `<name>.rvf`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32-le")]
    F32,
    #[serde(rename = "u8-le")]
    U8,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvfHeader {
    pub shape: Vec<usize>,
    pub spacing_mm: Vec<f64>,
    pub dtype: DType,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl RvfHeader {
    pub fn new(shape: Vec<usize>, spacing_mm: Vec<f64>, dtype: DType) -> Self {
        Self {
            shape,
            spacing_mm,
            dtype,
            order: "C".into(),
            provenance: None,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RvfData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// Path of the header file belonging to a payload path `x.rvf`.
pub fn header_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Writes header and payload; returns the payload bytes (for checksumming).
pub fn write(payload: &Path, header: &RvfHeader, data: &RvfData) -> Result<Vec<u8>> {
    let bytes = match (header.dtype, data) {
        (DType::F32, RvfData::F32(v)) => encode_f32(v),
        (DType::U8, RvfData::U8(v)) => v.clone(),
        _ => return Err(Error::InvalidInput("RVF dtype does not match data".into())),
    };
    if bytes.len() != header.element_count() * header.dtype.width() {
        return Err(Error::Shape {
            expected: header.shape.clone(),
            actual: vec![bytes.len() / header.dtype.width()],
        });
    }
    if let Some(dir) = payload.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let hp = header_path(payload);
    fs::write(&hp, serde_json::to_vec_pretty(header)?).at(&hp)?;
    fs::write(payload, &bytes).at(payload)?;
    Ok(bytes)
}

pub fn read_header(payload: &Path) -> Result<RvfHeader> {
    let hp = header_path(payload);
    if !hp.exists() {
        return Err(Error::Missing(hp.display().to_string()));
    }
    let h: RvfHeader = serde_json::from_slice(&fs::read(&hp).at(&hp)?)?;
    if h.order != "C" {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported order {}",
            hp.display(),
            h.order
        )));
    }
    Ok(h)
}

/// Reads header and payload; returns the raw payload bytes alongside.
pub fn read(payload: &Path) -> Result<(RvfHeader, RvfData, Vec<u8>)> {
    let header = read_header(payload)?;
    if !payload.exists() {
        return Err(Error::Missing(payload.display().to_string()));
    }
    let bytes = fs::read(payload).at(payload)?;
    if bytes.len() != header.element_count() * header.dtype.width() {
        return Err(Error::InvalidInput(format!(
            "{}: payload has {} bytes, header implies {}",
            payload.display(),
            bytes.len(),
            header.element_count() * header.dtype.width()
        )));
    }
    let data = match header.dtype {
        DType::F32 => RvfData::F32(decode_f32(&bytes)),
        DType::U8 => RvfData::U8(bytes.clone()),
    };
    Ok((header, data, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.rvf");
        let h = RvfHeader::new(vec![2, 1, 3], vec![1.0, 2.0, 0.5], DType::F32);
        let v = vec![0.0f32, -1.5, 2.25, f32::MIN_POSITIVE, 1e9, 3.0];
        write(&p, &h, &RvfData::F32(v.clone())).unwrap();
        let (h2, d2, _) = read(&p).unwrap();
        assert_eq!(h, h2);
        assert_eq!(d2, RvfData::F32(v));
        let json: serde_json::Value =
            serde_json::from_slice(&fs::read(header_path(&p)).unwrap()).unwrap();
        assert_eq!(json["dtype"], "f32-le");
        assert_eq!(json["order"], "C");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rvf");
        let h = RvfHeader::new(vec![4], vec![1.0], DType::U8);
        write(&p, &h, &RvfData::U8(vec![1, 0, 1, 1])).unwrap();
        fs::write(&p, [1u8, 0]).unwrap();
        assert!(read(&p).is_err());
    }
}
