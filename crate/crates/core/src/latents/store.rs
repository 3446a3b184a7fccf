//! `latents/<extractor>/<subject>.rvf` plus `latents/<extractor>/producers.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Latent, OofLatents, ProducerRecord, TrainLog};
use crate::error::{Error, IoContext, Result};
use crate::rvf::{self, DType, RvfData, RvfHeader};

#[derive(Debug, Serialize, Deserialize)]
struct Producers {
    extractor: String,
    producers: Vec<ProducerRecord>,
    logs: Vec<TrainLog>,
}

pub fn write_latents(root: &Path, oof: &OofLatents) -> Result<()> {
    let dir = root.join(&oof.extractor);
    fs::create_dir_all(&dir).at(&dir)?;
    for (id, l) in &oof.latents {
        let mut h = RvfHeader::new(l.shape.clone(), vec![1.0; l.shape.len()], DType::F32);
        h.provenance = Some(serde_json::json!({
            "subject": id,
            "producer": l.producer,
            "fold": l.fold,
        }));
        rvf::write(&dir.join(format!("{id}.rvf")), &h, &RvfData::F32(l.data.clone()))?;
    }
    let p = dir.join("producers.json");
    let body = Producers {
        extractor: oof.extractor.clone(),
        producers: oof.producers.clone(),
        logs: oof.logs.clone(),
    };
    fs::write(&p, serde_json::to_vec_pretty(&body)?).at(&p)
}

/// Loads the latents of `ids`; any absent subject or an absent store is a
/// [`Error::Missing`].
pub fn load_latents(root: &Path, extractor: &str, ids: &[String]) -> Result<OofLatents> {
    let dir = root.join(extractor);
    let p = dir.join("producers.json");
    if !p.exists() {
        return Err(Error::Missing(format!(
            "latent store {} is empty (run extract-latents first)",
            dir.display()
        )));
    }
    let body: Producers = serde_json::from_slice(&fs::read(&p).at(&p)?)?;
    let mut latents = BTreeMap::new();
    for id in ids {
        let path = dir.join(format!("{id}.rvf"));
        let (h, data, _) = rvf::read(&path)?;
        let RvfData::F32(data) = data else {
            return Err(Error::InvalidInput(format!("{}: latent must be f32", path.display())));
        };
        let prov = h.provenance.unwrap_or_default();
        let producer = prov["producer"]
            .as_str()
            .ok_or_else(|| Error::InvalidInput(format!("{}: latent header lacks a producer", path.display())))?
            .to_string();
        let fold = prov["fold"].as_u64().map(|f| f as usize);
        latents.insert(
            id.clone(),
            Latent {
                shape: h.shape,
                data,
                producer,
                fold,
            },
        );
    }
    Ok(OofLatents {
        extractor: body.extractor,
        latents,
        producers: body.producers,
        logs: body.logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_missing_store() {
        let d = tempfile::tempdir().unwrap();
        let ids = vec!["S1".to_string(), "S2".to_string()];
        assert!(matches!(load_latents(d.path(), "ae2d", &ids), Err(Error::Missing(_))));
        let mut latents = BTreeMap::new();
        for (k, id) in ids.iter().enumerate() {
            latents.insert(
                id.clone(),
                Latent {
                    shape: vec![2, 1, 2],
                    data: vec![k as f32, 1.5, -2.0, 0.25],
                    producer: format!("ae2d/fold{k}"),
                    fold: Some(k),
                },
            );
        }
        let oof = OofLatents {
            extractor: "ae2d".into(),
            latents,
            producers: vec![],
            logs: vec![],
        };
        write_latents(d.path(), &oof).unwrap();
        assert_eq!(load_latents(d.path(), "ae2d", &ids).unwrap(), oof);
        assert!(load_latents(d.path(), "ae2d", &["S3".to_string()]).is_err());
    }
}
