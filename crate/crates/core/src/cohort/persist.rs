//! On-disk cohort layout:
//!
//! ```text
//! dir/manifest.json      format version, provenance, sha256 per file
//! dir/schema.json
//! dir/subjects.csv       id, label, nine event flags, one column per schema column
//! dir/volumes/<id>.rvf   (+ .rvf.json header)
//! dir/masks/<id>.rvf     (+ .rvf.json header)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, ColumnKind, EventFlags, FeatureSchema, Label, Provenance, Subject, Value, EVENT_NAMES};
use crate::error::{Error, IoContext, Result};
use crate::imaging::{Mask3D, Volume3D};
use crate::seed::sha256_hex;

pub const COHORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    provenance: Provenance,
    n_subjects: usize,
    files: BTreeMap<String, String>,
}

fn volume_rel(id: &str) -> String {
    format!("volumes/{id}.rvf")
}

fn mask_rel(id: &str) -> String {
    format!("masks/{id}.rvf")
}

fn header_rel(rel: &str) -> String {
    format!("{rel}.json")
}

fn write_file(dir: &Path, rel: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    let p = dir.join(rel);
    fs::write(&p, bytes).at(&p)?;
    files.insert(rel.to_string(), sha256_hex(bytes));
    Ok(())
}

fn hash_existing(dir: &Path, rel: &str, files: &mut BTreeMap<String, String>) -> Result<()> {
    let p = dir.join(rel);
    files.insert(rel.to_string(), sha256_hex(&fs::read(&p).at(&p)?));
    Ok(())
}

fn format_value(v: &Option<Value>) -> String {
    match v {
        None => String::new(),
        // Display for f64 is the shortest string that parses back exactly
        Some(Value::Numeric(x)) => x.to_string(),
        Some(Value::Category(s)) => s.clone(),
    }
}

pub fn persist_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("volumes")).at(dir)?;
    fs::create_dir_all(dir.join("masks")).at(dir)?;
    let mut files = BTreeMap::new();

    write_file(dir, "schema.json", &serde_json::to_vec_pretty(&cohort.schema)?, &mut files)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(EVENT_NAMES.iter().map(|s| s.to_string()));
    header.extend(cohort.schema.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header)?;
    for s in &cohort.subjects {
        let mut row = vec![s.id.clone(), s.label().as_str().to_string()];
        row.extend(s.events.to_array().iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        row.extend(s.record.iter().map(format_value));
        w.write_record(&row)?;
    }
    let csv_bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))?;
    write_file(dir, "subjects.csv", &csv_bytes, &mut files)?;

    for s in &cohort.subjects {
        let vrel = volume_rel(&s.id);
        let prov = serde_json::json!({ "subject": s.id });
        let bytes = s.volume.write_rvf(&dir.join(&vrel), Some(prov))?;
        files.insert(vrel.clone(), sha256_hex(&bytes));
        hash_existing(dir, &header_rel(&vrel), &mut files)?;

        let mrel = mask_rel(&s.id);
        let bytes = s.mask.write_rvf(&dir.join(&mrel), s.volume.spacing_mm)?;
        files.insert(mrel.clone(), sha256_hex(&bytes));
        hash_existing(dir, &header_rel(&mrel), &mut files)?;
    }

    let manifest = Manifest {
        version: COHORT_FORMAT_VERSION,
        provenance: cohort.provenance.clone(),
        n_subjects: cohort.len(),
        files,
    };
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_vec_pretty(&manifest)?).at(&p)
}

fn parse_value(raw: &str, kind: &ColumnKind, column: &str) -> Result<Option<Value>> {
    if raw.is_empty() {
        return Ok(None);
    }
    match kind {
        ColumnKind::Numeric => raw
            .parse::<f64>()
            .map(|x| Some(Value::Numeric(x)))
            .map_err(|_| Error::InvalidInput(format!("column {column}: {raw:?} is not a number"))),
        ColumnKind::Categorical { .. } => Ok(Some(Value::Category(raw.to_string()))),
    }
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let mp = dir.join("manifest.json");
    if !mp.exists() {
        return Err(Error::Missing(mp.display().to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&mp).at(&mp)?)?;
    if manifest.version != COHORT_FORMAT_VERSION {
        return Err(Error::Version {
            path: mp,
            expected: COHORT_FORMAT_VERSION,
            found: manifest.version,
        });
    }
    for (rel, want) in &manifest.files {
        let p = dir.join(rel);
        if !p.exists() {
            return Err(Error::Missing(p.display().to_string()));
        }
        if sha256_hex(&fs::read(&p).at(&p)?) != *want {
            return Err(Error::Checksum(p));
        }
    }
    let read = |rel: &str| -> Result<Vec<u8>> {
        if !manifest.files.contains_key(rel) {
            return Err(Error::Missing(format!("{rel} is not listed in the manifest")));
        }
        let p = dir.join(rel);
        fs::read(&p).at(&p)
    };

    let schema: FeatureSchema = serde_json::from_slice(&read("schema.json")?)?;
    schema.validate()?;

    let csv_bytes = read("subjects.csv")?;
    let mut r = csv::Reader::from_reader(csv_bytes.as_slice());
    let width = 2 + EVENT_NAMES.len() + schema.columns.len();
    let mut subjects = Vec::with_capacity(manifest.n_subjects);
    for row in r.records() {
        let row = row?;
        if row.len() != width {
            return Err(Error::InvalidInput(format!("subjects.csv row has {} fields, expected {width}", row.len())));
        }
        let id = row[0].to_string();
        let stored = Label::parse(&row[1])?;
        let mut ev = [false; 9];
        for (k, slot) in ev.iter_mut().enumerate() {
            *slot = &row[2 + k] == "1";
        }
        let record = schema
            .columns
            .iter()
            .enumerate()
            .map(|(ci, c)| parse_value(&row[2 + 9 + ci], &c.kind, &c.name))
            .collect::<Result<Vec<_>>>()?;

        for rel in [volume_rel(&id), mask_rel(&id)] {
            if !manifest.files.contains_key(&rel) {
                return Err(Error::Missing(dir.join(rel).display().to_string()));
            }
        }
        let (volume, _) = Volume3D::read_rvf(&dir.join(volume_rel(&id)))?;
        let (mask, _) = Mask3D::read_rvf(&dir.join(mask_rel(&id)))?;
        let subject = Subject::new(id, record, volume, mask, EventFlags::from_array(ev))?;
        if subject.label() != stored {
            return Err(Error::InvalidInput(format!(
                "subject {}: stored label disagrees with its events",
                subject.id
            )));
        }
        subjects.push(subject);
    }
    if subjects.len() != manifest.n_subjects {
        return Err(Error::InvalidInput(format!(
            "manifest lists {} subjects, subjects.csv has {}",
            manifest.n_subjects,
            subjects.len()
        )));
    }
    Cohort::new(schema, subjects, manifest.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, SynthConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 12,
            n_positive: 3,
            volume_shape: [12, 16, 16],
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let c = generate_cohort(&small()).unwrap();
        let d = tempfile::tempdir().unwrap();
        persist_cohort(&c, d.path()).unwrap();
        let back = load_cohort(d.path()).unwrap();
        assert_eq!(back, c);
        let csv = fs::read_to_string(d.path().join("subjects.csv")).unwrap();
        assert_eq!(csv.lines().count(), 13);
    }

    #[test]
    fn corrupt_volume_byte_fails_checksum() {
        let c = generate_cohort(&small()).unwrap();
        let d = tempfile::tempdir().unwrap();
        persist_cohort(&c, d.path()).unwrap();
        let p = d.path().join(volume_rel(&c.subjects[4].id));
        let mut bytes = fs::read(&p).unwrap();
        bytes[100] ^= 0x01;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_cohort(d.path()), Err(Error::Checksum(_))));
    }

    #[test]
    fn missing_volume_and_version_mismatch() {
        let c = generate_cohort(&small()).unwrap();
        let d = tempfile::tempdir().unwrap();
        persist_cohort(&c, d.path()).unwrap();
        fs::remove_file(d.path().join(mask_rel(&c.subjects[0].id))).unwrap();
        assert!(matches!(load_cohort(d.path()), Err(Error::Missing(_))));

        persist_cohort(&c, d.path()).unwrap();
        let mp = d.path().join("manifest.json");
        let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&mp).unwrap()).unwrap();
        m["version"] = 99.into();
        fs::write(&mp, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(load_cohort(d.path()), Err(Error::Version { found: 99, .. })));
    }

    #[test]
    fn persisted_bytes_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        persist_cohort(&generate_cohort(&small()).unwrap(), a.path()).unwrap();
        persist_cohort(&generate_cohort(&small()).unwrap(), b.path()).unwrap();
        let ma = fs::read(a.path().join("manifest.json")).unwrap();
        let mb = fs::read(b.path().join("manifest.json")).unwrap();
        assert_eq!(ma, mb);
    }
}
