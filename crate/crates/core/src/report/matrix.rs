//! `matrix.json`, `predictions.csv` and `audit.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{threshold_label, Prediction};
use crate::cohort::{Cohort, Label};
use crate::error::{Error, IoContext, Result};
use crate::evalharness::{FoldAudit, FoldMetrics, ScenarioResult, ScenarioSpec};

/// One scenario's metrics. Wall-clock time is left out so that reruns are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub scenario: String,
    pub spec: ScenarioSpec,
    pub folds: Vec<FoldMetrics>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub pooled_f1: f64,
    pub pooled_auc: f64,
    pub threshold: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub seed: u64,
    pub run_hash: String,
    pub n_subjects: usize,
    pub n_positive: usize,
    pub k: usize,
    pub entries: Vec<MatrixEntry>,
}

impl Matrix {
    pub fn from_results(seed: u64, run_hash: String, cohort: &Cohort, k: usize, results: &[ScenarioResult]) -> Self {
        Self {
            seed,
            run_hash,
            n_subjects: cohort.len(),
            n_positive: cohort.n_positive(),
            k,
            entries: results
                .iter()
                .map(|r| MatrixEntry {
                    scenario: r.scenario.clone(),
                    spec: r.spec,
                    folds: r.folds.clone(),
                    mean_f1: r.mean_f1,
                    std_f1: r.std_f1,
                    mean_auc: r.mean_auc,
                    std_auc: r.std_auc,
                    pooled_f1: r.pooled_f1,
                    pooled_auc: r.pooled_auc,
                    threshold: r.threshold,
                    config_hash: r.config_hash.clone(),
                })
                .collect(),
        }
    }

    pub fn entry(&self, scenario: &str) -> Option<&MatrixEntry> {
        self.entries.iter().find(|e| e.scenario == scenario)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        fs::write(path, body).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(format!("{} (run the matrix first)", path.display())));
        }
        Ok(serde_json::from_slice(&fs::read(path).at(path)?)?)
    }
}

/// One row of `predictions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub subject_id: String,
    /// `model/inputs`.
    pub scenario: String,
    /// `pre_op`, `pre+post`, or empty for image-only inputs.
    pub phase: String,
    pub fold: usize,
    pub probability: f64,
    pub label_true: u8,
    pub label_pred: u8,
}

impl PredictionRow {
    /// Full scenario id, as used in `matrix.json`.
    pub fn scenario_id(&self) -> String {
        if self.phase.is_empty() {
            self.scenario.clone()
        } else {
            format!("{}/{}", self.scenario, self.phase)
        }
    }

    pub fn positive(&self) -> bool {
        self.label_true == 1
    }
}

pub fn prediction_rows(results: &[ScenarioResult], cohort: &Cohort) -> Result<Vec<PredictionRow>> {
    let labels: std::collections::HashMap<&str, Label> =
        cohort.subjects.iter().map(|s| (s.id.as_str(), s.label())).collect();
    let mut rows = Vec::new();
    for r in results {
        for p in &r.predictions {
            let Prediction {
                subject_id,
                fold,
                probability,
                ..
            } = p;
            let y = labels
                .get(subject_id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("prediction for unknown subject {subject_id}")))?;
            rows.push(PredictionRow {
                subject_id: subject_id.clone(),
                scenario: r.spec.base_id(),
                phase: r.spec.phase.map(|p| p.as_str().to_string()).unwrap_or_default(),
                fold: *fold,
                probability: *probability,
                label_true: y.is_positive() as u8,
                label_pred: threshold_label(*probability, r.threshold).is_positive() as u8,
            });
        }
    }
    Ok(rows)
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    if !path.exists() {
        return Err(Error::Missing(format!("{} (run the matrix first)", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Per-scenario leakage bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAudit {
    pub scenario: String,
    pub folds: Vec<FoldAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFile {
    pub scenarios: Vec<ScenarioAudit>,
}

impl AuditFile {
    pub fn from_results(results: &[ScenarioResult]) -> Self {
        Self {
            scenarios: results
                .iter()
                .map(|r| ScenarioAudit {
                    scenario: r.scenario.clone(),
                    folds: r.audit.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_csv_round_trips_exactly() {
        let d = tempfile::tempdir().unwrap();
        let rows = vec![
            PredictionRow {
                subject_id: "S0001".into(),
                scenario: "gbt/tabular".into(),
                phase: "pre+post".into(),
                fold: 2,
                probability: 0.1 + 0.2,
                label_true: 1,
                label_pred: 0,
            },
            PredictionRow {
                subject_id: "S0002".into(),
                scenario: "gbt/latent2d".into(),
                phase: String::new(),
                fold: 0,
                probability: 1.0 / 3.0,
                label_true: 0,
                label_pred: 0,
            },
        ];
        let p = d.path().join("p.csv");
        write_predictions(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("subject_id,scenario,phase,fold,probability,label_true,label_pred\n"));
        let back = read_predictions(&p).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].scenario_id(), "gbt/tabular/pre+post");
        assert_eq!(back[1].scenario_id(), "gbt/latent2d");
    }
}
