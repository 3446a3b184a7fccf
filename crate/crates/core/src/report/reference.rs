//! Published values on the original private cohort, kept in one data file.

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const REFERENCE_JSON: &str = include_str!("../../data/paper_reference.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScenario {
    /// `model/inputs`.
    pub scenario: String,
    pub phase: Option<String>,
    pub f1: f64,
    pub auc: f64,
    pub citation: String,
}

impl ReferenceScenario {
    pub fn scenario_id(&self) -> String {
        match &self.phase {
            Some(p) => format!("{}/{p}", self.scenario),
            None => self.scenario.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHeadline {
    pub comparison: String,
    pub phase: String,
    pub baseline_f1: f64,
    pub multimodal_f1: f64,
    pub citation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub version: u32,
    pub label: String,
    pub cohort: String,
    pub scenarios: Vec<ReferenceScenario>,
    pub headline: Vec<ReferenceHeadline>,
}

impl Reference {
    pub fn bundled() -> Result<Self> {
        Ok(serde_json::from_str(REFERENCE_JSON)?)
    }

    /// Reference row for a `model/inputs` base id.
    pub fn for_base(&self, base_id: &str) -> Option<&ReferenceScenario> {
        self.scenarios.iter().find(|s| s.scenario == base_id)
    }
}
