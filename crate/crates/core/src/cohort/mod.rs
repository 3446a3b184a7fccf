//! Cohort data model: feature schema, the nine post-operative ICU events,
//! label derivation, tabular encoding, synthetic generation and persistence.

mod encode;
mod generate;
mod persist;
mod schema;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Mask3D, Volume3D};

pub use encode::{encode_tabular, fit_train_stats, select_phase, ColumnStats, EncodedFeature, EncodedLayout, TrainStats};
pub use generate::{generate_cohort, SignalStrengths, SynthConfig, MIN_TUMOR_RADIUS_MM};
pub use persist::{load_cohort, persist_cohort, COHORT_FORMAT_VERSION};
pub use schema::{default_schema, ColumnModel, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Demographic,
    PreOp,
    PostOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub phase: Phase,
    /// Nullable columns get a companion missing-indicator when encoded.
    #[serde(default)]
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let s = Self { columns };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate column name {}", c.name)));
            }
            if let ColumnKind::Categorical { levels } = &c.kind {
                if levels.len() < 2 {
                    return Err(Error::Config(format!("categorical column {} needs >= 2 levels", c.name)));
                }
                if levels.iter().collect::<HashSet<_>>().len() != levels.len() {
                    return Err(Error::Config(format!("column {} has duplicate levels", c.name)));
                }
            }
        }
        for phase in [Phase::Demographic, Phase::PreOp, Phase::PostOp] {
            if !self.columns.iter().any(|c| c.phase == phase) {
                return Err(Error::Config(format!("schema has no {phase:?} column")));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Numeric(f64),
    Category(String),
}

/// The nine post-operative events that make ICU admission necessary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventFlags {
    pub cpr: bool,
    pub re_intubation: bool,
    pub return_to_or: bool,
    pub mechanical_ventilation: bool,
    pub vasopressor_use: bool,
    pub impaired_consciousness: bool,
    pub intracranial_hypertension: bool,
    pub swallowing_disorder: bool,
    pub death: bool,
}

pub const EVENT_NAMES: [&str; 9] = [
    "cpr",
    "re_intubation",
    "return_to_or",
    "mechanical_ventilation",
    "vasopressor_use",
    "impaired_consciousness",
    "intracranial_hypertension",
    "swallowing_disorder",
    "death",
];

impl EventFlags {
    pub fn to_array(self) -> [bool; 9] {
        [
            self.cpr,
            self.re_intubation,
            self.return_to_or,
            self.mechanical_ventilation,
            self.vasopressor_use,
            self.impaired_consciousness,
            self.intracranial_hypertension,
            self.swallowing_disorder,
            self.death,
        ]
    }

    pub fn from_array(a: [bool; 9]) -> Self {
        Self {
            cpr: a[0],
            re_intubation: a[1],
            return_to_or: a[2],
            mechanical_ventilation: a[3],
            vasopressor_use: a[4],
            impaired_consciousness: a[5],
            intracranial_hypertension: a[6],
            swallowing_disorder: a[7],
            death: a[8],
        }
    }

    pub fn count(self) -> usize {
        self.to_array().iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_f64(self) -> f64 {
        if self.is_positive() {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Label::Negative),
            "positive" => Ok(Label::Positive),
            other => Err(Error::InvalidInput(format!("unknown label {other:?}"))),
        }
    }
}

/// ICU admission is required iff at least one of the nine events occurred.
pub fn derive_label(events: &EventFlags) -> Label {
    if events.to_array().iter().any(|&e| e) {
        Label::Positive
    } else {
        Label::Negative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// One entry per schema column; `None` marks a missing value.
    pub record: Vec<Option<Value>>,
    pub volume: Volume3D,
    pub mask: Mask3D,
    pub events: EventFlags,
    label: Label,
}

impl Subject {
    pub fn new(
        id: String,
        record: Vec<Option<Value>>,
        volume: Volume3D,
        mask: Mask3D,
        events: EventFlags,
    ) -> Result<Self> {
        if volume.shape != mask.shape {
            return Err(Error::Shape {
                expected: volume.shape.to_vec(),
                actual: mask.shape.to_vec(),
            });
        }
        let label = derive_label(&events);
        Ok(Self {
            id,
            record,
            volume,
            mask,
            events,
            label,
        })
    }

    pub fn label(&self) -> Label {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64, config: SynthConfig },
    Ingested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub subjects: Vec<Subject>,
    pub provenance: Provenance,
}

impl Cohort {
    pub fn new(schema: FeatureSchema, subjects: Vec<Subject>, provenance: Provenance) -> Result<Self> {
        schema.validate()?;
        let mut ids = HashSet::new();
        for s in &subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate subject id {}", s.id)));
            }
            if s.record.len() != schema.columns.len() {
                return Err(Error::InvalidInput(format!(
                    "subject {} has {} values for {} columns",
                    s.id,
                    s.record.len(),
                    schema.columns.len()
                )));
            }
        }
        Ok(Self {
            schema,
            subjects,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.subjects.iter().map(Subject::label).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.subjects.iter().filter(|s| s.label().is_positive()).count()
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }
}
