//! The shipped 14-column clinical surrogate schema and how the synthetic
//! generator draws each column from the latent risk.

use statrs::distribution::{ContinuousCDF, Normal};

use super::{Column, ColumnKind, FeatureSchema, Phase};

/// How a column is drawn from its risk-coupled score `w = s·z + (1-s)·ε`.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// `loc + scale·w`, clipped and rounded to `decimals`.
    Numeric {
        loc: f64,
        scale: f64,
        min: f64,
        max: f64,
        decimals: i32,
    },
    /// Level `i` when `w` falls between the `i`-th and `(i+1)`-th cut point.
    Ordinal { cuts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnModel {
    pub column: Column,
    /// Fraction of the phase's signal strength this column carries.
    pub weight: f64,
    pub generator: Generator,
}

fn numeric(name: &str, phase: Phase, nullable: bool, weight: f64, g: (f64, f64, f64, f64, i32)) -> ColumnModel {
    ColumnModel {
        column: Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
            phase,
            nullable,
        },
        weight,
        generator: Generator::Numeric {
            loc: g.0,
            scale: g.1,
            min: g.2,
            max: g.3,
            decimals: g.4,
        },
    }
}

fn categorical(name: &str, phase: Phase, levels: &[&str], weight: f64, cuts: &[f64]) -> ColumnModel {
    assert_eq!(levels.len(), cuts.len() + 1);
    ColumnModel {
        column: Column {
            name: name.into(),
            kind: ColumnKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
            phase,
            nullable: false,
        },
        weight,
        generator: Generator::Ordinal { cuts: cuts.to_vec() },
    }
}

pub(crate) fn default_models() -> Vec<ColumnModel> {
    use Phase::*;
    vec![
        numeric("age", Demographic, false, 0.5, (61.0, 13.0, 18.0, 95.0, 0)),
        categorical("sex", Demographic, &["female", "male"], 0.0, &[0.0]),
        categorical("asa_score", PreOp, &["1", "2", "3", "4"], 1.0, &[-1.0, 0.3, 1.3]),
        categorical(
            "tumor_entity",
            PreOp,
            &["meningioma", "glioma", "metastasis", "other"],
            0.3,
            &[-0.4, 0.5, 1.4],
        ),
        categorical("preop_deficit", PreOp, &["no", "yes"], 0.8, &[0.5]),
        categorical("anticoagulation", PreOp, &["no", "yes"], 0.5, &[1.0]),
        numeric("surgery_duration_min", PostOp, false, 1.0, (210.0, 60.0, 45.0, 600.0, 0)),
        numeric("blood_loss_ml", PostOp, false, 0.8, (400.0, 250.0, 0.0, 3000.0, 0)),
        categorical("extubation_delay", PostOp, &["no", "yes"], 1.0, &[1.0]),
        numeric("hemoglobin_g_dl", PostOp, true, 0.6, (12.0, -1.2, 6.0, 18.0, 1)),
        numeric("sodium_mmol_l", PostOp, true, 0.3, (139.0, -2.5, 120.0, 155.0, 0)),
        numeric("potassium_mmol_l", PostOp, true, 0.2, (4.1, 0.3, 2.5, 6.5, 1)),
        numeric("creatinine_mg_dl", PostOp, true, 0.4, (0.9, 0.2, 0.3, 5.0, 2)),
        numeric("crp_mg_l", PostOp, true, 0.7, (12.0, 8.0, 0.0, 300.0, 1)),
    ]
}

/// The default schema: 2 demographic, 4 pre-operative and 8 post-operative
/// columns.
pub fn default_schema() -> FeatureSchema {
    FeatureSchema::new(default_models().into_iter().map(|m| m.column).collect())
        .expect("default schema is valid")
}

/// Generative model for an arbitrary schema: known columns use the shipped
/// table, others get unit-scale numerics or equal-probability levels.
pub(crate) fn models_for(schema: &FeatureSchema) -> Vec<ColumnModel> {
    let known = default_models();
    schema
        .columns
        .iter()
        .map(|c| {
            if let Some(m) = known.iter().find(|m| m.column == *c) {
                return m.clone();
            }
            let generator = match &c.kind {
                ColumnKind::Numeric => Generator::Numeric {
                    loc: 0.0,
                    scale: 1.0,
                    min: f64::NEG_INFINITY,
                    max: f64::INFINITY,
                    decimals: 3,
                },
                ColumnKind::Categorical { levels } => {
                    let n = Normal::standard();
                    let l = levels.len();
                    Generator::Ordinal {
                        cuts: (1..l).map(|k| n.inverse_cdf(k as f64 / l as f64)).collect(),
                    }
                }
            };
            ColumnModel {
                column: c.clone(),
                weight: 1.0,
                generator,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_has_fourteen_columns_over_three_phases() {
        let s = default_schema();
        assert_eq!(s.columns.len(), 14);
        let count = |p| s.columns.iter().filter(|c| c.phase == p).count();
        assert_eq!(count(Phase::Demographic), 2);
        assert_eq!(count(Phase::PreOp), 4);
        assert_eq!(count(Phase::PostOp), 8);
    }

    #[test]
    fn unknown_categorical_gets_equal_probability_cuts() {
        let schema = FeatureSchema::new(vec![
            Column {
                name: "d".into(),
                kind: ColumnKind::Categorical {
                    levels: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                },
                phase: Phase::Demographic,
                nullable: false,
            },
            Column {
                name: "p".into(),
                kind: ColumnKind::Numeric,
                phase: Phase::PreOp,
                nullable: false,
            },
            Column {
                name: "q".into(),
                kind: ColumnKind::Numeric,
                phase: Phase::PostOp,
                nullable: true,
            },
        ])
        .unwrap();
        let m = models_for(&schema);
        match &m[0].generator {
            Generator::Ordinal { cuts } => {
                assert_eq!(cuts.len(), 3);
                assert!(cuts[1].abs() < 1e-9);
                assert!((cuts[0] + cuts[2]).abs() < 1e-9);
            }
            g => panic!("unexpected {g:?}"),
        }
    }
}
