use serde::{Deserialize, Serialize};

use super::{ColumnKind, FeatureSchema, Phase, Value};
use crate::error::{Error, Result};

/// Per-column statistics fitted on the training subjects of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnStats {
    Numeric { mean: f64, std: f64, median: f64 },
    Categorical { mode: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub columns: Vec<ColumnStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedFeature {
    pub name: String,
    pub source_column: usize,
    pub phase: Phase,
}

/// Names and provenance of every position of an encoded tabular vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedLayout {
    pub features: Vec<EncodedFeature>,
}

impl EncodedLayout {
    pub fn of(schema: &FeatureSchema) -> Self {
        let mut features = Vec::new();
        for (ci, c) in schema.columns.iter().enumerate() {
            let mut push = |name: String| {
                features.push(EncodedFeature {
                    name,
                    source_column: ci,
                    phase: c.phase,
                })
            };
            match &c.kind {
                ColumnKind::Numeric => push(c.name.clone()),
                ColumnKind::Categorical { levels } => {
                    for l in levels {
                        push(format!("{}={}", c.name, l));
                    }
                }
            }
            if c.nullable {
                push(format!("{}__missing", c.name));
            }
        }
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Fits z-score, median and mode statistics from training records only.
pub fn fit_train_stats(schema: &FeatureSchema, train: &[&[Option<Value>]]) -> Result<TrainStats> {
    if train.is_empty() {
        return Err(Error::InvalidInput("no training records for tabular statistics".into()));
    }
    let mut columns = Vec::with_capacity(schema.columns.len());
    for (ci, c) in schema.columns.iter().enumerate() {
        match &c.kind {
            ColumnKind::Numeric => {
                let mut xs: Vec<f64> = train
                    .iter()
                    .filter_map(|r| match &r[ci] {
                        Some(Value::Numeric(v)) => Some(*v),
                        _ => None,
                    })
                    .collect();
                if xs.is_empty() {
                    columns.push(ColumnStats::Numeric {
                        mean: 0.0,
                        std: 1.0,
                        median: 0.0,
                    });
                    continue;
                }
                xs.sort_by(f64::total_cmp);
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                columns.push(ColumnStats::Numeric {
                    mean,
                    std,
                    median: median(&xs),
                });
            }
            ColumnKind::Categorical { levels } => {
                let mut counts = vec![0usize; levels.len()];
                for r in train {
                    if let Some(Value::Category(v)) = &r[ci] {
                        if let Some(k) = levels.iter().position(|l| l == v) {
                            counts[k] += 1;
                        }
                    }
                }
                // first level wins ties
                let mode = counts
                    .iter()
                    .enumerate()
                    .fold(0, |best, (k, &n)| if n > counts[best] { k } else { best });
                columns.push(ColumnStats::Categorical { mode });
            }
        }
    }
    Ok(TrainStats { columns })
}

/// Encodes one record: z-scored numerics, one-hot categoricals, and a
/// missing indicator after each nullable column.
pub fn encode_tabular(record: &[Option<Value>], schema: &FeatureSchema, stats: &TrainStats) -> Result<Vec<f64>> {
    if record.len() != schema.columns.len() || stats.columns.len() != schema.columns.len() {
        return Err(Error::InvalidInput(format!(
            "record has {} values, schema {} columns, stats {}",
            record.len(),
            schema.columns.len(),
            stats.columns.len()
        )));
    }
    let mut out = Vec::new();
    for ((c, v), st) in schema.columns.iter().zip(record).zip(&stats.columns) {
        match (&c.kind, st) {
            (ColumnKind::Numeric, ColumnStats::Numeric { mean, std, median }) => {
                let x = match v {
                    Some(Value::Numeric(x)) => *x,
                    None => *median,
                    Some(Value::Category(s)) => {
                        return Err(Error::InvalidInput(format!("column {} expects a number, got {s:?}", c.name)))
                    }
                };
                out.push((x - mean) / std);
            }
            (ColumnKind::Categorical { levels }, ColumnStats::Categorical { mode }) => {
                let k = match v {
                    Some(Value::Category(s)) => {
                        let k = levels.iter().position(|l| l == s);
                        if k.is_none() {
                            log::warn!("unknown category {s:?} in column {}; encoding as all zeros", c.name);
                        }
                        k
                    }
                    None => Some(*mode),
                    Some(Value::Numeric(x)) => {
                        return Err(Error::InvalidInput(format!("column {} expects a category, got {x}", c.name)))
                    }
                };
                out.extend((0..levels.len()).map(|i| if Some(i) == k { 1.0 } else { 0.0 }));
            }
            _ => return Err(Error::InvalidInput(format!("statistics do not match column {}", c.name))),
        }
        if c.nullable {
            out.push(if v.is_none() { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

/// Encoded positions whose source column belongs to `phases`; demographics
/// ride along with pre-operative data.
pub fn select_phase(layout: &EncodedLayout, phases: &[Phase]) -> Result<Vec<usize>> {
    let keep = |p: Phase| phases.contains(&p) || (p == Phase::Demographic && phases.contains(&Phase::PreOp));
    let idx: Vec<usize> = layout
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| keep(f.phase))
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput(format!("phase selection {phases:?} yields no columns")));
    }
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{default_schema, Column};

    fn schema3() -> FeatureSchema {
        FeatureSchema::new(vec![
            Column {
                name: "age".into(),
                kind: ColumnKind::Numeric,
                phase: Phase::Demographic,
                nullable: false,
            },
            Column {
                name: "grade".into(),
                kind: ColumnKind::Categorical {
                    levels: vec!["a".into(), "b".into(), "c".into()],
                },
                phase: Phase::PreOp,
                nullable: true,
            },
            Column {
                name: "lab".into(),
                kind: ColumnKind::Numeric,
                phase: Phase::PostOp,
                nullable: true,
            },
        ])
        .unwrap()
    }

    fn rec(age: f64, grade: Option<&str>, lab: Option<f64>) -> Vec<Option<Value>> {
        vec![
            Some(Value::Numeric(age)),
            grade.map(|g| Value::Category(g.into())),
            lab.map(Value::Numeric),
        ]
    }

    #[test]
    fn one_hot_and_z_score() {
        let s = schema3();
        let train = [rec(2.0, Some("a"), Some(1.0)), rec(4.0, Some("b"), Some(1.0)), rec(6.0, Some("b"), Some(1.0))];
        let refs: Vec<&[Option<Value>]> = train.iter().map(|r| r.as_slice()).collect();
        let st = fit_train_stats(&s, &refs).unwrap();
        let e = encode_tabular(&rec(6.0, Some("b"), Some(1.0)), &s, &st).unwrap();
        // population std of {2,4,6} is sqrt(8/3) = 1.63299...
        let hand = (6.0 - 4.0) / (8.0f64 / 3.0).sqrt();
        assert!((e[0] - 1.224744871391589).abs() < 1e-12);
        assert!((e[0] - hand).abs() < 1e-15);
        assert_eq!(&e[1..4], &[0.0, 1.0, 0.0]);
        assert_eq!(e[4], 0.0);
        let mean = encode_tabular(&rec(4.0, Some("c"), Some(1.0)), &s, &st).unwrap();
        assert_eq!(mean[0], 0.0);
        assert_eq!(EncodedLayout::of(&s).len(), e.len());
    }

    #[test]
    fn missing_values_are_imputed_with_indicator() {
        let s = schema3();
        let train = [rec(1.0, Some("c"), Some(1.0)), rec(1.0, Some("c"), Some(3.0)), rec(1.0, Some("a"), Some(10.0))];
        let refs: Vec<&[Option<Value>]> = train.iter().map(|r| r.as_slice()).collect();
        let st = fit_train_stats(&s, &refs).unwrap();
        let e = encode_tabular(&rec(1.0, None, None), &s, &st).unwrap();
        assert_eq!(&e[1..5], &[0.0, 0.0, 1.0, 1.0]);
        let ColumnStats::Numeric { mean, std, median } = st.columns[2] else { panic!() };
        assert_eq!(median, 3.0);
        assert!((e[5] - (3.0 - mean) / std).abs() < 1e-12);
        assert_eq!(e[6], 1.0);
    }

    #[test]
    fn unknown_category_encodes_as_zeros() {
        let s = schema3();
        let train = [rec(1.0, Some("a"), Some(1.0))];
        let refs: Vec<&[Option<Value>]> = train.iter().map(|r| r.as_slice()).collect();
        let st = fit_train_stats(&s, &refs).unwrap();
        let e = encode_tabular(&rec(1.0, Some("zzz"), Some(1.0)), &s, &st).unwrap();
        assert_eq!(&e[1..5], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn statistics_ignore_records_outside_the_training_set() {
        let s = schema3();
        let mut rows = vec![rec(1.0, Some("a"), Some(2.0)), rec(3.0, Some("b"), Some(5.0)), rec(9.0, Some("c"), Some(7.0))];
        let train: Vec<&[Option<Value>]> = rows[..2].iter().map(|r| r.as_slice()).collect();
        let before = fit_train_stats(&s, &train).unwrap();
        rows[2] = rec(1e6, Some("a"), None);
        let train: Vec<&[Option<Value>]> = rows[..2].iter().map(|r| r.as_slice()).collect();
        assert_eq!(fit_train_stats(&s, &train).unwrap(), before);
    }

    #[test]
    fn phase_selection() {
        let s = schema3();
        let layout = EncodedLayout::of(&s);
        let pre = select_phase(&layout, &[Phase::PreOp]).unwrap();
        assert_eq!(pre, vec![0, 1, 2, 3, 4]);
        let all = select_phase(&layout, &[Phase::PreOp, Phase::PostOp]).unwrap();
        assert_eq!(all.len(), layout.len());
        let post = select_phase(&layout, &[Phase::PostOp]).unwrap();
        assert_eq!(post, vec![5, 6]);
        assert!(select_phase(&layout, &[]).is_err());
    }

    #[test]
    fn default_schema_encoded_widths() {
        // pre-op + demographics: age 1, sex 2, asa 4, entity 4, deficit 2, anticoag 2
        // post-op: 3 numerics, extubation 2, 5 labs + 5 missing flags
        let layout = EncodedLayout::of(&default_schema());
        assert_eq!(select_phase(&layout, &[Phase::PreOp]).unwrap().len(), 15);
        assert_eq!(layout.len(), 15 + 2 + 2 + 10);
        assert_eq!(select_phase(&layout, &[Phase::PreOp, Phase::PostOp]).unwrap().len(), 29);
    }
}
