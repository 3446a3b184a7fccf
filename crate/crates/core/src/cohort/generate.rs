//! Seeded synthetic cohort with a planted latent risk factor.
//!
//! Each subject draws `z ~ N(0,1)`. Labels come from `y = 1[a·z + ε > t]`
//! with logistic `ε`, where `t` is chosen by ranking so that exactly
//! `n_positive` subjects are positive. Every tabular column and the tumor's
//! size and contrast are monotone in `w = s·z + (1-s)·ε'`, with `s` the
//! phase's (or imaging) signal strength times the column weight.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schema::{models_for, ColumnModel, Generator};
use super::{default_schema, Cohort, ColumnKind, EventFlags, FeatureSchema, Label, Phase, Provenance, Subject, Value};
use crate::error::{Error, Result};
use crate::imaging::{Mask3D, Volume3D};
use crate::seed::{child_rng, child_seed, rng, Rng};

pub const MIN_TUMOR_RADIUS_MM: f64 = 10.0;
const MAX_TUMOR_RADIUS_MM: f64 = 45.0;
const LABEL_SLOPE: f64 = 3.0;
/// Brain semi-axes as a fraction of the field of view.
const BRAIN_FRACTION: f64 = 0.38;

/// Relative frequency of each event among ICU-positive subjects.
const EVENT_WEIGHTS: [f64; 9] = [0.03, 0.10, 0.12, 0.15, 0.20, 0.15, 0.08, 0.12, 0.05];
/// Probability of 1, 2 or 3 events for a positive subject.
const EVENT_COUNT_PROBS: [f64; 3] = [0.6, 0.3, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStrengths {
    pub tabular_pre: f64,
    pub tabular_post: f64,
    pub imaging: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_positive: usize,
    pub volume_shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub signal_strengths: SignalStrengths,
    pub seed: u64,
    #[serde(default = "default_missing_rate")]
    pub missing_rate: f64,
}

fn default_missing_rate() -> f64 {
    0.03
}

impl Default for SynthConfig {
    /// Desk-scale cohort: 611 subjects (59 positive) on an 8 mm grid.
    fn default() -> Self {
        Self {
            n_subjects: 611,
            n_positive: 59,
            volume_shape: [24, 32, 32],
            spacing_mm: [8.0; 3],
            signal_strengths: SignalStrengths {
                tabular_pre: 0.5,
                tabular_post: 0.5,
                imaging: 0.8,
            },
            seed: 42,
            missing_rate: default_missing_rate(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_positive == 0 || self.n_positive >= self.n_subjects {
            return Err(Error::Config(format!(
                "need 0 < n_positive < n_subjects, got {} of {}",
                self.n_positive, self.n_subjects
            )));
        }
        let s = self.signal_strengths;
        for (name, v) in [("tabular_pre", s.tabular_pre), ("tabular_post", s.tabular_post), ("imaging", s.imaging)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("signal strength {name} = {v} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config(format!("missing_rate {} outside [0, 1)", self.missing_rate)));
        }
        for a in 0..3 {
            let sp = self.spacing_mm[a];
            if !(sp > 0.0) || !sp.is_finite() {
                return Err(Error::Config(format!("spacing must be positive: {:?}", self.spacing_mm)));
            }
            let extent = self.volume_shape[a] as f64 * sp;
            if self.volume_shape[a] < 3 || BRAIN_FRACTION * extent < 1.5 * MIN_TUMOR_RADIUS_MM {
                return Err(Error::Config(format!(
                    "volume {:?} at {:?} mm is too small to hold a {} mm tumor inside the brain",
                    self.volume_shape, self.spacing_mm, MIN_TUMOR_RADIUS_MM
                )));
            }
        }
        Ok(())
    }

    fn phase_strength(&self, p: Phase) -> f64 {
        match p {
            Phase::Demographic | Phase::PreOp => self.signal_strengths.tabular_pre,
            Phase::PostOp => self.signal_strengths.tabular_post,
        }
    }
}

fn normal(r: &mut Rng) -> f64 {
    r.sample(StandardNormal)
}

fn logistic(r: &mut Rng) -> f64 {
    let u: f64 = r.random_range(1e-12..1.0 - 1e-12);
    (u / (1.0 - u)).ln()
}

fn coupled(s: f64, z: f64, eps: f64) -> f64 {
    s * z + (1.0 - s) * eps
}

pub fn generate_cohort(config: &SynthConfig) -> Result<Cohort> {
    generate_cohort_with_schema(config, default_schema())
}

pub fn generate_cohort_with_schema(config: &SynthConfig, schema: FeatureSchema) -> Result<Cohort> {
    config.validate()?;
    schema.validate()?;
    let n = config.n_subjects;
    let seed = config.seed;

    let mut zr = child_rng(seed, "latent");
    let z: Vec<f64> = (0..n).map(|_| normal(&mut zr)).collect();

    let mut lr = child_rng(seed, "label");
    let score: Vec<f64> = z.iter().map(|&zi| LABEL_SLOPE * zi + logistic(&mut lr)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let mut positive = vec![false; n];
    for &i in &order[..config.n_positive] {
        positive[i] = true;
    }

    let models = models_for(&schema);
    let mut tr = child_rng(seed, "tabular");
    let mut mr = child_rng(seed, "missing");
    let mut er = child_rng(seed, "events");

    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let record = models
            .iter()
            .map(|m| {
                let s = config.phase_strength(m.column.phase) * m.weight;
                let w = coupled(s, z[i], normal(&mut tr));
                let missing = m.column.nullable && mr.random::<f64>() < config.missing_rate;
                (!missing).then(|| draw_value(m, w))
            })
            .collect();
        let events = if positive[i] {
            draw_events(&mut er)
        } else {
            EventFlags::default()
        };
        let mut ir = rng(child_seed(seed, &format!("imaging/{i}")));
        let s_img = config.signal_strengths.imaging;
        let w_size = coupled(s_img, z[i], normal(&mut ir));
        let w_contrast = coupled(s_img, z[i], normal(&mut ir));
        let (volume, mask) = synth_volume(&mut ir, config.volume_shape, config.spacing_mm, w_size, w_contrast)?;
        let subject = Subject::new(format!("S{:04}", i + 1), record, volume, mask, events)?;
        debug_assert_eq!(subject.label() == Label::Positive, positive[i]);
        subjects.push(subject);
    }
    Cohort::new(
        schema,
        subjects,
        Provenance::Synthetic {
            seed,
            config: config.clone(),
        },
    )
}

fn draw_value(m: &ColumnModel, w: f64) -> Value {
    match (&m.generator, &m.column.kind) {
        (
            Generator::Numeric {
                loc,
                scale,
                min,
                max,
                decimals,
            },
            _,
        ) => {
            let p = 10f64.powi(*decimals);
            let v = (loc + scale * w).clamp(*min, *max);
            Value::Numeric((v * p).round() / p)
        }
        (Generator::Ordinal { cuts }, ColumnKind::Categorical { levels }) => {
            let k = cuts.iter().filter(|&&c| w > c).count();
            Value::Category(levels[k].clone())
        }
        (Generator::Ordinal { .. }, ColumnKind::Numeric) => unreachable!("ordinal generator on numeric column"),
    }
}

fn draw_events(r: &mut Rng) -> EventFlags {
    let u: f64 = r.random();
    let k = if u < EVENT_COUNT_PROBS[0] {
        1
    } else if u < EVENT_COUNT_PROBS[0] + EVENT_COUNT_PROBS[1] {
        2
    } else {
        3
    };
    let mut flags = [false; 9];
    for _ in 0..k {
        let total: f64 = (0..9).filter(|&e| !flags[e]).map(|e| EVENT_WEIGHTS[e]).sum();
        let mut t = r.random::<f64>() * total;
        let mut pick = 8;
        for e in (0..9).filter(|&e| !flags[e]) {
            if t < EVENT_WEIGHTS[e] {
                pick = e;
                break;
            }
            t -= EVENT_WEIGHTS[e];
            pick = e;
        }
        flags[pick] = true;
    }
    EventFlags::from_array(flags)
}

fn inside(p: [f64; 3], c: [f64; 3], semi: [f64; 3]) -> bool {
    (0..3).map(|a| ((p[a] - c[a]) / semi[a]).powi(2)).sum::<f64>() <= 1.0
}

/// Ellipsoidal brain (two tissue intensities plus noise) on a zero
/// background with an embedded ellipsoidal tumor; the mask is exactly the
/// set of tumor voxels.
fn synth_volume(
    r: &mut Rng,
    shape: [usize; 3],
    spacing: [f64; 3],
    w_size: f64,
    w_contrast: f64,
) -> Result<(Volume3D, Mask3D)> {
    let extent = [0, 1, 2].map(|a| shape[a] as f64 * spacing[a]);
    let centre = [0, 1, 2].map(|a| extent[a] / 2.0 + (r.random::<f64>() - 0.5) * 0.04 * extent[a]);
    let brain = [0, 1, 2].map(|a| BRAIN_FRACTION * extent[a] * r.random_range(0.95..1.05));
    let wm = brain.map(|s| 0.6 * s);

    let radius = (22.0 + 7.0 * w_size).clamp(MIN_TUMOR_RADIUS_MM, MAX_TUMOR_RADIUS_MM);
    let semi_t = [0, 1, 2].map(|_| radius * r.random_range(0.85..1.15));
    let contrast = (0.45 + 0.2 * w_contrast).clamp(0.05, 1.2);

    let room = [0, 1, 2].map(|a| (brain[a] - semi_t[a]).max(0.0) * 0.8);
    let mut tc = centre;
    for _ in 0..100 {
        let cand = [0, 1, 2].map(|a| centre[a] + (2.0 * r.random::<f64>() - 1.0) * room[a]);
        if inside(cand, centre, room.map(|x| x.max(1e-9))) {
            tc = cand;
            break;
        }
    }

    let n: usize = shape.iter().product();
    let mut vox = vec![0.0f32; n];
    let mut mask = vec![0u8; n];
    let mut nearest = (f64::INFINITY, 0usize);
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let i = (z * shape[1] + y) * shape[2] + x;
                let p = [
                    (z as f64 + 0.5) * spacing[0],
                    (y as f64 + 0.5) * spacing[1],
                    (x as f64 + 0.5) * spacing[2],
                ];
                let noise = 0.04 * normal(r);
                if !inside(p, centre, brain) {
                    continue;
                }
                let tissue = if inside(p, centre, wm) { 1.25 } else { 1.0 };
                let d2: f64 = (0..3).map(|a| (p[a] - tc[a]).powi(2)).sum();
                if d2 < nearest.0 {
                    nearest = (d2, i);
                }
                let value = if inside(p, tc, semi_t) {
                    mask[i] = 1;
                    tissue * (1.0 + contrast)
                } else {
                    tissue
                };
                vox[i] = ((value + noise) as f32).max(0.05);
            }
        }
    }
    if !mask.contains(&1) {
        let i = nearest.1;
        mask[i] = 1;
        vox[i] = (vox[i] * (1.0 + contrast) as f32).max(0.05);
    }
    Ok((Volume3D::new(shape, spacing, vox)?, Mask3D::new(shape, mask)?))
}
