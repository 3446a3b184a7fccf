use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_score, mean_std, roc_auc, undersample};
use super::FoldPlan;
use crate::classify::{
    pad_to_square2d, predict_net, threshold_label, train_gbt, train_net, DaftBackbone, DaftConfig, DaftModel,
    GbtConfig, NetTrainConfig, Prediction, ResNet2d, ResNetConfig, DEFAULT_THRESHOLD,
};
use crate::cohort::{encode_tabular, fit_train_stats, select_phase, Cohort, EncodedLayout, Phase};
use crate::error::{Error, Result};
use crate::latents::{Latent, OofLatents, SubjectImages};
use crate::seed::{child_seed, config_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gbt,
    Resnet,
    Daft,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gbt => "gbt",
            ModelKind::Resnet => "resnet",
            ModelKind::Daft => "daft",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InputKind {
    #[serde(rename = "tabular")]
    Tabular,
    #[serde(rename = "latent2d")]
    Latent2d,
    #[serde(rename = "tabular+latent2d")]
    TabularLatent2d,
    #[serde(rename = "daft-2dlatent")]
    Daft2dLatent,
    #[serde(rename = "daft-3droi")]
    Daft3dRoi,
    #[serde(rename = "daft-3dssl")]
    Daft3dSsl,
}

impl InputKind {
    pub const ALL: [InputKind; 6] = [
        InputKind::Tabular,
        InputKind::Latent2d,
        InputKind::TabularLatent2d,
        InputKind::Daft2dLatent,
        InputKind::Daft3dRoi,
        InputKind::Daft3dSsl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Tabular => "tabular",
            InputKind::Latent2d => "latent2d",
            InputKind::TabularLatent2d => "tabular+latent2d",
            InputKind::Daft2dLatent => "daft-2dlatent",
            InputKind::Daft3dRoi => "daft-3droi",
            InputKind::Daft3dSsl => "daft-3dssl",
        }
    }

    pub fn is_daft(self) -> bool {
        matches!(self, InputKind::Daft2dLatent | InputKind::Daft3dRoi | InputKind::Daft3dSsl)
    }

    pub fn uses_tabular(self) -> bool {
        self != InputKind::Latent2d
    }

    pub fn uses_latent2d(self) -> bool {
        matches!(self, InputKind::Latent2d | InputKind::TabularLatent2d | InputKind::Daft2dLatent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseSet {
    #[serde(rename = "pre_op")]
    PreOp,
    #[serde(rename = "pre+post")]
    PrePost,
}

impl PhaseSet {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseSet::PreOp => "pre_op",
            PhaseSet::PrePost => "pre+post",
        }
    }

    /// Source phases of the tabular columns used; demographics are always in.
    pub fn phases(self) -> Vec<Phase> {
        match self {
            PhaseSet::PreOp => vec![Phase::Demographic, Phase::PreOp],
            PhaseSet::PrePost => vec![Phase::Demographic, Phase::PreOp, Phase::PostOp],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model: ModelKind,
    pub inputs: InputKind,
    /// `None` exactly when no tabular data is used.
    pub phase: Option<PhaseSet>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if (self.model == ModelKind::Daft) != self.inputs.is_daft() {
            return Err(Error::Config(format!(
                "model {} cannot take {} inputs",
                self.model.as_str(),
                self.inputs.as_str()
            )));
        }
        if self.inputs.uses_tabular() != self.phase.is_some() {
            return Err(Error::Config(format!(
                "{}: a phase is required exactly when tabular data is used",
                self.base_id()
            )));
        }
        Ok(())
    }

    /// `model/inputs`, shared by both phase variants.
    pub fn base_id(&self) -> String {
        format!("{}/{}", self.model.as_str(), self.inputs.as_str())
    }

    /// `model/inputs[/phase]`.
    pub fn id(&self) -> String {
        match self.phase {
            Some(p) => format!("{}/{}", self.base_id(), p.as_str()),
            None => self.base_id(),
        }
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// The full comparison: GBT and ResNet on tabular, 2D latent and both; DAFT
/// on the 2D latent, the raw ROI and the 3D latent. Every tabular-bearing
/// scenario appears once per phase set.
pub fn scenario_matrix(seed: u64) -> Vec<ScenarioSpec> {
    let mut out = Vec::new();
    let mut push = |model, inputs: InputKind| {
        if inputs.uses_tabular() {
            for p in [PhaseSet::PreOp, PhaseSet::PrePost] {
                out.push(ScenarioSpec {
                    model,
                    inputs,
                    phase: Some(p),
                    seed,
                });
            }
        } else {
            out.push(ScenarioSpec {
                model,
                inputs,
                phase: None,
                seed,
            });
        }
    };
    for m in [ModelKind::Gbt, ModelKind::Resnet] {
        for i in [InputKind::Tabular, InputKind::Latent2d, InputKind::TabularLatent2d] {
            push(m, i);
        }
    }
    for i in [InputKind::Daft2dLatent, InputKind::Daft3dRoi, InputKind::Daft3dSsl] {
        push(ModelKind::Daft, i);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetSettings {
    pub width: usize,
    pub lr: f64,
    pub batch: usize,
    /// Budget for inputs containing a latent (large padded arrays).
    pub epochs: usize,
    /// Budget for tabular-only inputs (tiny arrays).
    pub tabular_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaftSettings {
    pub width: usize,
    pub bottleneck_factor: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs_2d: usize,
    pub epochs_3d: usize,
    pub stack_times: usize,
}

/// Classifier hyperparameters and evaluation knobs shared by all scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub undersample_ratio: f64,
    pub threshold: f64,
    pub gbt: GbtConfig,
    pub resnet: ResNetSettings,
    pub daft: DaftSettings,
}

impl HarnessConfig {
    /// Reference budgets: ResNet 500 epochs (lr 1e-2, batch 32); DAFT lr
    /// 1e-3, batch 16, 100 epochs in 2D and 25 in 3D.
    pub fn paper() -> Self {
        Self {
            undersample_ratio: 1.0,
            threshold: DEFAULT_THRESHOLD,
            gbt: GbtConfig::default(),
            resnet: ResNetSettings {
                width: 64,
                lr: 1e-2,
                batch: 32,
                epochs: 500,
                tabular_epochs: 500,
            },
            daft: DaftSettings {
                width: 16,
                bottleneck_factor: 7,
                lr: 1e-3,
                batch: 16,
                epochs_2d: 100,
                epochs_3d: 25,
                stack_times: 16,
            },
        }
    }

    /// Narrower networks and shorter budgets that fit a single CPU core.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.resnet.width = 4;
        c.resnet.lr = 1e-3;
        c.resnet.epochs = 10;
        c.resnet.tabular_epochs = 100;
        c.daft.width = 8;
        c.daft.epochs_2d = 30;
        c.daft.epochs_3d = 15;
        c
    }
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Everything a scenario may read. Latent maps are keyed by subject id.
#[derive(Clone, Copy)]
pub struct ScenarioData<'a> {
    pub cohort: &'a Cohort,
    pub plan: &'a FoldPlan,
    pub latent2d: Option<&'a OofLatents>,
    pub latent3d: Option<&'a OofLatents>,
    /// Per-subject images in cohort order (ROI input for DAFT).
    pub images: Option<&'a [SubjectImages]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_val_positive: usize,
    pub f1: f64,
    pub auc: f64,
}

/// Which subjects touched each stage of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    /// Subjects whose records fitted the tabular encoding statistics.
    pub stats_ids: Vec<String>,
    /// Undersampled training subjects.
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    /// Latent producer used for each subject touched in this fold.
    pub producers: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub spec: ScenarioSpec,
    pub folds: Vec<FoldMetrics>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// Metrics over all out-of-fold predictions at once.
    pub pooled_f1: f64,
    pub pooled_auc: f64,
    pub threshold: f64,
    pub config_hash: String,
    pub predictions: Vec<Prediction>,
    pub audit: Vec<FoldAudit>,
    pub runtime_s: f64,
}

/// Per-subject latent rows in cohort order, checked against the plan.
fn latent_rows<'a>(store: Option<&'a OofLatents>, data: &ScenarioData<'a>, what: &str) -> Result<Vec<&'a Latent>> {
    let store = store.ok_or_else(|| {
        Error::Missing(format!("{what} latents: the latent store is empty (run extract-latents first)"))
    })?;
    let mut shape: Option<&[usize]> = None;
    data.cohort
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let l = store.latents.get(&s.id).ok_or_else(|| {
                Error::Missing(format!(
                    "{what} latent for subject {} in store '{}' (run extract-latents first)",
                    s.id, store.extractor
                ))
            })?;
            if l.fold != Some(data.plan.fold[i]) {
                return Err(Error::Leakage(format!(
                    "{what} latent of {} comes from fold {:?} but the subject validates in fold {}",
                    s.id, l.fold, data.plan.fold[i]
                )));
            }
            match shape {
                Some(sh) if sh != l.shape.as_slice() => {
                    return Err(Error::Shape {
                        expected: sh.to_vec(),
                        actual: l.shape.clone(),
                    })
                }
                _ => shape = Some(&l.shape),
            }
            Ok(l)
        })
        .collect()
}

struct FoldOutput {
    metrics: FoldMetrics,
    predictions: Vec<Prediction>,
    audit: FoldAudit,
    probs: Vec<(usize, f64)>,
}

/// Cross-validates one scenario over the fold plan.
///
/// Per fold: fit tabular statistics on the training fold, undersample the
/// training fold, fit the model, and score the validation fold.
pub fn run_scenario(data: &ScenarioData, spec: &ScenarioSpec, cfg: &HarnessConfig) -> Result<ScenarioResult> {
    let start = Instant::now();
    spec.validate()?;
    let plan = data.plan;
    plan.validate()?;
    let ids = data.cohort.ids();
    if plan.ids != ids {
        return Err(Error::InvalidInput("fold plan subjects differ from the cohort".into()));
    }
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Error::Config(format!("threshold {} outside [0, 1]", cfg.threshold)));
    }
    let y: Vec<bool> = data.cohort.subjects.iter().map(|s| s.label().is_positive()).collect();

    let lat2 = if spec.inputs.uses_latent2d() {
        Some(latent_rows(data.latent2d, data, "2D")?)
    } else {
        None
    };
    let lat3 = if spec.inputs == InputKind::Daft3dSsl {
        Some(latent_rows(data.latent3d, data, "3D")?)
    } else {
        None
    };
    let images = match (spec.inputs, data.images) {
        (InputKind::Daft3dRoi, None) => return Err(Error::Missing("ROI volumes for the 3D ROI scenario".into())),
        (InputKind::Daft3dRoi, Some(im)) if im.len() != ids.len() => {
            return Err(Error::InvalidInput(format!("{} ROI volumes for {} subjects", im.len(), ids.len())))
        }
        (_, im) => im,
    };

    let hash = config_hash(&(spec, cfg));
    let folds: Vec<Result<FoldOutput>> = (0..plan.k)
        .into_par_iter()
        .map(|f| run_fold(data, spec, cfg, f, &y, lat2.as_deref(), lat3.as_deref(), images))
        .collect();
    let folds = folds.into_iter().collect::<Result<Vec<_>>>()?;

    let f1s: Vec<f64> = folds.iter().map(|f| f.metrics.f1).collect();
    let aucs: Vec<f64> = folds.iter().map(|f| f.metrics.auc).collect();
    let (mean_f1, std_f1) = mean_std(&f1s);
    let (mean_auc, std_auc) = mean_std(&aucs);
    let mut pooled: Vec<(usize, f64)> = folds.iter().flat_map(|f| f.probs.iter().copied()).collect();
    pooled.sort_by_key(|p| p.0);
    let py: Vec<bool> = pooled.iter().map(|p| y[p.0]).collect();
    let pp: Vec<f64> = pooled.iter().map(|p| p.1).collect();
    let plab: Vec<bool> = pp.iter().map(|&p| threshold_label(p, cfg.threshold).is_positive()).collect();

    let mut predictions = Vec::with_capacity(ids.len());
    let mut audit = Vec::with_capacity(plan.k);
    let mut metrics = Vec::with_capacity(plan.k);
    for f in folds {
        predictions.extend(f.predictions);
        audit.push(f.audit);
        metrics.push(f.metrics);
    }
    predictions.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(ScenarioResult {
        scenario: spec.id(),
        spec: *spec,
        folds: metrics,
        mean_f1,
        std_f1,
        mean_auc,
        std_auc,
        pooled_f1: f1_score(&py, &plab)?,
        pooled_auc: roc_auc(&py, &pp)?,
        threshold: cfg.threshold,
        config_hash: hash,
        predictions,
        audit,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    data: &ScenarioData,
    spec: &ScenarioSpec,
    cfg: &HarnessConfig,
    f: usize,
    y: &[bool],
    lat2: Option<&[&Latent]>,
    lat3: Option<&[&Latent]>,
    images: Option<&[SubjectImages]>,
) -> Result<FoldOutput> {
    let plan = data.plan;
    let cohort = data.cohort;
    let tr_all = plan.train_indices(f);
    let va = plan.val_indices(f);
    let n_val_pos = va.iter().filter(|&&i| y[i]).count();
    if n_val_pos == 0 || n_val_pos == va.len() {
        return Err(Error::SingleClass(format!(
            "validation fold {f} has {n_val_pos} positives among {} subjects",
            va.len()
        )));
    }

    // Tabular encoding fitted on the training fold only.
    let tab: Option<Vec<Vec<f64>>> = match spec.phase {
        Some(phase) => {
            let rows: Vec<&[_]> = tr_all.iter().map(|&i| cohort.subjects[i].record.as_slice()).collect();
            let stats = fit_train_stats(&cohort.schema, &rows)?;
            let keep = select_phase(&EncodedLayout::of(&cohort.schema), &phase.phases())?;
            let enc = tr_all
                .iter()
                .chain(&va)
                .map(|&i| {
                    let full = encode_tabular(&cohort.subjects[i].record, &cohort.schema, &stats)?;
                    Ok((i, keep.iter().map(|&k| full[k]).collect::<Vec<f64>>()))
                })
                .collect::<Result<BTreeMap<usize, Vec<f64>>>>()?;
            let mut all = vec![Vec::new(); cohort.len()];
            for (i, v) in enc {
                all[i] = v;
            }
            Some(all)
        }
        None => None,
    };

    let tr_labels: Vec<bool> = tr_all.iter().map(|&i| y[i]).collect();
    let sub = undersample(&tr_labels, cfg.undersample_ratio, child_seed(spec.seed, &format!("undersample/fold{f}")))?;
    let tr: Vec<usize> = sub.into_iter().map(|k| tr_all[k]).collect();
    let ytr: Vec<f64> = tr.iter().map(|&i| if y[i] { 1.0 } else { 0.0 }).collect();
    let model_seed = child_seed(spec.seed, &format!("{}/fold{f}", spec.base_id()));

    // Flat feature vector for GBT and ResNet: tabular first, then latent.
    let flat = |i: usize| -> Vec<f64> {
        let mut v = tab.as_ref().map(|t| t[i].clone()).unwrap_or_default();
        if let Some(l) = lat2 {
            v.extend(l[i].data.iter().map(|&x| x as f64));
        }
        v
    };

    let probs: Vec<f64> = match spec.model {
        ModelKind::Gbt => {
            let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| flat(i)).collect();
            let gcfg = GbtConfig {
                seed: model_seed,
                ..cfg.gbt.clone()
            };
            let mut model = train_gbt(&xtr, &ytr, &gcfg)?;
            model.scenario = Some(spec.id());
            model.config_hash = Some(config_hash(&gcfg));
            va.iter().map(|&i| model.predict_proba(&flat(i))).collect::<Result<_>>()?
        }
        ModelKind::Resnet => {
            let square = |i: usize| -> Result<(usize, Vec<f32>)> {
                let v: Vec<f32> = flat(i).into_iter().map(|x| x as f32).collect();
                pad_to_square2d(&v)
            };
            let xtr = tr.iter().map(|&i| square(i)).collect::<Result<Vec<_>>>()?;
            let xva = va.iter().map(|&i| square(i)).collect::<Result<Vec<_>>>()?;
            let side = xtr[0].0;
            let rs = &cfg.resnet;
            let epochs = if spec.inputs == InputKind::Tabular {
                rs.tabular_epochs
            } else {
                rs.epochs
            };
            let mut model = ResNet2d::<f32>::new(ResNetConfig {
                input_side: side,
                width: rs.width,
                lr: rs.lr,
                batch: rs.batch,
                epochs,
                seed: model_seed,
            })?;
            let trefs: Vec<&[f32]> = xtr.iter().map(|v| v.1.as_slice()).collect();
            let vrefs: Vec<&[f32]> = xva.iter().map(|v| v.1.as_slice()).collect();
            let ncfg = NetTrainConfig {
                lr: rs.lr,
                batch: rs.batch,
                epochs,
                seed: model_seed,
            };
            train_net(&mut model, &trefs, None, &ytr, &ncfg)?;
            predict_net(&model, &vrefs, None)?
        }
        ModelKind::Daft => {
            let t = tab.as_ref().expect("DAFT scenarios carry tabular data");
            let ds = &cfg.daft;
            let (backbone, shape, epochs, src): (_, Vec<usize>, _, Vec<&[f32]>) = match spec.inputs {
                InputKind::Daft2dLatent => {
                    let l = lat2.expect("checked");
                    let src = l.iter().map(|x| x.data.as_slice()).collect();
                    (DaftBackbone::Stacked2d, l[0].shape.clone(), ds.epochs_2d, src)
                }
                InputKind::Daft3dSsl => {
                    let l = lat3.expect("checked");
                    let src = l.iter().map(|x| x.data.as_slice()).collect();
                    (DaftBackbone::Latent3d, l[0].shape.clone(), ds.epochs_3d, src)
                }
                InputKind::Daft3dRoi => {
                    let im = images.expect("checked");
                    let shape = im[0].roi_shape.to_vec();
                    if let Some(bad) = im.iter().find(|s| s.roi_shape.as_slice() != shape.as_slice()) {
                        return Err(Error::Shape {
                            expected: shape,
                            actual: bad.roi_shape.to_vec(),
                        });
                    }
                    (DaftBackbone::Roi3d, shape, ds.epochs_3d, im.iter().map(|s| s.roi.as_slice()).collect())
                }
                _ => unreachable!("validated DAFT inputs"),
            };
            let dcfg = DaftConfig {
                backbone,
                input_shape: shape,
                stack_times: ds.stack_times,
                tab_dim: t[tr[0]].len(),
                width: ds.width,
                bottleneck_factor: ds.bottleneck_factor,
                lr: ds.lr,
                batch: ds.batch,
                epochs,
                seed: model_seed,
            };
            let mut model = DaftModel::<f32>::new(dcfg)?;
            let tabs = |idx: &[usize]| -> Vec<Vec<f32>> {
                idx.iter().map(|&i| t[i].iter().map(|&x| x as f32).collect()).collect()
            };
            let trefs: Vec<&[f32]> = tr.iter().map(|&i| src[i]).collect();
            let vrefs: Vec<&[f32]> = va.iter().map(|&i| src[i]).collect();
            let ncfg = NetTrainConfig {
                lr: ds.lr,
                batch: ds.batch,
                epochs,
                seed: model_seed,
            };
            train_net(&mut model, &trefs, Some(&tabs(&tr)), &ytr, &ncfg)?;
            predict_net(&model, &vrefs, Some(&tabs(&va)))?
        }
    };

    let yva: Vec<bool> = va.iter().map(|&i| y[i]).collect();
    let pred: Vec<bool> = probs.iter().map(|&p| threshold_label(p, cfg.threshold).is_positive()).collect();
    let metrics = FoldMetrics {
        fold: f,
        n_train: tr.len(),
        n_val: va.len(),
        n_val_positive: n_val_pos,
        f1: f1_score(&yva, &pred)?,
        auc: roc_auc(&yva, &probs)?,
    };

    let ids = &plan.ids;
    let mut producers: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for lat in [lat2, lat3].into_iter().flatten() {
        for &i in tr.iter().chain(&va) {
            producers.entry(ids[i].clone()).or_default().push(lat[i].producer.clone());
        }
    }
    let audit = FoldAudit {
        fold: f,
        stats_ids: if spec.phase.is_some() {
            tr_all.iter().map(|&i| ids[i].clone()).collect()
        } else {
            Vec::new()
        },
        train_ids: tr.iter().map(|&i| ids[i].clone()).collect(),
        val_ids: va.iter().map(|&i| ids[i].clone()).collect(),
        producers,
    };
    let predictions = va
        .iter()
        .zip(&probs)
        .map(|(&i, &p)| Prediction {
            subject_id: ids[i].clone(),
            scenario: spec.id(),
            fold: f,
            probability: p,
        })
        .collect();
    Ok(FoldOutput {
        metrics,
        predictions,
        audit,
        probs: va.into_iter().zip(probs).collect(),
    })
}

/// Checks one scenario's bookkeeping against the plan and the producers'
/// training sets: no validation subject fitted statistics, trained the
/// classifier, or trained the extractor that encoded it.
pub fn audit_scenario(
    plan: &FoldPlan,
    result: &ScenarioResult,
    producer_train: &BTreeMap<String, HashSet<String>>,
) -> Result<()> {
    audit_folds(plan, &result.scenario, &result.audit, &result.predictions, producer_train)
}

/// [`audit_scenario`] on bookkeeping read back from disk.
pub fn audit_folds(
    plan: &FoldPlan,
    scenario: &str,
    audit: &[FoldAudit],
    predictions: &[Prediction],
    producer_train: &BTreeMap<String, HashSet<String>>,
) -> Result<()> {
    let leak = |msg: String| Err(Error::Leakage(format!("{scenario}: {msg}")));
    if audit.len() != plan.k {
        return leak(format!("{} fold records for k = {}", audit.len(), plan.k));
    }
    for a in audit {
        let want: HashSet<&str> = plan.val_indices(a.fold).into_iter().map(|i| plan.ids[i].as_str()).collect();
        let val: HashSet<&str> = a.val_ids.iter().map(String::as_str).collect();
        if val != want {
            return leak(format!("fold {} validated on subjects outside its plan fold", a.fold));
        }
        if let Some(id) = a.stats_ids.iter().chain(&a.train_ids).find(|id| val.contains(id.as_str())) {
            return leak(format!("validation subject {id} used in training fold {}", a.fold));
        }
        for (id, prods) in &a.producers {
            for p in prods {
                let Some(seen) = producer_train.get(p) else {
                    return leak(format!("unknown latent producer {p}"));
                };
                if seen.contains(id) {
                    return leak(format!("latent of {id} produced by {p}, which trained on it"));
                }
            }
        }
    }
    if predictions.len() != plan.len() {
        return leak(format!("{} predictions for {} subjects", predictions.len(), plan.len()));
    }
    for p in predictions {
        if plan.fold_of(&p.subject_id) != Some(p.fold) {
            return leak(format!("prediction for {} attributed to fold {}", p.subject_id, p.fold));
        }
    }
    Ok(())
}

/// Producer id → training subjects, from one or more latent stores.
pub fn producer_training_sets<'a>(stores: impl IntoIterator<Item = &'a OofLatents>) -> BTreeMap<String, HashSet<String>> {
    stores
        .into_iter()
        .flat_map(|s| s.producers.iter())
        .map(|p| (p.producer.clone(), p.train_ids.iter().cloned().collect()))
        .collect()
}

/// Runs every scenario in order.
pub fn run_matrix(data: &ScenarioData, specs: &[ScenarioSpec], cfg: &HarnessConfig) -> Result<Vec<ScenarioResult>> {
    specs
        .iter()
        .map(|s| {
            log::info!("scenario {s}");
            run_scenario(data, s, cfg)
        })
        .collect()
}
