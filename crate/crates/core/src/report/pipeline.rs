//! The command stages and their on-disk artifacts under the output directory:
//!
//! ```text
//! cohort/                      synth
//! foldplan.json                synth
//! extractors/{ae2d,mae3d}/     train-extractors (fold checkpoints, logs)
//! latents/{ae2d,mae3d}/        extract-latents
//! matrix.json predictions.csv audit.json           run
//! report_f1.svg report_roc.svg summary.md paper_reference.json   report
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::matrix::{prediction_rows, read_predictions, write_predictions, AuditFile, Matrix};
use super::reference::{Reference, REFERENCE_JSON};
use super::summary::render_summary;
use super::svg::{render_f1_barchart, render_roc_curves};
use crate::classify::Prediction;
use crate::cohort::{generate_cohort, load_cohort, persist_cohort, Cohort};
use crate::error::{Error, IoContext, Result};
use crate::evalharness::{
    audit_folds, audit_scenario, producer_training_sets, run_matrix, stratified_kfold, FoldPlan, InputKind, ScenarioData,
    ScenarioSpec,
};
use crate::latents::{
    audit_oof, load_latents, out_of_fold_latents, prepare_images, write_latents, Ae2d, Mae3d, OofLatents,
    SubjectImages, TrainLog,
};
use crate::nn::checkpoint::{self, CheckpointHeader};
use crate::seed::config_hash;

pub const AE2D: &str = "ae2d";
pub const MAE3D: &str = "mae3d";

/// Paths of every artifact inside one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort")
    }
    pub fn foldplan(&self) -> PathBuf {
        self.root.join("foldplan.json")
    }
    pub fn extractor_dir(&self, name: &str) -> PathBuf {
        self.root.join("extractors").join(name)
    }
    pub fn checkpoint(&self, name: &str, fold: usize) -> PathBuf {
        self.extractor_dir(name).join(format!("fold{fold}.fbck"))
    }
    pub fn train_logs(&self, name: &str) -> PathBuf {
        self.extractor_dir(name).join("logs.json")
    }
    pub fn pretraining(&self) -> PathBuf {
        self.extractor_dir(MAE3D).join("pretraining.json")
    }
    pub fn latents(&self) -> PathBuf {
        self.root.join("latents")
    }
    pub fn matrix(&self) -> PathBuf {
        self.root.join("matrix.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }
    pub fn audit(&self) -> PathBuf {
        self.root.join("audit.json")
    }
    pub fn report_f1(&self) -> PathBuf {
        self.root.join("report_f1.svg")
    }
    pub fn report_roc(&self) -> PathBuf {
        self.root.join("report_roc.svg")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.md")
    }
    pub fn reference(&self) -> PathBuf {
        self.root.join("paper_reference.json")
    }
}

/// Which extractors the selected scenarios read.
fn needs(specs: &[ScenarioSpec]) -> (bool, bool) {
    let ae = specs
        .iter()
        .any(|s| s.inputs.uses_latent2d() || s.inputs == InputKind::Daft2dLatent);
    let mae = specs.iter().any(|s| s.inputs == InputKind::Daft3dSsl);
    (ae, mae)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).at(d)?;
    }
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body).at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::Missing(format!("{} ({hint})", path.display())));
    }
    Ok(serde_json::from_slice(&fs::read(path).at(path)?)?)
}

/// Writes the cohort (generated or ingested) and its fold plan.
pub fn synth(cfg: &RunConfig) -> Result<(Cohort, FoldPlan)> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out);
    let cohort = match &cfg.cohort {
        Some(dir) => load_cohort(dir)?,
        None => generate_cohort(&cfg.synth_config())?,
    };
    log::info!("cohort: {} subjects, {} positive", cohort.len(), cohort.n_positive());
    persist_cohort(&cohort, &lay.cohort())?;
    let plan = stratified_kfold(&cohort, cfg.k, cfg.volume_bins, cfg.sub_seed("folds"))?;
    write_json(&lay.foldplan(), &plan)?;
    Ok((cohort, plan))
}

pub fn load_inputs(lay: &Layout) -> Result<(Cohort, FoldPlan)> {
    if !lay.cohort().join("manifest.json").exists() {
        return Err(Error::Missing(format!("cohort {} (run synth first)", lay.cohort().display())));
    }
    let cohort = load_cohort(&lay.cohort())?;
    let plan: FoldPlan = read_json(&lay.foldplan(), "run synth first")?;
    plan.validate()?;
    if plan.ids != cohort.ids() {
        return Err(Error::InvalidInput("fold plan does not match the cohort".into()));
    }
    Ok((cohort, plan))
}

fn fold_ids(plan: &FoldPlan, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| plan.ids[i].clone()).collect()
}

fn header(arch: &str, hash: String, seed: u64, fold: Option<usize>, train_ids: Vec<String>) -> CheckpointHeader {
    CheckpointHeader {
        architecture: arch.into(),
        config_hash: hash,
        seed,
        fold,
        scenario: None,
        meta: serde_json::json!({ "train_ids": train_ids }),
        params: vec![],
    }
}

fn checkpoint_train_ids(h: &CheckpointHeader) -> Result<Vec<String>> {
    serde_json::from_value(h.meta["train_ids"].clone())
        .map_err(|_| Error::InvalidInput(format!("{} checkpoint lacks its training subject list", h.architecture)))
}

/// What the shared MAE was pretrained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pretraining {
    pub checkpoint: PathBuf,
    pub config_hash: String,
    pub train_ids: Vec<String>,
    pub log: Option<TrainLog>,
}

/// Loads the pretrained MAE from its checkpoint when the configuration hash
/// matches, otherwise pretrains on the external cohort and saves it.
fn pretrained_mae(cfg: &RunConfig, lay: &Layout, roi_shape: [usize; 3]) -> Result<(Mae3d<f32>, Pretraining)> {
    let mcfg = cfg.mae3d_config(roi_shape);
    let ext = cfg.ssl_synth_config();
    let hash = config_hash(&(&mcfg.roi_shape, &mcfg.latent_shape, mcfg.mask_ratio, mcfg.pretrain_lr, mcfg.pretrain_epochs, mcfg.batch, mcfg.seed, &ext, cfg.roi_mm));
    let path = cfg
        .ssl_checkpoint
        .clone()
        .unwrap_or_else(|| lay.extractor_dir(MAE3D).join("pretrained.fbck"));
    if path.exists() {
        let ck = checkpoint::read(&path)?;
        if ck.header.config_hash == hash {
            log::info!("reusing pretrained MAE {}", path.display());
            let mut m = Mae3d::new(mcfg)?;
            ck.restore(&mut m)?;
            let train_ids = checkpoint_train_ids(&ck.header)?;
            return Ok((
                m,
                Pretraining {
                    checkpoint: path,
                    config_hash: hash,
                    train_ids,
                    log: None,
                },
            ));
        }
        log::warn!("{} was pretrained with another configuration; retraining", path.display());
    }
    let mut ext_cohort = generate_cohort(&ext)?;
    for s in &mut ext_cohort.subjects {
        // a separate population: its ids never collide with the study cohort
        s.id = s.id.replacen('S', "X", 1);
    }
    let images = prepare_images(&ext_cohort, cfg.roi_mm)?;
    let rois: Vec<&[f32]> = images.iter().map(|im| im.roi.as_slice()).collect();
    log::info!("pretraining MAE on {} external subjects", rois.len());
    let (m, log) = Mae3d::pretrain(mcfg, &rois)?;
    let train_ids = ext_cohort.ids();
    checkpoint::save(&path, &header(MAE3D, hash.clone(), m.cfg.seed, None, train_ids.clone()), &m)?;
    Ok((
        m,
        Pretraining {
            checkpoint: path,
            config_hash: hash,
            train_ids,
            log: Some(log),
        },
    ))
}

/// One AE and one fine-tuned MAE per fold, each trained only on the other
/// folds' subjects.
pub fn train_extractors(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out);
    let (cohort, plan) = load_inputs(&lay)?;
    let (need_ae, need_mae) = needs(&cfg.specs()?);
    if !need_ae && !need_mae {
        log::info!("no selected scenario uses image latents; nothing to train");
        return Ok(());
    }
    let images = prepare_images(&cohort, cfg.roi_mm)?;
    if need_ae {
        let hw = images[0].slice_hw;
        let logs = (0..plan.k)
            .into_par_iter()
            .map(|f| {
                let tr = plan.train_indices(f);
                let slices: Vec<&[f32]> = tr.iter().map(|&i| images[i].slice.as_slice()).collect();
                let acfg = cfg.ae2d_config(hw, f);
                log::info!("training AE fold {f} on {} slices", slices.len());
                let (m, log) = Ae2d::train(acfg, &slices)?;
                let h = header(AE2D, log.config_hash.clone(), log.seed, Some(f), fold_ids(&plan, &tr));
                checkpoint::save(&lay.checkpoint(AE2D, f), &h, &m)?;
                Ok(log)
            })
            .collect::<Result<Vec<TrainLog>>>()?;
        write_json(&lay.train_logs(AE2D), &logs)?;
    }
    if need_mae {
        let (base, pre) = pretrained_mae(cfg, &lay, images[0].roi_shape)?;
        let study: HashSet<&str> = plan.ids.iter().map(String::as_str).collect();
        if let Some(id) = pre.train_ids.iter().find(|id| study.contains(id.as_str())) {
            return Err(Error::Leakage(format!("pretraining cohort contains study subject {id}")));
        }
        write_json(&lay.pretraining(), &pre)?;
        let logs = (0..plan.k)
            .into_par_iter()
            .map(|f| {
                let tr = plan.train_indices(f);
                let rois: Vec<&[f32]> = tr.iter().map(|&i| images[i].roi.as_slice()).collect();
                log::info!("fine-tuning MAE fold {f} on {} ROIs", rois.len());
                let (m, log) = base.finetune(&rois, cfg.sub_seed(&format!("{MAE3D}/fold{f}")))?;
                let h = header(MAE3D, log.config_hash.clone(), log.seed, Some(f), fold_ids(&plan, &tr));
                checkpoint::save(&lay.checkpoint(MAE3D, f), &h, &m)?;
                Ok(log)
            })
            .collect::<Result<Vec<TrainLog>>>()?;
        write_json(&lay.train_logs(MAE3D), &logs)?;
    }
    Ok(())
}

/// Restores fold `f`'s extractor after checking that its recorded training
/// set is exactly the plan's training folds.
fn restore_fold<M: crate::nn::Module<f32>>(lay: &Layout, plan: &FoldPlan, name: &str, f: usize, mut model: M) -> Result<M> {
    let path = lay.checkpoint(name, f);
    if !path.exists() {
        return Err(Error::Missing(format!("{} (run train-extractors first)", path.display())));
    }
    let ck = checkpoint::read(&path)?;
    if ck.header.fold != Some(f) || checkpoint_train_ids(&ck.header)? != fold_ids(plan, &plan.train_indices(f)) {
        return Err(Error::Leakage(format!(
            "{} was not trained on exactly the subjects outside fold {f}",
            path.display()
        )));
    }
    ck.restore(&mut model)?;
    Ok(model)
}

/// Records each fold's checkpoint path, relative to the output directory.
fn keeper<'a, M>(lay: &'a Layout, name: &'a str) -> impl FnMut(usize, &M) -> Result<Option<String>> + 'a {
    move |f, _| {
        let p = lay.checkpoint(name, f);
        Ok(Some(p.strip_prefix(&lay.root).unwrap_or(&p).display().to_string()))
    }
}

/// Encodes every subject with the extractor of its own validation fold and
/// writes the latent store.
pub fn extract_latents(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out);
    let (cohort, plan) = load_inputs(&lay)?;
    let (need_ae, need_mae) = needs(&cfg.specs()?);
    if !need_ae && !need_mae {
        log::info!("no selected scenario uses image latents; nothing to extract");
        return Ok(());
    }
    let images = prepare_images(&cohort, cfg.roi_mm)?;
    if need_ae {
        let logs: Vec<TrainLog> = read_json(&lay.train_logs(AE2D), "run train-extractors first")?;
        let hw = images[0].slice_hw;
        let oof = out_of_fold_latents(
            &plan,
            AE2D,
            |f, _| {
                let m = restore_fold(&lay, &plan, AE2D, f, Ae2d::new(cfg.ae2d_config(hw, f))?)?;
                Ok((m, logs[f].clone()))
            },
            |m: &Ae2d<f32>, i, producer, f| m.encode_slice(&images[i].slice, producer, Some(f)),
            keeper(&lay, AE2D),
        )?;
        audit_oof(&oof.latents, &oof.producers, &plan)?;
        write_latents(&lay.latents(), &oof)?;
    }
    if need_mae {
        let logs: Vec<TrainLog> = read_json(&lay.train_logs(MAE3D), "run train-extractors first")?;
        let mcfg = cfg.mae3d_config(images[0].roi_shape);
        let oof = out_of_fold_latents(
            &plan,
            MAE3D,
            |f, _| {
                let m = restore_fold(&lay, &plan, MAE3D, f, Mae3d::new(mcfg.clone())?)?;
                Ok((m, logs[f].clone()))
            },
            |m: &Mae3d<f32>, i, producer, f| m.encode_roi(&images[i].roi, producer, Some(f)),
            keeper(&lay, MAE3D),
        )?;
        audit_oof(&oof.latents, &oof.producers, &plan)?;
        write_latents(&lay.latents(), &oof)?;
    }
    Ok(())
}

fn check_store(store: &OofLatents, plan: &FoldPlan) -> Result<()> {
    audit_oof(&store.latents, &store.producers, plan)
}

/// Runs the selected scenarios, audits them and writes `matrix.json`,
/// `predictions.csv` and `audit.json`.
pub fn run(cfg: &RunConfig) -> Result<Matrix> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out);
    let (cohort, plan) = load_inputs(&lay)?;
    let specs = cfg.specs()?;
    let (need_ae, need_mae) = needs(&specs);
    let ids = cohort.ids();
    let l2 = need_ae.then(|| load_latents(&lay.latents(), AE2D, &ids)).transpose()?;
    let l3 = need_mae.then(|| load_latents(&lay.latents(), MAE3D, &ids)).transpose()?;
    for s in l2.iter().chain(&l3) {
        check_store(s, &plan)?;
    }
    let need_images = specs.iter().any(|s| s.inputs == InputKind::Daft3dRoi);
    let images: Option<Vec<SubjectImages>> = need_images.then(|| prepare_images(&cohort, cfg.roi_mm)).transpose()?;
    let data = ScenarioData {
        cohort: &cohort,
        plan: &plan,
        latent2d: l2.as_ref(),
        latent3d: l3.as_ref(),
        images: images.as_deref(),
    };
    let results = run_matrix(&data, &specs, &cfg.harness())?;
    let producers = producer_training_sets(l2.iter().chain(&l3));
    for r in &results {
        audit_scenario(&plan, r, &producers)?;
        log::info!("{}: mean F1 {:.3}, mean AUC {:.3} ({:.0} s)", r.scenario, r.mean_f1, r.mean_auc, r.runtime_s);
    }
    let matrix = Matrix::from_results(cfg.seed, cfg.result_hash(), &cohort, plan.k, &results);
    matrix.write(&lay.matrix())?;
    write_predictions(&lay.predictions(), &prediction_rows(&results, &cohort)?)?;
    write_json(&lay.audit(), &AuditFile::from_results(&results))?;
    Ok(matrix)
}

/// The tabular GBT baseline plus the best other entry by mean F1.
pub fn roc_scenarios(matrix: &Matrix) -> Vec<String> {
    const BASELINE: &str = "gbt/tabular/pre+post";
    let mut out = Vec::new();
    if matrix.entry(BASELINE).is_some() {
        out.push(BASELINE.to_string());
    }
    let best = matrix
        .entries
        .iter()
        .filter(|e| e.scenario != BASELINE)
        .fold(None::<&super::matrix::MatrixEntry>, |b, e| match b {
            Some(b) if b.mean_f1 >= e.mean_f1 => Some(b),
            _ => Some(e),
        });
    if let Some(b) = best {
        out.push(b.scenario.clone());
    }
    out
}

/// Renders the charts and summary from `matrix.json` and `predictions.csv`.
pub fn report(cfg: &RunConfig) -> Result<()> {
    let lay = Layout::new(&cfg.out);
    let matrix = Matrix::read(&lay.matrix())?;
    let rows = read_predictions(&lay.predictions())?;
    let reference = Reference::bundled()?;
    let f1 = render_f1_barchart(&matrix, &reference)?;
    let roc = render_roc_curves(&rows, &roc_scenarios(&matrix))?;
    fs::write(lay.report_f1(), f1).at(lay.report_f1())?;
    fs::write(lay.report_roc(), roc).at(lay.report_roc())?;
    fs::write(lay.summary(), render_summary(&matrix, &reference)).at(lay.summary())?;
    fs::write(lay.reference(), REFERENCE_JSON).at(lay.reference())?;
    Ok(())
}

/// Every stage in order, then the leakage audit of the written artifacts.
pub fn all(cfg: &RunConfig) -> Result<Matrix> {
    synth(cfg)?;
    train_extractors(cfg)?;
    extract_latents(cfg)?;
    let m = run(cfg)?;
    report(cfg)?;
    let a = audit_run(&cfg.out)?;
    log::info!(
        "audit passed: {} scenarios, {} latent producers, {} subjects",
        a.scenarios,
        a.producers,
        a.subjects
    );
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub subjects: usize,
    pub producers: usize,
    pub scenarios: usize,
}

/// Re-derives leakage-freedom from the artifacts of a finished run alone:
/// the fold plan, checkpoint headers, latent store provenance, the
/// per-fold training records and the stored predictions.
pub fn audit_run(out: &Path) -> Result<AuditSummary> {
    let lay = Layout::new(out);
    let plan: FoldPlan = read_json(&lay.foldplan(), "run synth first")?;
    plan.validate()?;
    let study: BTreeSet<&str> = plan.ids.iter().map(String::as_str).collect();

    let mut stores = Vec::new();
    for name in [AE2D, MAE3D] {
        if !lay.latents().join(name).join("producers.json").exists() {
            continue;
        }
        let s = load_latents(&lay.latents(), name, &plan.ids)?;
        check_store(&s, &plan)?;
        for p in &s.producers {
            let path = lay.checkpoint(name, p.fold);
            let h = checkpoint::read(&path)?.header;
            if checkpoint_train_ids(&h)? != p.train_ids || h.fold != Some(p.fold) {
                return Err(Error::Leakage(format!("{} disagrees with producer {}", path.display(), p.producer)));
            }
        }
        stores.push(s);
    }
    if lay.pretraining().exists() {
        let pre: Pretraining = read_json(&lay.pretraining(), "")?;
        if let Some(id) = pre.train_ids.iter().find(|id| study.contains(id.as_str())) {
            return Err(Error::Leakage(format!("MAE pretraining used study subject {id}")));
        }
    }

    let audit: AuditFile = read_json(&lay.audit(), "run the matrix first")?;
    let rows = read_predictions(&lay.predictions())?;
    let mut by_scenario: BTreeMap<String, Vec<Prediction>> = BTreeMap::new();
    for r in &rows {
        by_scenario.entry(r.scenario_id()).or_default().push(Prediction {
            subject_id: r.subject_id.clone(),
            scenario: r.scenario_id(),
            fold: r.fold,
            probability: r.probability,
        });
    }
    let producers = producer_training_sets(&stores);
    let latent_producer: BTreeMap<(&str, &str), &str> = stores
        .iter()
        .flat_map(|s| s.latents.iter().map(move |(id, l)| ((s.extractor.as_str(), id.as_str()), l.producer.as_str())))
        .collect();
    for sa in &audit.scenarios {
        let preds = by_scenario.remove(&sa.scenario).unwrap_or_default();
        audit_folds(&plan, &sa.scenario, &sa.folds, &preds, &producers)?;
        for fa in &sa.folds {
            // every latent the scenario used is the one stored for that subject
            for (id, prods) in &fa.producers {
                for p in prods {
                    let ext = p.split('/').next().unwrap_or("");
                    if latent_producer.get(&(ext, id.as_str())) != Some(&p.as_str()) {
                        return Err(Error::Leakage(format!("{}: {id} used latent from {p}", sa.scenario)));
                    }
                }
            }
            // image-only scenarios fit no tabular statistics
            let covered: BTreeSet<&str> = fa.stats_ids.iter().chain(&fa.val_ids).map(String::as_str).collect();
            if !fa.stats_ids.is_empty() && covered != study {
                return Err(Error::Leakage(format!(
                    "{}: fold {} statistics and validation sets do not partition the cohort",
                    sa.scenario, fa.fold
                )));
            }
        }
    }
    if let Some(extra) = by_scenario.keys().next() {
        return Err(Error::Leakage(format!("predictions for {extra} have no audit record")));
    }
    Ok(AuditSummary {
        subjects: plan.len(),
        producers: stores.iter().map(|s| s.producers.len()).sum(),
        scenarios: audit.scenarios.len(),
    })
}
