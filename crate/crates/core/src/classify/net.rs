use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latents::train::{fit, TrainLog};
use crate::nn::layers::{bce_with_logits, sigmoid};
use crate::nn::{Module, Real, Tensor};
use crate::seed::{child_rng, config_hash};

/// A network mapping an image batch (and optionally a tabular batch) to one
/// logit per item.
pub trait Classifier<T: Real>: Module<T> + Clone {
    type Cache;

    /// Per-item input shape, without the batch dimension.
    fn item_shape(&self) -> Vec<usize>;
    fn tab_dim(&self) -> usize;
    fn forward_train(&self, x: &Tensor<T>, tab: Option<&Tensor<T>>) -> Result<(Vec<T>, Self::Cache)>;
    fn backward(&mut self, cache: &Self::Cache, dlogits: &[T]);

    fn logits(&self, x: &Tensor<T>, tab: Option<&Tensor<T>>) -> Result<Vec<T>> {
        Ok(self.forward_train(x, tab)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

fn batch_tensors(
    item_shape: &[usize],
    tab_dim: usize,
    images: &[&[f32]],
    tab: Option<&[Vec<f32>]>,
    idx: &[usize],
) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let items: Vec<&[f32]> = idx.iter().map(|&i| images[i]).collect();
    let x = Tensor::stack(item_shape, &items)?;
    let t = match tab {
        Some(t) if tab_dim > 0 => {
            let rows: Vec<&[f32]> = idx.iter().map(|&i| t[i].as_slice()).collect();
            Some(Tensor::stack(&[tab_dim], &rows)?)
        }
        _ => None,
    };
    Ok((x, t))
}

fn check_inputs<M: Classifier<f32>>(model: &M, images: &[&[f32]], tab: Option<&[Vec<f32>]>) -> Result<()> {
    let len: usize = model.item_shape().iter().product();
    if let Some(bad) = images.iter().find(|v| v.len() != len) {
        return Err(Error::Shape {
            expected: model.item_shape(),
            actual: vec![bad.len()],
        });
    }
    match (model.tab_dim(), tab) {
        (0, _) => Ok(()),
        (d, Some(t)) if t.len() == images.len() && t.iter().all(|r| r.len() == d) => Ok(()),
        (d, _) => Err(Error::InvalidInput(format!(
            "model expects a {d}-wide tabular vector per image"
        ))),
    }
}

/// Mean-BCE training with Adam; labels are 0/1.
pub fn train_net<M: Classifier<f32>>(
    model: &mut M,
    images: &[&[f32]],
    tab: Option<&[Vec<f32>]>,
    y: &[f64],
    cfg: &NetTrainConfig,
) -> Result<TrainLog> {
    check_inputs(model, images, tab)?;
    if images.len() != y.len() {
        return Err(Error::InvalidInput(format!("{} inputs for {} labels", images.len(), y.len())));
    }
    let npos = y.iter().filter(|&&v| v > 0.5).count();
    if npos == 0 || npos == y.len() {
        return Err(Error::SingleClass(format!("{npos} positives among {} training items", y.len())));
    }
    let shape = model.item_shape();
    let td = model.tab_dim();
    let mut rng = child_rng(cfg.seed, "net/train");
    fit(
        model,
        images.len(),
        cfg.batch,
        cfg.epochs,
        cfg.lr,
        &mut rng,
        cfg.seed,
        config_hash(cfg),
        |m, idx, _| {
            let (x, t) = batch_tensors(&shape, td, images, tab, idx)?;
            let (logits, cache) = m.forward_train(&x, t.as_ref())?;
            let targets: Vec<f32> = idx.iter().map(|&i| y[i] as f32).collect();
            let (loss, grad) = bce_with_logits(&logits, &targets);
            m.backward(&cache, &grad);
            Ok(loss)
        },
    )
}

/// Probabilities in input order, evaluated in chunks of 32.
pub fn predict_net<M: Classifier<f32>>(model: &M, images: &[&[f32]], tab: Option<&[Vec<f32>]>) -> Result<Vec<f64>> {
    check_inputs(model, images, tab)?;
    let shape = model.item_shape();
    let idx: Vec<usize> = (0..images.len()).collect();
    let mut out = Vec::with_capacity(images.len());
    for chunk in idx.chunks(32) {
        let (x, t) = batch_tensors(&shape, model.tab_dim(), images, tab, chunk)?;
        for z in model.logits(&x, t.as_ref())? {
            let p = sigmoid(z as f64);
            if !p.is_finite() {
                return Err(Error::NonFinite("predicted probability".into()));
            }
            out.push(p);
        }
    }
    Ok(out)
}
