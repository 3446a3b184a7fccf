use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Module, Real};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean reconstruction loss of each epoch, averaged over its batches
    /// weighted by batch size.
    pub epoch_losses: Vec<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Learning rate in effect at the end of training.
    pub final_lr: f64,
    pub lr_halvings: u32,
}

const MAX_HALVINGS: u32 = 8;

/// Mini-batch Adam loop shared by the extractors.
///
/// `step(model, batch)` returns the batch loss and accumulates gradients.
/// An epoch whose loss goes non-finite is rolled back and retried with half
/// the learning rate.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit<T: Real, M: Module<T> + Clone>(
    model: &mut M,
    n_items: usize,
    batch: usize,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
    seed: u64,
    config_hash: String,
    mut step: impl FnMut(&mut M, &[usize], &mut Rng) -> Result<f64>,
) -> Result<TrainLog> {
    if n_items == 0 || batch == 0 {
        return Err(Error::InvalidInput("training needs at least one item and batch >= 1".into()));
    }
    let start = Instant::now();
    let mut adam = Adam::new(AdamConfig::with_lr(lr));
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut losses = Vec::with_capacity(epochs);
    let mut halvings = 0;
    let mut epoch = 0;
    while epoch < epochs {
        let snapshot = (model.clone(), adam.clone(), rng.clone());
        order.shuffle(rng);
        let mut total = 0.0;
        let mut ok = true;
        for chunk in order.chunks(batch) {
            model.zero_grad();
            let loss = step(model, chunk, rng)?;
            if !loss.is_finite() || model.params().iter().any(|p| p.grad.iter().any(|g| !g.f64().is_finite())) {
                ok = false;
                break;
            }
            total += loss * chunk.len() as f64;
            adam.step(model.params_mut());
        }
        if !ok {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::Diverged(format!(
                    "loss stayed non-finite at epoch {} after {MAX_HALVINGS} learning-rate halvings",
                    epoch + 1
                )));
            }
            let lr = adam.cfg.lr / 2.0;
            log::warn!("non-finite loss at epoch {}; retrying with lr {lr:e}", epoch + 1);
            (*model, adam, *rng) = snapshot;
            adam.cfg.lr = lr;
            continue;
        }
        losses.push(total / n_items as f64);
        epoch += 1;
    }
    Ok(TrainLog {
        epoch_losses: losses,
        wall_time_s: start.elapsed().as_secs_f64(),
        seed,
        config_hash,
        final_lr: adam.cfg.lr,
        lr_halvings: halvings,
    })
}
