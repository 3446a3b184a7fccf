//! Image feature extractors: a 2D convolutional autoencoder over the
//! largest-tumor slice and a 3D masked autoencoder over the tumor ROI, plus
//! out-of-fold latent generation and the on-disk latent store.

mod ae2d;
mod inputs;
mod mae3d;
mod oof;
mod store;
pub(crate) mod train;

use serde::{Deserialize, Serialize};

pub use ae2d::{Ae2d, Ae2dConfig};
pub use inputs::{prepare_images, SubjectImages};
pub use mae3d::{masked_mse, patch_mask, Mae3d, Mae3dConfig};
pub use oof::{audit_oof, out_of_fold_latents, producer_id, OofLatents, ProducerRecord};
pub use store::{load_latents, write_latents};
pub use train::TrainLog;

/// Encoder output for one subject, tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub producer: String,
    pub fold: Option<usize>,
}

impl Latent {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Encoder channel widths for `stages` stride-2 stages ending at `last`.
pub(crate) fn stage_channels(stages: usize, last: usize) -> Vec<usize> {
    (0..stages)
        .map(|i| if i + 1 == stages { last } else { 16 << i })
        .collect()
}

/// `Some(s)` when `input / output == 2^s` exactly with `s >= 1`.
pub(crate) fn halvings(input: usize, output: usize) -> Option<usize> {
    if output == 0 || input % output != 0 {
        return None;
    }
    let r = input / output;
    (r >= 2 && r.is_power_of_two()).then(|| r.trailing_zeros() as usize)
}
