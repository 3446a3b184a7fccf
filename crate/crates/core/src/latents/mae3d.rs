use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::train::{fit, TrainLog};
use super::{halvings, stage_channels, Latent};
use crate::error::{Error, Result};
use crate::nn::{Conv, ConvSpec, ConvTranspose, Layer, Module, Param, Real, Seq, Tensor};
use crate::seed::{child_rng, config_hash, Rng};

const DECODER_WIDTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mae3dConfig {
    pub roi_shape: [usize; 3],
    /// `(channels, d, h, w)`; the patch grid equals the latent grid.
    pub latent_shape: [usize; 4],
    pub mask_ratio: f64,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Mae3dConfig {
    /// 20³ ROI (160 mm at 8 mm); 4³ patches on a 5³ grid.
    pub fn desk(seed: u64) -> Self {
        Self {
            roi_shape: [20; 3],
            pretrain_epochs: 30,
            ..Self::paper(seed)
        }
    }

    /// 160³ ROI at 1 mm; 32³ patches on a 5³ grid.
    pub fn paper(seed: u64) -> Self {
        Self {
            roi_shape: [160; 3],
            latent_shape: [320, 5, 5, 5],
            mask_ratio: 0.6,
            pretrain_lr: 1e-3,
            pretrain_epochs: 100,
            finetune_lr: 1e-5,
            finetune_epochs: 15,
            batch: 8,
            seed,
        }
    }

    pub fn stages(&self) -> Result<usize> {
        let s: Vec<Option<usize>> = (0..3).map(|a| halvings(self.roi_shape[a], self.latent_shape[a + 1])).collect();
        match s[..] {
            [Some(a), Some(b), Some(c)] if a == b && b == c => Ok(a),
            _ => Err(Error::Config(format!(
                "patch size does not tile ROI {:?} into a power-of-two grid {:?}",
                self.roi_shape,
                &self.latent_shape[1..]
            ))),
        }
    }

    pub fn patch(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.roi_shape[a] / self.latent_shape[a + 1])
    }

    pub fn validate(&self) -> Result<()> {
        self.stages()?;
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask_ratio {} outside [0, 1)", self.mask_ratio)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// 3D convolutional masked autoencoder. The encoder halves the ROI with
/// 2×2×2 stride-2 convs down to the patch grid; the decoder is a 1×1×1
/// projection, one 3×3×3 conv and transposed convs back to full size.
#[derive(Debug, Clone)]
pub struct Mae3d<T> {
    pub cfg: Mae3dConfig,
    pub encoder: Seq<T>,
    pub decoder: Seq<T>,
}

/// Randomly hides `round(ratio · patches)` patches; `true` = hidden.
pub fn patch_mask(rng: &mut Rng, n_patches: usize, ratio: f64) -> Vec<bool> {
    let hide = (ratio * n_patches as f64).round() as usize;
    let mut m = vec![false; n_patches];
    for i in sample(rng, n_patches, hide.min(n_patches)) {
        m[i] = true;
    }
    m
}

/// Squared error averaged over hidden voxels only, or over all voxels when
/// nothing is hidden. Returns the loss and its gradient w.r.t. `recon`.
pub fn masked_mse<T: Real>(recon: &[T], target: &[T], hidden: &[bool]) -> (f64, Vec<T>) {
    let n_hidden = hidden.iter().filter(|&&h| h).count();
    let all = n_hidden == 0;
    let n = if all { recon.len() } else { n_hidden } as f64;
    let mut loss = 0.0;
    let grad = recon
        .iter()
        .zip(target)
        .zip(hidden)
        .map(|((&p, &t), &h)| {
            if all || h {
                let d = p.f64() - t.f64();
                loss += d * d;
                T::lit(2.0 * d / n)
            } else {
                T::zero()
            }
        })
        .collect();
    (loss / n, grad)
}

impl<T: Real> Mae3d<T> {
    pub fn new(cfg: Mae3dConfig) -> Result<Self> {
        cfg.validate()?;
        let stages = cfg.stages()?;
        let mut rng = child_rng(cfg.seed, "mae3d/init");
        let ch = stage_channels(stages, cfg.latent_shape[0]);
        let k = ConvSpec::cube(2, 2, 0);
        let mut enc = Vec::new();
        let mut cin = 1;
        for (i, &c) in ch.iter().enumerate() {
            enc.push(Layer::Conv(Conv::new(&format!("enc{i}"), cin, c, k, &mut rng)));
            if i + 1 < stages {
                enc.push(Layer::Relu);
            }
            cin = c;
        }
        let w = DECODER_WIDTH;
        let mut dec = vec![
            Layer::Relu,
            Layer::Conv(Conv::new("dec.proj", cfg.latent_shape[0], w, ConvSpec::cube(1, 1, 0), &mut rng)),
            Layer::Relu,
            Layer::Conv(Conv::new("dec.mix", w, w, ConvSpec::cube(3, 1, 1), &mut rng)),
            Layer::Relu,
        ];
        for i in (0..stages).rev() {
            let cout = if i == 0 { 1 } else { w };
            dec.push(Layer::ConvT(ConvTranspose::new(&format!("dec.up{i}"), w, cout, k, &mut rng)));
            if i > 0 {
                dec.push(Layer::Relu);
            }
        }
        Ok(Self {
            cfg,
            encoder: Seq::new(enc),
            decoder: Seq::new(dec),
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [d, h, w] = self.cfg.roi_shape;
        if x.shape().len() != 5 || x.shape()[1..] != [1, d, h, w] {
            return Err(Error::Shape {
                expected: vec![x.shape().first().copied().unwrap_or(0), 1, d, h, w],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.encoder.forward(x)
    }

    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.forward(&self.encode(x)?)
    }

    /// Expands per-item patch masks to a voxel mask over a `[N,1,D,H,W]` batch.
    pub fn voxel_mask(&self, patch_masks: &[Vec<bool>]) -> Vec<bool> {
        let [d, h, w] = self.cfg.roi_shape;
        let [pd, ph, pw] = self.cfg.patch();
        let [_, gd, gh, gw] = self.cfg.latent_shape;
        let mut out = Vec::with_capacity(patch_masks.len() * d * h * w);
        for pm in patch_masks {
            debug_assert_eq!(pm.len(), gd * gh * gw);
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        out.push(pm[((z / pd) * gh + y / ph) * gw + x / pw]);
                    }
                }
            }
        }
        out
    }

    /// Masked objective for one batch: hidden patches are zeroed in the
    /// input and only they contribute to the loss.
    pub fn masked_loss(&mut self, x: &Tensor<T>, patch_masks: &[Vec<bool>], backward: bool) -> Result<f64> {
        self.check_input(x)?;
        let hidden = self.voxel_mask(patch_masks);
        let mut input = x.clone();
        for (v, &h) in input.data_mut().iter_mut().zip(&hidden) {
            if h {
                *v = T::zero();
            }
        }
        let (z, ec) = self.encoder.forward_train(&input)?;
        let (y, dc) = self.decoder.forward_train(&z)?;
        let (loss, grad) = masked_mse(y.data(), x.data(), &hidden);
        if backward {
            let dy = Tensor::new(y.shape().to_vec(), grad)?;
            let dz = self.decoder.backward(&dc, dy, true).expect("decoder input grad");
            self.encoder.backward(&ec, dz, false);
        }
        Ok(loss)
    }

    fn n_patches(&self) -> usize {
        self.cfg.latent_shape[1..].iter().product()
    }
}

impl Mae3d<f32> {
    fn run(&mut self, rois: &[&[f32]], lr: f64, epochs: usize, stage: &str) -> Result<TrainLog> {
        let [d, h, w] = self.cfg.roi_shape;
        if rois.is_empty() {
            return Err(Error::InvalidInput("no ROIs to train on".into()));
        }
        if let Some(bad) = rois.iter().find(|r| r.len() != d * h * w) {
            return Err(Error::Shape {
                expected: vec![d, h, w],
                actual: vec![bad.len()],
            });
        }
        let mut rng = child_rng(self.cfg.seed, &format!("mae3d/{stage}"));
        let n_patches = self.n_patches();
        let ratio = self.cfg.mask_ratio;
        let batch = self.cfg.batch;
        let hash = config_hash(&self.cfg);
        let seed = self.cfg.seed;
        fit(self, rois.len(), batch, epochs, lr, &mut rng, seed, hash, |m, idx, r| {
            let items: Vec<&[f32]> = idx.iter().map(|&i| rois[i]).collect();
            let x = Tensor::stack(&[1, d, h, w], &items)?;
            let masks: Vec<Vec<bool>> = idx.iter().map(|_| patch_mask(r, n_patches, ratio)).collect();
            m.masked_loss(&x, &masks, true)
        })
    }

    /// Random initialization, then masked reconstruction at `pretrain_lr`.
    pub fn pretrain(cfg: Mae3dConfig, rois: &[&[f32]]) -> Result<(Self, TrainLog)> {
        let mut m = Self::new(cfg)?;
        let (lr, ep) = (m.cfg.pretrain_lr, m.cfg.pretrain_epochs);
        let log = m.run(rois, lr, ep, "pretrain")?;
        Ok((m, log))
    }

    /// Continues training a copy of `self` with the fine-tune schedule.
    pub fn finetune(&self, rois: &[&[f32]], seed: u64) -> Result<(Self, TrainLog)> {
        let mut m = self.clone();
        m.cfg.seed = seed;
        let (lr, ep) = (m.cfg.finetune_lr, m.cfg.finetune_epochs);
        let log = m.run(rois, lr, ep, "finetune")?;
        Ok((m, log))
    }

    pub fn encode_roi(&self, roi: &[f32], producer: &str, fold: Option<usize>) -> Result<Latent> {
        let [d, h, w] = self.cfg.roi_shape;
        let z = self.encode(&Tensor::new(vec![1, 1, d, h, w], roi.to_vec())?)?;
        Ok(Latent {
            shape: self.cfg.latent_shape.to_vec(),
            data: z.into_data(),
            producer: producer.to_string(),
            fold,
        })
    }
}

impl<T: Real> Module<T> for Mae3d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_params;
    use crate::seed;

    fn tiny() -> Mae3dConfig {
        Mae3dConfig {
            roi_shape: [4, 4, 4],
            latent_shape: [5, 2, 2, 2],
            mask_ratio: 0.5,
            pretrain_lr: 1e-3,
            pretrain_epochs: 2,
            finetune_lr: 1e-5,
            finetune_epochs: 1,
            batch: 2,
            seed: 1,
        }
    }

    #[test]
    fn paper_roi_gives_320_by_5_cubed() {
        let m = Mae3d::<f32>::new(Mae3dConfig::paper(0)).unwrap();
        assert_eq!(m.cfg.stages().unwrap(), 5);
        assert_eq!(m.cfg.patch(), [32; 3]);
        let z = m.encode(&Tensor::zeros(vec![1, 1, 160, 160, 160])).unwrap();
        assert_eq!(z.shape(), &[1, 320, 5, 5, 5]);
    }

    #[test]
    fn desk_roi_latent_shape() {
        let m = Mae3d::<f32>::new(Mae3dConfig::desk(0)).unwrap();
        let l = m.encode_roi(&vec![0.5; 8000], "p", Some(2)).unwrap();
        assert_eq!(l.shape, vec![320, 5, 5, 5]);
        assert_eq!(l.numel(), 40000);
    }

    #[test]
    fn patch_must_tile_roi() {
        let mut c = Mae3dConfig::desk(0);
        c.roi_shape = [21, 20, 20];
        assert!(Mae3d::<f32>::new(c).is_err());
    }

    #[test]
    fn masked_loss_matches_brute_force_over_hidden_voxels() {
        let mut m = Mae3d::<f64>::new(tiny()).unwrap();
        let x = Tensor::new(vec![1, 1, 4, 4, 4], (0..64).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let pm = vec![vec![true, false, false, true, false, true, false, false]];
        let loss = m.masked_loss(&x, &pm, false).unwrap();

        let mut input = x.data().to_vec();
        let mut hidden = Vec::new();
        for z in 0..4 {
            for y in 0..4 {
                for xx in 0..4 {
                    let h = pm[0][(z / 2) * 4 + (y / 2) * 2 + xx / 2];
                    hidden.push(h);
                    if h {
                        input[(z * 4 + y) * 4 + xx] = 0.0;
                    }
                }
            }
        }
        let recon = m.decoder.forward(&m.encoder.forward(&Tensor::new(vec![1, 1, 4, 4, 4], input).unwrap()).unwrap()).unwrap();
        let (mut s, mut n) = (0.0, 0);
        for i in 0..64 {
            if hidden[i] {
                s += (recon.data()[i] - x.data()[i]).powi(2);
                n += 1;
            }
        }
        assert_eq!(n, 24);
        assert!((loss - s / n as f64).abs() < 1e-12);
    }

    #[test]
    fn zero_ratio_is_plain_reconstruction() {
        let mut m = Mae3d::<f64>::new(tiny()).unwrap();
        let x = Tensor::new(vec![1, 1, 4, 4, 4], (0..64).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let mut r = seed::rng(0);
        let pm = vec![patch_mask(&mut r, 8, 0.0)];
        assert!(pm[0].iter().all(|&h| !h));
        let masked = m.masked_loss(&x, &pm, false).unwrap();
        let recon = m.reconstruct(&x).unwrap();
        let plain = recon.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 64.0;
        assert!((masked - plain).abs() < 1e-15);
    }

    #[test]
    fn visible_target_voxels_do_not_affect_masked_loss() {
        let recon = vec![0.5f64; 8];
        let mut target = vec![0.1f64; 8];
        let hidden = [true, false, true, false, false, false, true, false];
        let a = masked_mse(&recon, &target, &hidden).0;
        target[1] = 100.0;
        target[7] = -3.0;
        assert_eq!(masked_mse(&recon, &target, &hidden).0, a);
        target[0] = 7.0;
        assert_ne!(masked_mse(&recon, &target, &hidden).0, a);
    }

    #[test]
    fn patch_mask_hides_rounded_fraction() {
        let mut r = seed::rng(3);
        assert_eq!(patch_mask(&mut r, 125, 0.6).iter().filter(|&&h| h).count(), 75);
        assert_eq!(patch_mask(&mut r, 8, 0.5).iter().filter(|&&h| h).count(), 4);
    }

    #[test]
    fn masked_objective_gradients_match_finite_differences() {
        let mut m = Mae3d::<f64>::new(tiny()).unwrap();
        let x = Tensor::new(vec![2, 1, 4, 4, 4], (0..128).map(|i| ((i * 31) % 17) as f64 / 8.0 - 1.0).collect()).unwrap();
        let pm = vec![vec![true, false, true, false, false, true, false, true], vec![false, true, true, false, true, false, false, false]];
        let mut r = seed::rng(8);
        let checks = check_params(&mut m, |m, bw| m.masked_loss(&x, &pm, bw).unwrap(), 10, 1e-3, &mut r);
        for c in &checks {
            assert!(c.rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn pretrain_reduces_masked_loss_and_finetune_keeps_shape() {
        let mut cfg = tiny();
        cfg.pretrain_epochs = 40;
        cfg.pretrain_lr = 3e-3;
        let data: Vec<Vec<f32>> = (0..8)
            .map(|k| (0..64).map(|i| if (i + k) % 5 == 0 { 1.0 } else { 0.2 }).collect())
            .collect();
        let rois: Vec<&[f32]> = data.iter().map(|v| v.as_slice()).collect();
        let (m, log) = Mae3d::pretrain(cfg, &rois).unwrap();
        assert_eq!(log.epoch_losses.len(), 40);
        assert!(log.epoch_losses[39] < log.epoch_losses[0]);
        let (f, flog) = m.finetune(&rois, 99).unwrap();
        assert_eq!(flog.epoch_losses.len(), 1);
        assert_eq!(f.encode_roi(rois[0], "f", Some(0)).unwrap().shape, vec![5, 2, 2, 2]);
    }
}
