use serde::{Deserialize, Serialize};

use super::train::{fit, TrainLog};
use super::{halvings, stage_channels, Latent};
use crate::error::{Error, Result};
use crate::nn::{Conv, ConvSpec, ConvTranspose, Layer, Module, Param, Real, Seq, Tensor};
use crate::seed::{child_rng, config_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ae2dConfig {
    pub input_hw: [usize; 2],
    /// `(channels, h, w)` of the encoder output.
    pub latent_shape: [usize; 3],
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Ae2dConfig {
    /// 32×32 slices from the 8 mm desk cohort; one encoder stage.
    pub fn desk(seed: u64) -> Self {
        Self {
            input_hw: [32, 32],
            ..Self::paper(seed)
        }
    }

    /// 256×256 slices at 1 mm; four encoder stages.
    pub fn paper(seed: u64) -> Self {
        Self {
            input_hw: [256, 256],
            latent_shape: [128, 16, 16],
            lr: 1e-2,
            batch: 16,
            epochs: 50,
            seed,
        }
    }

    pub fn stages(&self) -> Result<usize> {
        let sh = halvings(self.input_hw[0], self.latent_shape[1]);
        let sw = halvings(self.input_hw[1], self.latent_shape[2]);
        match (sh, sw) {
            (Some(a), Some(b)) if a == b => Ok(a),
            _ => Err(Error::Config(format!(
                "input {:?} cannot be halved an equal number of times to {:?}",
                self.input_hw,
                &self.latent_shape[1..]
            ))),
        }
    }
}

/// Convolutional autoencoder: stride-2 2×2 conv stages down to the latent
/// grid (ReLU between stages, linear last stage), mirrored by transposed
/// convs in the decoder.
#[derive(Debug, Clone)]
pub struct Ae2d<T> {
    pub cfg: Ae2dConfig,
    pub encoder: Seq<T>,
    pub decoder: Seq<T>,
}

impl<T: Real> Ae2d<T> {
    pub fn new(cfg: Ae2dConfig) -> Result<Self> {
        let stages = cfg.stages()?;
        if cfg.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        let mut rng = child_rng(cfg.seed, "ae2d/init");
        let ch = stage_channels(stages, cfg.latent_shape[0]);
        let k = ConvSpec::square(2, 2, 0);
        let mut enc = Vec::new();
        let mut cin = 1;
        for (i, &c) in ch.iter().enumerate() {
            enc.push(Layer::Conv(Conv::new(&format!("enc{i}"), cin, c, k, &mut rng)));
            if i + 1 < stages {
                enc.push(Layer::Relu);
            }
            cin = c;
        }
        let mut dec = vec![Layer::Relu];
        for i in (0..stages).rev() {
            let cout = if i == 0 { 1 } else { ch[i - 1] };
            dec.push(Layer::ConvT(ConvTranspose::new(&format!("dec{i}"), ch[i], cout, k, &mut rng)));
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
        let [h, w] = self.cfg.input_hw;
        if x.shape().len() != 5 || x.shape()[1..] != [1, 1, h, w] {
            return Err(Error::Shape {
                expected: vec![x.shape().first().copied().unwrap_or(0), 1, 1, h, w],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `[N,1,1,H,W]` → `[N,C,1,h,w]`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.encoder.forward(x)
    }

    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.forward(&self.encode(x)?)
    }

    /// Mean squared reconstruction error over every pixel of the batch;
    /// accumulates parameter gradients.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>) -> Result<f64> {
        self.check_input(x)?;
        let (z, ec) = self.encoder.forward_train(x)?;
        let (y, dc) = self.decoder.forward_train(&z)?;
        let (loss, grad) = mse(y.data(), x.data());
        let dy = Tensor::new(y.shape().to_vec(), grad)?;
        let dz = self.decoder.backward(&dc, dy, true).expect("decoder input grad");
        self.encoder.backward(&ec, dz, false);
        Ok(loss)
    }

    pub fn mse(&self, x: &Tensor<T>) -> Result<f64> {
        Ok(mse(self.reconstruct(x)?.data(), x.data()).0)
    }
}

pub(crate) fn mse<T: Real>(pred: &[T], target: &[T]) -> (f64, Vec<T>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.f64() - t.f64();
            loss += d * d;
            T::lit(2.0 * d / n)
        })
        .collect();
    (loss / n, grad)
}

impl Ae2d<f32> {
    /// Trains on `slices` (each `H·W` values, row-major).
    pub fn train(cfg: Ae2dConfig, slices: &[&[f32]]) -> Result<(Self, TrainLog)> {
        let mut model = Self::new(cfg.clone())?;
        let [h, w] = cfg.input_hw;
        if slices.len() < cfg.batch {
            return Err(Error::InvalidInput(format!(
                "{} slices is fewer than one batch of {}",
                slices.len(),
                cfg.batch
            )));
        }
        if let Some(bad) = slices.iter().find(|s| s.len() != h * w) {
            return Err(Error::Shape {
                expected: vec![h, w],
                actual: vec![bad.len()],
            });
        }
        let mut rng = child_rng(cfg.seed, "ae2d/train");
        let log = fit(
            &mut model,
            slices.len(),
            cfg.batch,
            cfg.epochs,
            cfg.lr,
            &mut rng,
            cfg.seed,
            config_hash(&cfg),
            |m, idx, _| {
                let items: Vec<&[f32]> = idx.iter().map(|&i| slices[i]).collect();
                let x = Tensor::stack(&[1, 1, h, w], &items)?;
                m.loss_and_backward(&x)
            },
        )?;
        Ok((model, log))
    }

    /// Deterministic latent for a single slice.
    pub fn encode_slice(&self, slice: &[f32], producer: &str, fold: Option<usize>) -> Result<Latent> {
        let [h, w] = self.cfg.input_hw;
        let x = Tensor::new(vec![1, 1, 1, h, w], slice.to_vec())?;
        let z = self.encode(&x)?;
        let [c, lh, lw] = self.cfg.latent_shape;
        Ok(Latent {
            shape: vec![c, lh, lw],
            data: z.into_data(),
            producer: producer.to_string(),
            fold,
        })
    }
}

impl<T: Real> Module<T> for Ae2d<T> {
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
