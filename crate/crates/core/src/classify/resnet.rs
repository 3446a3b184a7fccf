use serde::{Deserialize, Serialize};

use super::net::Classifier;
use crate::error::{Error, Result};
use crate::nn::layers::{
    global_avg_pool, global_avg_pool_backward, max_pool, max_pool_backward, relu, relu_backward, BlockCache,
};
use crate::nn::{BasicBlock, Conv, Dims, Linear, Module, Param, Real, Tensor};
use crate::seed::child_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetConfig {
    /// Square input side (the padded array side).
    pub input_side: usize,
    /// Channels of the first stage; later stages double it.
    pub width: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl ResNetConfig {
    pub fn paper(input_side: usize, seed: u64) -> Self {
        Self {
            input_side,
            width: 64,
            lr: 1e-2,
            batch: 32,
            epochs: 500,
            seed,
        }
    }
}

/// 18-layer pattern: 7×7/2 stem, 3×3/2 max pool, four stages of two basic
/// blocks (strides 1,2,2,2), global average pool, one-logit head. No
/// normalization layers, so items in a batch never interact.
#[derive(Debug, Clone)]
pub struct ResNet2d<T> {
    pub cfg: ResNetConfig,
    pub stem: Conv<T>,
    pub blocks: Vec<BasicBlock<T>>,
    pub head: Linear<T>,
}

pub struct ResNetCache<T> {
    x: Tensor<T>,
    stem_out: Tensor<T>,
    pool_arg: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    last_shape: Vec<usize>,
    feat: Tensor<T>,
}

impl<T: Real> ResNet2d<T> {
    pub fn new(cfg: ResNetConfig) -> Result<Self> {
        if cfg.input_side == 0 || cfg.width == 0 || cfg.batch == 0 {
            return Err(Error::Config("input side, width and batch must be positive".into()));
        }
        let mut rng = child_rng(cfg.seed, "resnet/init");
        let w = cfg.width;
        let stem = Conv::new("stem", 1, w, Dims::Two.conv(7, 2, 3), &mut rng);
        let mut blocks = Vec::new();
        let mut cin = w;
        for (s, stride) in [1, 2, 2, 2].into_iter().enumerate() {
            let cout = w << s;
            blocks.push(BasicBlock::new(&format!("layer{s}.0"), cin, cout, stride, Dims::Two, &mut rng));
            blocks.push(BasicBlock::new(&format!("layer{s}.1"), cout, cout, 1, Dims::Two, &mut rng));
            cin = cout;
        }
        let head = Linear::new("fc", cin, 1, &mut rng);
        Ok(Self {
            cfg,
            stem,
            blocks,
            head,
        })
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.cfg.input_side;
        if x.shape().len() != 5 || x.shape()[1..] != [1, 1, s, s] {
            return Err(Error::Shape {
                expected: vec![x.shape().first().copied().unwrap_or(0), 1, 1, s, s],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl<T: Real> Classifier<T> for ResNet2d<T> {
    type Cache = ResNetCache<T>;

    fn item_shape(&self) -> Vec<usize> {
        vec![1, 1, self.cfg.input_side, self.cfg.input_side]
    }

    fn tab_dim(&self) -> usize {
        0
    }

    fn forward_train(&self, x: &Tensor<T>, _tab: Option<&Tensor<T>>) -> Result<(Vec<T>, ResNetCache<T>)> {
        self.check(x)?;
        let stem_out = relu(self.stem.forward(x)?);
        let (mut h, pool_arg) = max_pool(&stem_out, &Dims::Two.conv(3, 2, 1))?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (o, c) = b.forward_train(&h)?;
            caches.push(c);
            h = o;
        }
        let feat = global_avg_pool(&h);
        let logits = self.head.forward(&feat)?.into_data();
        Ok((
            logits,
            ResNetCache {
                x: x.clone(),
                stem_out,
                pool_arg,
                blocks: caches,
                last_shape: h.shape().to_vec(),
                feat,
            },
        ))
    }

    fn backward(&mut self, c: &ResNetCache<T>, dlogits: &[T]) {
        let dy = Tensor::new(vec![dlogits.len(), 1], dlogits.to_vec()).expect("logit grad");
        let dfeat = self.head.backward(&c.feat, &dy);
        let mut d = global_avg_pool_backward(&c.last_shape, &dfeat);
        for (b, cache) in self.blocks.iter_mut().zip(&c.blocks).rev() {
            d = b.backward(cache, d, true).expect("block input grad");
        }
        let d = max_pool_backward(c.stem_out.shape(), &c.pool_arg, &d);
        let d = relu_backward(&c.stem_out, d);
        self.stem.backward(&c.x, &d, false);
    }
}

impl<T: Real> Module<T> for ResNet2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.stem.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.stem.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::net::{predict_net, train_net, NetTrainConfig};
    use crate::nn::gradcheck::check_params;
    use crate::nn::layers::bce_with_logits;
    use crate::seed;
    use rand::Rng as _;

    fn cfg(side: usize) -> ResNetConfig {
        ResNetConfig {
            input_side: side,
            width: 4,
            lr: 1e-2,
            batch: 16,
            epochs: 30,
            seed: 2,
        }
    }

    fn random_items(n: usize, len: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut r = seed::rng(seed);
        (0..n).map(|_| (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zeroed_residual_branches_leave_shortcut_path() {
        let mut m = ResNet2d::<f64>::new(cfg(12)).unwrap();
        for b in &mut m.blocks {
            for c in [&mut b.conv1, &mut b.conv2] {
                c.weight.value.iter_mut().for_each(|w| *w = 0.0);
                c.bias.value.iter_mut().for_each(|w| *w = 0.0);
            }
        }
        let x = Tensor::new(vec![2, 1, 1, 12, 12], random_items(1, 288, 1)[0].iter().map(|&v| v as f64).collect()).unwrap();
        let got = m.logits(&x, None).unwrap();

        let mut h = max_pool(&relu(m.stem.forward(&x).unwrap()), &Dims::Two.conv(3, 2, 1)).unwrap().0;
        for b in &m.blocks {
            h = match &b.downsample {
                Some(ds) => relu(ds.forward(&h).unwrap()),
                None => h,
            };
        }
        let want = m.head.forward(&global_avg_pool(&h)).unwrap().into_data();
        assert_eq!(got, want);
    }

    #[test]
    fn batch_equals_single_item_forwards() {
        let m = ResNet2d::<f32>::new(cfg(10)).unwrap();
        let items = random_items(32, 100, 4);
        let refs: Vec<&[f32]> = items.iter().map(|v| v.as_slice()).collect();
        let batch = m.logits(&Tensor::stack(&[1, 1, 10, 10], &refs).unwrap(), None).unwrap();
        for (i, it) in items.iter().enumerate() {
            let one = m.logits(&Tensor::new(vec![1, 1, 1, 10, 10], it.clone()).unwrap(), None).unwrap();
            assert!((one[0] - batch[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn separable_toy_arrays_are_fit() {
        let mut items = random_items(64, 36, 5);
        let y: Vec<f64> = (0..64).map(|i| (i % 2) as f64).collect();
        for (it, &l) in items.iter_mut().zip(&y) {
            let shift = if l > 0.5 { 1.5 } else { -1.5 };
            it.iter_mut().for_each(|v| *v += shift);
        }
        let mut m = ResNet2d::<f32>::new(cfg(6)).unwrap();
        let refs: Vec<&[f32]> = items.iter().map(|v| v.as_slice()).collect();
        let log = train_net(
            &mut m,
            &refs,
            None,
            &y,
            &NetTrainConfig {
                lr: 1e-2,
                batch: 16,
                epochs: 40,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(log.epoch_losses.len(), 40);
        let p = predict_net(&m, &refs, None).unwrap();
        let correct = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == (**y > 0.5)).count();
        assert_eq!(correct, 64);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = ResNet2d::<f64>::new(ResNetConfig {
            width: 2,
            ..cfg(8)
        })
        .unwrap();
        // open the residual branches so their weights get gradient too
        let mut r = seed::rng(6);
        for b in &mut m.blocks {
            b.conv2.weight.value.iter_mut().for_each(|w| *w = r.random_range(-0.3..0.3));
        }
        let x = Tensor::new(vec![3, 1, 1, 8, 8], random_items(1, 192, 7)[0].iter().map(|&v| v as f64).collect()).unwrap();
        let y = [1.0, 0.0, 1.0];
        let checks = check_params(
            &mut m,
            |m, bw| {
                let (z, c) = m.forward_train(&x, None).unwrap();
                let (loss, g) = bce_with_logits(&z, &y);
                if bw {
                    m.backward(&c, &g);
                }
                loss
            },
            10,
            1e-3,
            &mut r,
        );
        for c in &checks {
            assert!(c.rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn single_class_training_is_rejected() {
        let items = random_items(4, 36, 1);
        let refs: Vec<&[f32]> = items.iter().map(|v| v.as_slice()).collect();
        let mut m = ResNet2d::<f32>::new(cfg(6)).unwrap();
        let c = NetTrainConfig {
            lr: 1e-2,
            batch: 2,
            epochs: 1,
            seed: 0,
        };
        assert!(matches!(train_net(&mut m, &refs, None, &[0.0; 4], &c), Err(Error::SingleClass(_))));
    }
}
