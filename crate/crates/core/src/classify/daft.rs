use serde::{Deserialize, Serialize};

use super::net::Classifier;
use crate::error::{Error, Result};
use crate::nn::layers::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, BlockCache};
use crate::nn::{BasicBlock, Conv, ConvSpec, Dims, Linear, Module, Param, Real, Tensor};
use crate::seed::{child_rng, Rng};

/// Conditional affine transform of a feature map from a tabular vector.
///
/// `s = GAP(F)`, `u = relu(A [s; t] + a)`, `[α; β] = B u + b`, and output
/// channel `c` is `α_c F_c + β_c`. `B` starts at zero and `b = [1…, 0…]`, so a
/// fresh block is exactly the identity.
#[derive(Debug, Clone)]
pub struct DaftBlock<T> {
    pub channels: usize,
    pub tab_dim: usize,
    pub bottleneck: Linear<T>,
    pub affine: Linear<T>,
}

pub struct DaftCache<T> {
    f: Tensor<T>,
    z: Tensor<T>,
    u: Tensor<T>,
    ab: Tensor<T>,
}

impl<T: Real> DaftBlock<T> {
    pub fn new(name: &str, channels: usize, tab_dim: usize, r: usize, rng: &mut Rng) -> Result<Self> {
        if r == 0 || channels == 0 {
            return Err(Error::Config("DAFT channels and bottleneck factor must be positive".into()));
        }
        let hidden = (channels + tab_dim).div_ceil(r);
        let bottleneck = Linear::new(&format!("{name}.bottleneck"), channels + tab_dim, hidden, rng);
        let mut affine = Linear::zeroed(&format!("{name}.affine"), hidden, 2 * channels);
        affine.bias.value[..channels].iter_mut().for_each(|v| *v = T::one());
        Ok(Self {
            channels,
            tab_dim,
            bottleneck,
            affine,
        })
    }

    pub fn hidden(&self) -> usize {
        self.bottleneck.fan_out
    }

    /// Per-item `(α, β)`, each `[N, C]` flattened row-major into one `[N, 2C]`.
    pub fn affine_params(&self, f: &Tensor<T>, t: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.stages(f, t)?.3)
    }

    #[allow(clippy::type_complexity)]
    fn stages(&self, f: &Tensor<T>, t: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
        let n = f.dim(0);
        if f.shape().len() < 3 || f.dim(1) != self.channels || t.shape() != [n, self.tab_dim] {
            return Err(Error::Shape {
                expected: vec![n, self.channels, self.tab_dim],
                actual: [&f.shape()[..2.min(f.shape().len())], t.shape()].concat(),
            });
        }
        let s = global_avg_pool(f);
        let mut z = Vec::with_capacity(n * (self.channels + self.tab_dim));
        for i in 0..n {
            z.extend_from_slice(s.item(i));
            z.extend_from_slice(t.item(i));
        }
        let z = Tensor::new(vec![n, self.channels + self.tab_dim], z)?;
        let u = relu(self.bottleneck.forward(&z)?);
        let ab = self.affine.forward(&u)?;
        Ok((s, z, u, ab))
    }

    pub fn forward_train(&self, f: &Tensor<T>, t: &Tensor<T>) -> Result<(Tensor<T>, DaftCache<T>)> {
        let (_, z, u, ab) = self.stages(f, t)?;
        let c = self.channels;
        let vol = f.numel() / (f.dim(0) * c);
        let mut out = f.clone();
        for (i, chunk) in out.data_mut().chunks_mut(vol).enumerate() {
            let (n, ch) = (i / c, i % c);
            let (a, b) = (ab.data()[n * 2 * c + ch], ab.data()[n * 2 * c + c + ch]);
            chunk.iter_mut().for_each(|v| *v = a * *v + b);
        }
        Ok((
            out,
            DaftCache {
                f: f.clone(),
                z,
                u,
                ab,
            },
        ))
    }

    pub fn forward(&self, f: &Tensor<T>, t: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(f, t)?.0)
    }

    /// Accumulates parameter gradients; returns `(dF, dt)`.
    pub fn backward(&mut self, cache: &DaftCache<T>, dout: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let c = self.channels;
        let n = cache.f.dim(0);
        let vol = cache.f.numel() / (n * c);
        let mut dab = vec![T::zero(); n * 2 * c];
        let mut df = dout.clone();
        for (i, (g, x)) in df.data_mut().chunks_mut(vol).zip(cache.f.data().chunks(vol)).enumerate() {
            let (item, ch) = (i / c, i % c);
            let a = cache.ab.data()[item * 2 * c + ch];
            let mut da = T::zero();
            let mut db = T::zero();
            for (gv, &xv) in g.iter_mut().zip(x) {
                da += *gv * xv;
                db += *gv;
                *gv *= a;
            }
            dab[item * 2 * c + ch] = da;
            dab[item * 2 * c + c + ch] = db;
        }
        let dab = Tensor::new(vec![n, 2 * c], dab).expect("affine grad shape");
        let du = self.affine.backward(&cache.u, &dab);
        let du = relu_backward(&cache.u, du);
        let dz = self.bottleneck.backward(&cache.z, &du);
        let mut ds = Vec::with_capacity(n * c);
        let mut dt = Vec::with_capacity(n * self.tab_dim);
        for row in dz.data().chunks(c + self.tab_dim) {
            ds.extend_from_slice(&row[..c]);
            dt.extend_from_slice(&row[c..]);
        }
        let ds = Tensor::new(vec![n, c], ds).expect("pool grad shape");
        df.add_assign(&global_avg_pool_backward(cache.f.shape(), &ds));
        (df, Tensor::new(vec![n, self.tab_dim], dt).expect("tab grad shape"))
    }
}

impl<T: Real> Module<T> for DaftBlock<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.bottleneck.params();
        v.extend(self.affine.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.bottleneck.params_mut();
        v.extend(self.affine.params_mut());
        v
    }
}

/// Which image input feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaftBackbone {
    /// A `(C,H,W)` 2D latent replicated along a depth axis.
    Stacked2d,
    /// Raw `(D,H,W)` tumor ROI volume.
    Roi3d,
    /// A `(C,D,H,W)` 3D latent grid.
    Latent3d,
}

impl DaftBackbone {
    pub fn as_str(self) -> &'static str {
        match self {
            DaftBackbone::Stacked2d => "2d-stacked-latent",
            DaftBackbone::Roi3d => "3d-roi-encoder",
            DaftBackbone::Latent3d => "3d-latent-head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaftConfig {
    pub backbone: DaftBackbone,
    /// Per-item input: `(C,H,W)` for stacked, `(D,H,W)` for ROI,
    /// `(C,D,H,W)` for 3D latents.
    pub input_shape: Vec<usize>,
    /// Depth replication count for the stacked backbone.
    pub stack_times: usize,
    pub tab_dim: usize,
    /// Base channel width; stages use multiples of it.
    pub width: usize,
    pub bottleneck_factor: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl DaftConfig {
    /// Optimizer settings and budgets of the reference setup; `width` 16
    /// gives the 16→32→64→128 ROI backbone.
    pub fn paper(backbone: DaftBackbone, input_shape: Vec<usize>, tab_dim: usize, seed: u64) -> Self {
        Self {
            backbone,
            input_shape,
            stack_times: 16,
            tab_dim,
            width: 16,
            bottleneck_factor: 7,
            lr: 1e-3,
            batch: 16,
            epochs: if backbone == DaftBackbone::Stacked2d { 100 } else { 25 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = match self.backbone {
            DaftBackbone::Stacked2d => self.input_shape.len() == 3 && self.stack_times >= 2 && self.stack_times % 2 == 0,
            DaftBackbone::Roi3d => self.input_shape.len() == 3,
            DaftBackbone::Latent3d => self.input_shape.len() == 4,
        };
        if !dims_ok || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "input shape {:?} does not fit the {} backbone",
                self.input_shape,
                self.backbone.as_str()
            )));
        }
        if self.width == 0 || self.bottleneck_factor == 0 || self.batch == 0 || self.tab_dim == 0 {
            return Err(Error::Config("DAFT width, bottleneck, batch and tabular width must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Residual CNN with one DAFT block before the final residual stage.
///
/// * ROI: 2³/2 stem to `w`, blocks `w`, `2w`/2, `4w`/2, DAFT, `8w`/2.
/// * 3D latent: 1³ stem to `4w`, block `4w`, DAFT, `8w`/2.
/// * Stacked 2D latent: 2³/2 stem to `w` over the replicated volume, blocks
///   `w`, `2w`/2, DAFT, `4w`/2.
///
/// Every stem is followed by a ReLU; the head is GAP then one logit.
#[derive(Debug, Clone)]
pub struct DaftModel<T> {
    pub cfg: DaftConfig,
    pub stem: Conv<T>,
    pub blocks: Vec<BasicBlock<T>>,
    pub daft: DaftBlock<T>,
    pub last: BasicBlock<T>,
    pub head: Linear<T>,
}

pub struct DaftModelCache<T> {
    x: Tensor<T>,
    stem_out: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    daft: DaftCache<T>,
    last: BlockCache<T>,
    last_shape: Vec<usize>,
    feat: Tensor<T>,
}

impl<T: Real> DaftModel<T> {
    pub fn new(cfg: DaftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = child_rng(cfg.seed, "daft/init");
        let w = cfg.width;
        let d3 = Dims::Three;
        let (stem, plan, pre) = match cfg.backbone {
            DaftBackbone::Roi3d => (
                Conv::new("stem", 1, w, ConvSpec::cube(2, 2, 0), &mut rng),
                vec![(w, w, 1), (w, 2 * w, 2), (2 * w, 4 * w, 2)],
                (4 * w, 8 * w),
            ),
            DaftBackbone::Latent3d => (
                Conv::new("stem", cfg.input_shape[0], 4 * w, ConvSpec::cube(1, 1, 0), &mut rng),
                vec![(4 * w, 4 * w, 1)],
                (4 * w, 8 * w),
            ),
            DaftBackbone::Stacked2d => (
                Conv::new("stem", cfg.input_shape[0], w, ConvSpec::cube(2, 2, 0), &mut rng),
                vec![(w, w, 1), (w, 2 * w, 2)],
                (2 * w, 4 * w),
            ),
        };
        let blocks = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, s))| BasicBlock::new(&format!("layer{i}"), cin, cout, s, d3, &mut rng))
            .collect();
        let daft = DaftBlock::new("daft", pre.0, cfg.tab_dim, cfg.bottleneck_factor, &mut rng)?;
        let last = BasicBlock::new("last", pre.0, pre.1, 2, d3, &mut rng);
        let head = Linear::new("fc", pre.1, 1, &mut rng);
        Ok(Self {
            cfg,
            stem,
            blocks,
            daft,
            last,
            head,
        })
    }

    /// Stem over the depth-replicated latent without materializing it.
    ///
    /// Each output depth of a 2-deep, stride-2 kernel over identical slices
    /// equals a 2D convolution with the kernel summed over depth.
    fn stacked_stem_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let flat = self.flat_stem();
        let y = flat.forward(x)?;
        Ok(replicate_depth(&y, self.cfg.stack_times / 2))
    }

    fn flat_stem(&self) -> Conv<T> {
        let s = &self.stem;
        let [kd, kh, kw] = s.spec.kernel;
        let plane = kh * kw;
        let mut wsum = vec![T::zero(); s.cout * s.cin * plane];
        for (oc_ic, out) in wsum.chunks_mut(plane).enumerate() {
            for d in 0..kd {
                let src = &s.weight.value[(oc_ic * kd + d) * plane..(oc_ic * kd + d + 1) * plane];
                out.iter_mut().zip(src).for_each(|(o, &v)| *o += v);
            }
        }
        let spec = ConvSpec {
            kernel: [1, kh, kw],
            stride: [1, s.spec.stride[1], s.spec.stride[2]],
            pad: [0, s.spec.pad[1], s.spec.pad[2]],
        };
        Conv {
            weight: Param::new("flat".into(), vec![s.cout, s.cin, 1, kh, kw], wsum),
            bias: Param::new("flat.bias".into(), vec![s.cout], s.bias.value.clone()),
            cin: s.cin,
            cout: s.cout,
            spec,
        }
    }

    fn stacked_stem_backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) {
        let mut flat = self.flat_stem();
        let dsum = sum_depth(dy);
        flat.backward(x, &dsum, false);
        let [kd, kh, kw] = self.stem.spec.kernel;
        let plane = kh * kw;
        for (oc_ic, g) in flat.weight.grad.chunks(plane).enumerate() {
            for d in 0..kd {
                let dst = &mut self.stem.weight.grad[(oc_ic * kd + d) * plane..(oc_ic * kd + d + 1) * plane];
                dst.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
            }
        }
        for (o, &v) in self.stem.bias.grad.iter_mut().zip(&flat.bias.grad) {
            *o += v;
        }
    }
}

/// `[N,C,1,H,W]` → `[N,C,times,H,W]`.
fn replicate_depth<T: Real>(y: &Tensor<T>, times: usize) -> Tensor<T> {
    let (n, c, h, w) = (y.dim(0), y.dim(1), y.dim(3), y.dim(4));
    let mut out = Vec::with_capacity(y.numel() * times);
    for plane in y.data().chunks(h * w) {
        for _ in 0..times {
            out.extend_from_slice(plane);
        }
    }
    Tensor::new(vec![n, c, times, h, w], out).expect("replicated shape")
}

/// `[N,C,D,H,W]` → `[N,C,1,H,W]` summed over depth.
fn sum_depth<T: Real>(y: &Tensor<T>) -> Tensor<T> {
    let (n, c, d, h, w) = (y.dim(0), y.dim(1), y.dim(2), y.dim(3), y.dim(4));
    let plane = h * w;
    let mut out = vec![T::zero(); n * c * plane];
    for (i, o) in out.chunks_mut(plane).enumerate() {
        for k in 0..d {
            let src = &y.data()[(i * d + k) * plane..(i * d + k + 1) * plane];
            o.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
        }
    }
    Tensor::new(vec![n, c, 1, h, w], out).expect("summed shape")
}

impl<T: Real> Classifier<T> for DaftModel<T> {
    type Cache = DaftModelCache<T>;

    fn item_shape(&self) -> Vec<usize> {
        let s = &self.cfg.input_shape;
        match self.cfg.backbone {
            DaftBackbone::Stacked2d => vec![s[0], 1, s[1], s[2]],
            DaftBackbone::Roi3d => vec![1, s[0], s[1], s[2]],
            DaftBackbone::Latent3d => s.clone(),
        }
    }

    fn tab_dim(&self) -> usize {
        self.cfg.tab_dim
    }

    fn forward_train(&self, x: &Tensor<T>, tab: Option<&Tensor<T>>) -> Result<(Vec<T>, DaftModelCache<T>)> {
        let want = self.item_shape();
        if x.shape().len() != 5 || x.shape()[1..] != want[..] {
            return Err(Error::Shape {
                expected: [&[x.shape().first().copied().unwrap_or(0)][..], &want].concat(),
                actual: x.shape().to_vec(),
            });
        }
        let t = tab.ok_or_else(|| Error::InvalidInput("DAFT needs a tabular vector per item".into()))?;
        let stem_out = relu(match self.cfg.backbone {
            DaftBackbone::Stacked2d => self.stacked_stem_forward(x)?,
            _ => self.stem.forward(x)?,
        });
        let mut h = stem_out.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (o, c) = b.forward_train(&h)?;
            caches.push(c);
            h = o;
        }
        let (h, daft) = self.daft.forward_train(&h, t)?;
        let (h, last) = self.last.forward_train(&h)?;
        let feat = global_avg_pool(&h);
        let logits = self.head.forward(&feat)?.into_data();
        Ok((
            logits,
            DaftModelCache {
                x: x.clone(),
                stem_out,
                blocks: caches,
                daft,
                last,
                last_shape: h.shape().to_vec(),
                feat,
            },
        ))
    }

    fn backward(&mut self, c: &DaftModelCache<T>, dlogits: &[T]) {
        let dy = Tensor::new(vec![dlogits.len(), 1], dlogits.to_vec()).expect("logit grad");
        let dfeat = self.head.backward(&c.feat, &dy);
        let d = global_avg_pool_backward(&c.last_shape, &dfeat);
        let d = self.last.backward(&c.last, d, true).expect("dx");
        let (mut d, _) = self.daft.backward(&c.daft, &d);
        for (b, cache) in self.blocks.iter_mut().zip(&c.blocks).rev() {
            d = b.backward(cache, d, true).expect("dx");
        }
        let d = relu_backward(&c.stem_out, d);
        match self.cfg.backbone {
            DaftBackbone::Stacked2d => self.stacked_stem_backward(&c.x, &d),
            _ => {
                self.stem.backward(&c.x, &d, false);
            }
        }
    }
}

impl<T: Real> Module<T> for DaftModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.stem.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.daft.params());
        v.extend(self.last.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.stem.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.daft.params_mut());
        v.extend(self.last.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}
