use crate::error::{Error, Result};
use crate::seed::Rng;

use super::conv::{he_normal, spatial, Conv, ConvSpec};
use super::real::{gemm, Real};
use super::tensor::Tensor;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self {
            name,
            shape,
            value,
            grad,
        }
    }

    pub fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything exposing an ordered list of parameters.
pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

impl<T: Real> Module<T> for Conv<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl<T: Real> Module<T> for super::conv::ConvTranspose<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer, `y = x·Wᵀ + b` on `[N, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        // Glorot-style scale keeps logits small for sigmoid heads.
        let w = he_normal(rng, fan_in * fan_out, fan_in + fan_out);
        Self {
            weight: Param::new(format!("{name}.weight"), vec![fan_out, fan_in], w),
            bias: Param::zeros(format!("{name}.bias"), vec![fan_out]),
            fan_in,
            fan_out,
        }
    }

    pub fn zeroed(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), vec![fan_out, fan_in]),
            bias: Param::zeros(format!("{name}.bias"), vec![fan_out]),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.dim(1) != self.fan_in {
            return Err(Error::Shape {
                expected: vec![x.dim(0), self.fan_in],
                actual: x.shape().to_vec(),
            });
        }
        let n = x.dim(0);
        let mut y = vec![T::zero(); n * self.fan_out];
        for row in y.chunks_mut(self.fan_out) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            false,
            true,
            n,
            self.fan_out,
            self.fan_in,
            T::one(),
            x.data(),
            &self.weight.value,
            T::one(),
            &mut y,
        );
        Tensor::new(vec![n, self.fan_out], y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let n = x.dim(0);
        gemm(
            true,
            false,
            self.fan_out,
            self.fan_in,
            n,
            T::one(),
            dy.data(),
            x.data(),
            T::one(),
            &mut self.weight.grad,
        );
        for row in dy.data().chunks(self.fan_out) {
            for (g, v) in self.bias.grad.iter_mut().zip(row) {
                *g += *v;
            }
        }
        let mut dx = vec![T::zero(); n * self.fan_in];
        gemm(
            false,
            false,
            n,
            self.fan_in,
            self.fan_out,
            T::one(),
            dy.data(),
            &self.weight.value,
            T::zero(),
            &mut dx,
        );
        Tensor::new(vec![n, self.fan_in], dx).expect("dx shape")
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn relu<T: Real>(mut x: Tensor<T>) -> Tensor<T> {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    x
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(out: &Tensor<T>, mut dy: Tensor<T>) -> Tensor<T> {
    for (g, &o) in dy.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
    dy
}

/// `[N, C, ...]` → `[N, C]` mean over all trailing dims.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (x.dim(0), x.dim(1));
    let s = x.numel() / (n * c);
    let inv = T::one() / T::lit(s as f64);
    let data = x
        .data()
        .chunks(s)
        .map(|ch| ch.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![n, c], data).expect("pool shape")
}

pub fn global_avg_pool_backward<T: Real>(in_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (in_shape[0], in_shape[1]);
    let s: usize = in_shape[2..].iter().product();
    let inv = T::one() / T::lit(s as f64);
    let mut dx = Vec::with_capacity(n * c * s);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * inv, s));
    }
    Tensor::new(in_shape.to_vec(), dx).expect("pool grad shape")
}

/// Max pooling; returns the output and the flat argmax index per output.
pub fn max_pool<T: Real>(x: &Tensor<T>, spec: &ConvSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let [d, h, w] = spatial(x.shape())?;
    let (n, c) = (x.dim(0), x.dim(1));
    let outd = spec.out_dims([d, h, w])?;
    let mut y = Vec::with_capacity(n * c * outd.iter().product::<usize>());
    let mut arg = Vec::with_capacity(y.capacity());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for oz in 0..outd[0] {
            for oy in 0..outd[1] {
                for ox in 0..outd[2] {
                    let mut best = T::neg_infinity();
                    let mut bi = usize::MAX;
                    for a in 0..spec.kernel[0] {
                        let iz = (oz * spec.stride[0] + a) as isize - spec.pad[0] as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for b in 0..spec.kernel[1] {
                            let iy = (oy * spec.stride[1] + b) as isize - spec.pad[1] as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for cc in 0..spec.kernel[2] {
                                let ix =
                                    (ox * spec.stride[2] + cc) as isize - spec.pad[2] as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let i = base
                                    + (iz as usize * h + iy as usize) * w
                                    + ix as usize;
                                if x.data()[i] > best {
                                    best = x.data()[i];
                                    bi = i;
                                }
                            }
                        }
                    }
                    y.push(best);
                    arg.push(bi);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, outd[0], outd[1], outd[2]], y)?, arg))
}

pub fn max_pool_backward<T: Real>(in_shape: &[usize], arg: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape.to_vec());
    for (&i, &g) in arg.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// Whether residual blocks convolve in-plane only or volumetrically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Two,
    Three,
}

impl Dims {
    pub fn conv(self, k: usize, s: usize, p: usize) -> ConvSpec {
        match self {
            Dims::Two => ConvSpec::square(k, s, p),
            Dims::Three => ConvSpec::cube(k, s, p),
        }
    }
}

/// Basic residual block: `relu(conv2(relu(conv1(x))) + shortcut(x))`.
/// The shortcut is a strided 1×1 conv when shape changes, else identity.
#[derive(Debug, Clone)]
pub struct BasicBlock<T> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
    pub downsample: Option<Conv<T>>,
}

pub struct BlockCache<T> {
    x: Tensor<T>,
    h: Tensor<T>,
    out: Tensor<T>,
}

impl<T: Real> BasicBlock<T> {
    pub fn new(name: &str, cin: usize, cout: usize, stride: usize, dims: Dims, rng: &mut Rng) -> Self {
        let conv1 = Conv::new(&format!("{name}.conv1"), cin, cout, dims.conv(3, stride, 1), rng);
        let mut conv2 = Conv::new(&format!("{name}.conv2"), cout, cout, dims.conv(3, 1, 1), rng);
        // Residual branch starts closed; without normalization this keeps
        // the initial network close to its shortcut path.
        conv2.weight.value.iter_mut().for_each(|w| *w = T::zero());
        let downsample = (stride != 1 || cin != cout)
            .then(|| Conv::new(&format!("{name}.down"), cin, cout, dims.conv(1, stride, 0), rng));
        Self {
            conv1,
            conv2,
            downsample,
        }
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let h = relu(self.conv1.forward(x)?);
        let mut r = self.conv2.forward(&h)?;
        match &self.downsample {
            Some(ds) => r.add_assign(&ds.forward(x)?),
            None => r.add_assign(x),
        }
        let out = relu(r);
        Ok((
            out.clone(),
            BlockCache {
                x: x.clone(),
                h,
                out,
            },
        ))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn backward(&mut self, cache: &BlockCache<T>, dout: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let dsum = relu_backward(&cache.out, dout);
        let dh = self.conv2.backward(&cache.h, &dsum, true).expect("dx");
        let dh = relu_backward(&cache.h, dh);
        let dx1 = self.conv1.backward(&cache.x, &dh, need_dx);
        let dsc = match &mut self.downsample {
            Some(ds) => ds.backward(&cache.x, &dsum, need_dx),
            None => need_dx.then_some(dsum),
        };
        match (dx1, dsc) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b);
                Some(a)
            }
            _ => None,
        }
    }
}

impl<T: Real> Module<T> for BasicBlock<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        if let Some(ds) = &self.downsample {
            v.extend(ds.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        if let Some(ds) = &mut self.downsample {
            v.extend(ds.params_mut());
        }
        v
    }
}

/// Mean binary cross-entropy on logits; returns (loss, dloss/dlogit).
pub fn bce_with_logits<T: Real>(logits: &[T], targets: &[T]) -> (f64, Vec<T>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        let (zf, yf) = (z.f64(), y.f64());
        // log(1 + e^z) - y z, computed stably
        loss += zf.max(0.0) - zf * yf + (-zf.abs()).exp().ln_1p();
        grad.push(T::lit((sigmoid(zf) - yf) / n));
    }
    (loss / n, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn linear_forward_and_backward_small_case() {
        let mut lin = Linear::<f64>::zeroed("l", 2, 1);
        lin.weight.value = vec![2.0, -1.0];
        lin.bias.value = vec![0.5];
        let x = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 3.0]).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.5, -2.5]);
        let dy = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let dx = lin.backward(&x, &dy);
        assert_eq!(lin.weight.grad, vec![1.0, 4.0]);
        assert_eq!(lin.bias.grad, vec![2.0]);
        assert_eq!(dx.data(), &[2.0, -1.0, 2.0, -1.0]);
    }

    #[test]
    fn max_pool_picks_window_maximum() {
        let x = Tensor::new(
            vec![1, 1, 1, 2, 4],
            vec![1.0f64, 5.0, 2.0, 0.0, 3.0, -1.0, 7.0, 4.0],
        )
        .unwrap();
        let (y, arg) = max_pool(&x, &ConvSpec::square(2, 2, 0)).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let dx = max_pool_backward(x.shape(), &arg, &Tensor::new(vec![1, 1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn block_with_zero_branch_is_shortcut() {
        let mut r = seed::rng(1);
        let mut blk = BasicBlock::<f64>::new("b", 2, 2, 1, Dims::Three, &mut r);
        for p in [&mut blk.conv1, &mut blk.conv2] {
            p.weight.value.iter_mut().for_each(|w| *w = 0.0);
        }
        let x = relu(Tensor::new(vec![1, 2, 2, 2, 2], he_normal(&mut r, 16, 2)).unwrap());
        assert_eq!(blk.forward(&x).unwrap(), x);
    }

    #[test]
    fn bce_matches_definition() {
        let (l, g) = bce_with_logits(&[0.0f64, 2.0], &[1.0, 0.0]);
        let want = (2f64.ln() + (1.0 + 2f64.exp()).ln()) / 2.0;
        assert!((l - want).abs() < 1e-12);
        assert!((g[0] - (0.5 - 1.0) / 2.0).abs() < 1e-12);
    }
}
