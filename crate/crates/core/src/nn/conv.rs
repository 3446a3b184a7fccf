//! 3D convolution (2D is the `D = 1` special case) via im2col + GEMM.
//!
//! Column buffers are laid out as `R × (N·P)` where `R = C_in·K` and `P` is
//! the number of output positions, so one GEMM covers the whole batch.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

use super::layers::Param;
use super::real::{gemm, Real};
use super::scratch::{self, Scratch};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvSpec {
    pub fn cube(k: usize, s: usize, p: usize) -> Self {
        Self {
            kernel: [k; 3],
            stride: [s; 3],
            pad: [p; 3],
        }
    }

    /// In-plane kernel over a depth-1 volume.
    pub fn square(k: usize, s: usize, p: usize) -> Self {
        Self {
            kernel: [1, k, k],
            stride: [1, s, s],
            pad: [0, p, p],
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.pad[a];
            if padded < self.kernel[a] {
                return Err(Error::InvalidInput(format!(
                    "conv kernel {:?} larger than padded input {:?}",
                    self.kernel, input
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Spatial size produced by the transposed convolution.
    pub fn transpose_out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a] - 1) * self.stride[a] + self.kernel[a];
            if full <= 2 * self.pad[a] {
                return Err(Error::InvalidInput("transposed conv output empty".into()));
            }
            out[a] = full - 2 * self.pad[a];
        }
        Ok(out)
    }
}

pub(crate) fn spatial(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.len() != 5 {
        return Err(Error::Shape {
            expected: vec![0, 0, 0, 0, 0],
            actual: shape.to_vec(),
        });
    }
    Ok([shape[2], shape[3], shape[4]])
}

/// Output positions `lo..hi` along one axis whose tap `k` lands inside an
/// input of length `len`.
fn valid_range(out: usize, len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // first ox with ox*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // ox*stride + k - pad < len  <=>  ox*stride < len + pad - k
    let hi = if len + pad > k { (len + pad - k).div_ceil(stride) } else { 0 };
    (lo.min(out), hi.min(out).max(lo.min(out)))
}

/// Gathers input patches of `n` items into an `R × (n·P)` column buffer.
pub(crate) fn im2col<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    ind: [usize; 3],
    spec: &ConvSpec,
    outd: [usize; 3],
) -> Scratch<T> {
    let [d, h, w] = ind;
    let [od, oh, ow] = outd;
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.pad;
    let p = od * oh * ow;
    let np = n * p;
    let vol = d * h * w;
    let mut col = scratch::zeroed(cin * spec.taps() * np);
    for item in 0..n {
        for c in 0..cin {
            let xc = &x[(item * cin + c) * vol..(item * cin + c + 1) * vol];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = ((c * kd + kz) * kh + ky) * kw + kx;
                        let dst = &mut col[row * np + item * p..row * np + (item + 1) * p];
                        for oz in 0..od {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let src = &xc[(iz as usize * h + iy as usize) * w..][..w];
                                let base = (oz * oh + oy) * ow;
                                let (lo, hi) = valid_range(ow, w, sw, kx, pw);
                                let dst = &mut dst[base + lo..base + hi];
                                let first = lo * sw + kx - pw;
                                if sw == 1 {
                                    dst.copy_from_slice(&src[first..first + dst.len()]);
                                } else {
                                    for (o, v) in dst.iter_mut().zip(src[first..].iter().step_by(sw)) {
                                        *o = *v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters-adds a column buffer back into `n` items.
pub(crate) fn col2im<T: Real>(
    col: &[T],
    n: usize,
    cin: usize,
    ind: [usize; 3],
    spec: &ConvSpec,
    outd: [usize; 3],
) -> Vec<T> {
    let [d, h, w] = ind;
    let [od, oh, ow] = outd;
    let [kd, kh, kw] = spec.kernel;
    let [sd, sh, sw] = spec.stride;
    let [pd, ph, pw] = spec.pad;
    let p = od * oh * ow;
    let np = n * p;
    let vol = d * h * w;
    let mut x = vec![T::zero(); n * cin * vol];
    for item in 0..n {
        for c in 0..cin {
            let xc = &mut x[(item * cin + c) * vol..(item * cin + c + 1) * vol];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = ((c * kd + kz) * kh + ky) * kw + kx;
                        let src = &col[row * np + item * p..row * np + (item + 1) * p];
                        for oz in 0..od {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dst = &mut xc[(iz as usize * h + iy as usize) * w..][..w];
                                let base = (oz * oh + oy) * ow;
                                let (lo, hi) = valid_range(ow, w, sw, kx, pw);
                                let first = lo * sw + kx - pw;
                                for (o, v) in dst[first..].iter_mut().step_by(sw).zip(&src[base + lo..base + hi]) {
                                    *o += *v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[N, C, P]` → `C × (N·P)`.
pub(crate) fn to_channel_major<T: Real>(x: &[T], n: usize, c: usize, p: usize) -> Scratch<T> {
    let mut out = scratch::zeroed(x.len());
    for item in 0..n {
        for ch in 0..c {
            out[ch * n * p + item * p..ch * n * p + (item + 1) * p]
                .copy_from_slice(&x[(item * c + ch) * p..(item * c + ch + 1) * p]);
        }
    }
    out
}

/// `C × (N·P)` → `[N, C, P]`.
pub(crate) fn from_channel_major<T: Real>(buf: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); buf.len()];
    for item in 0..n {
        for ch in 0..c {
            out[(item * c + ch) * p..(item * c + ch + 1) * p]
                .copy_from_slice(&buf[ch * n * p + item * p..ch * n * p + (item + 1) * p]);
        }
    }
    out
}

pub(crate) fn he_normal<T: Real>(rng: &mut Rng, len: usize, fan_in: usize) -> Vec<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    (0..len)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal) * std))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Conv<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub cin: usize,
    pub cout: usize,
    pub spec: ConvSpec,
}

impl<T: Real> Conv<T> {
    pub fn new(name: &str, cin: usize, cout: usize, spec: ConvSpec, rng: &mut Rng) -> Self {
        let fan_in = cin * spec.taps();
        let w = he_normal(rng, cout * fan_in, fan_in);
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                vec![cout, cin, spec.kernel[0], spec.kernel[1], spec.kernel[2]],
                w,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![cout]),
            cin,
            cout,
            spec,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let ind = spatial(x.shape())?;
        if x.dim(1) != self.cin {
            return Err(Error::Shape {
                expected: vec![x.dim(0), self.cin],
                actual: x.shape()[..2].to_vec(),
            });
        }
        let n = x.dim(0);
        let outd = self.spec.out_dims(ind)?;
        let p: usize = outd.iter().product();
        let r = self.cin * self.spec.taps();
        let col = im2col(x.data(), n, self.cin, ind, &self.spec, outd);
        let mut ybuf = scratch::zeroed(self.cout * n * p);
        gemm(
            false,
            false,
            self.cout,
            n * p,
            r,
            T::one(),
            &self.weight.value,
            &col,
            T::zero(),
            &mut ybuf,
        );
        let mut y = from_channel_major(&ybuf, n, self.cout, p);
        for item in 0..n {
            for co in 0..self.cout {
                let b = self.bias.value[co];
                for v in &mut y[(item * self.cout + co) * p..(item * self.cout + co + 1) * p] {
                    *v += b;
                }
            }
        }
        Tensor::new(vec![n, self.cout, outd[0], outd[1], outd[2]], y)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let ind = spatial(x.shape()).expect("5D input");
        let n = x.dim(0);
        let outd = spatial(dy.shape()).expect("5D grad");
        let p: usize = outd.iter().product();
        let r = self.cin * self.spec.taps();
        let col = im2col(x.data(), n, self.cin, ind, &self.spec, outd);
        let dybuf = to_channel_major(dy.data(), n, self.cout, p);
        gemm(
            false,
            true,
            self.cout,
            r,
            n * p,
            T::one(),
            &dybuf,
            &col,
            T::one(),
            &mut self.weight.grad,
        );
        for co in 0..self.cout {
            let s: T = dybuf[co * n * p..(co + 1) * n * p].iter().copied().sum();
            self.bias.grad[co] += s;
        }
        if !need_dx {
            return None;
        }
        let mut dcol = scratch::zeroed(r * n * p);
        gemm(
            true,
            false,
            r,
            n * p,
            self.cout,
            T::one(),
            &self.weight.value,
            &dybuf,
            T::zero(),
            &mut dcol,
        );
        let dx = col2im(&dcol, n, self.cin, ind, &self.spec, outd);
        Some(Tensor::new(x.shape().to_vec(), dx).expect("dx shape"))
    }
}

/// Transposed convolution (the adjoint of [`Conv`] in its data argument),
/// used by the autoencoder decoders.
#[derive(Debug, Clone)]
pub struct ConvTranspose<T> {
    /// Stored as `[cin, cout, kd, kh, kw]`, i.e. the weight of the conv that
    /// maps `cout` channels back to `cin`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub cin: usize,
    pub cout: usize,
    pub spec: ConvSpec,
}

impl<T: Real> ConvTranspose<T> {
    pub fn new(name: &str, cin: usize, cout: usize, spec: ConvSpec, rng: &mut Rng) -> Self {
        let stride: usize = spec.stride.iter().product();
        let fan_in = (cin * spec.taps() / stride).max(1);
        let w = he_normal(rng, cin * cout * spec.taps(), fan_in);
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                vec![cin, cout, spec.kernel[0], spec.kernel[1], spec.kernel[2]],
                w,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![cout]),
            cin,
            cout,
            spec,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let ind = spatial(x.shape())?;
        if x.dim(1) != self.cin {
            return Err(Error::Shape {
                expected: vec![x.dim(0), self.cin],
                actual: x.shape()[..2].to_vec(),
            });
        }
        let n = x.dim(0);
        let outd = self.spec.transpose_out_dims(ind)?;
        let p: usize = ind.iter().product();
        let r = self.cout * self.spec.taps();
        let xbuf = to_channel_major(x.data(), n, self.cin, p);
        let mut ycol = scratch::zeroed(r * n * p);
        gemm(
            true,
            false,
            r,
            n * p,
            self.cin,
            T::one(),
            &self.weight.value,
            &xbuf,
            T::zero(),
            &mut ycol,
        );
        let mut y = col2im(&ycol, n, self.cout, outd, &self.spec, ind);
        let q: usize = outd.iter().product();
        for item in 0..n {
            for co in 0..self.cout {
                let b = self.bias.value[co];
                for v in &mut y[(item * self.cout + co) * q..(item * self.cout + co + 1) * q] {
                    *v += b;
                }
            }
        }
        Tensor::new(vec![n, self.cout, outd[0], outd[1], outd[2]], y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let ind = spatial(x.shape()).expect("5D input");
        let outd = spatial(dy.shape()).expect("5D grad");
        let n = x.dim(0);
        let p: usize = ind.iter().product();
        let q: usize = outd.iter().product();
        let r = self.cout * self.spec.taps();
        let dycol = im2col(dy.data(), n, self.cout, outd, &self.spec, ind);
        let xbuf = to_channel_major(x.data(), n, self.cin, p);
        gemm(
            false,
            true,
            self.cin,
            r,
            n * p,
            T::one(),
            &xbuf,
            &dycol,
            T::one(),
            &mut self.weight.grad,
        );
        for item in 0..n {
            for co in 0..self.cout {
                let s: T = dy.data()[(item * self.cout + co) * q..(item * self.cout + co + 1) * q]
                    .iter()
                    .copied()
                    .sum();
                self.bias.grad[co] += s;
            }
        }
        if !need_dx {
            return None;
        }
        let mut dxbuf = scratch::zeroed(self.cin * n * p);
        gemm(
            false,
            false,
            self.cin,
            n * p,
            r,
            T::one(),
            &self.weight.value,
            &dycol,
            T::zero(),
            &mut dxbuf,
        );
        let dx = from_channel_major(&dxbuf, n, self.cin, p);
        Some(Tensor::new(x.shape().to_vec(), dx).expect("dx shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    /// Direct-loop convolution used as an oracle.
    fn naive_conv(x: &Tensor<f64>, conv: &Conv<f64>) -> Vec<f64> {
        let [d, h, w] = spatial(x.shape()).unwrap();
        let outd = conv.spec.out_dims([d, h, w]).unwrap();
        let [kd, kh, kw] = conv.spec.kernel;
        let mut out = Vec::new();
        for n in 0..x.dim(0) {
            for co in 0..conv.cout {
                for oz in 0..outd[0] {
                    for oy in 0..outd[1] {
                        for ox in 0..outd[2] {
                            let mut acc = conv.bias.value[co];
                            for ci in 0..conv.cin {
                                for a in 0..kd {
                                    for b in 0..kh {
                                        for c in 0..kw {
                                            let iz = (oz * conv.spec.stride[0] + a) as isize
                                                - conv.spec.pad[0] as isize;
                                            let iy = (oy * conv.spec.stride[1] + b) as isize
                                                - conv.spec.pad[1] as isize;
                                            let ix = (ox * conv.spec.stride[2] + c) as isize
                                                - conv.spec.pad[2] as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz >= d as isize
                                                || iy >= h as isize
                                                || ix >= w as isize
                                            {
                                                continue;
                                            }
                                            let xi = (((n * conv.cin + ci) * d + iz as usize) * h
                                                + iy as usize)
                                                * w
                                                + ix as usize;
                                            let wi = (((co * conv.cin + ci) * kd + a) * kh + b)
                                                * kw
                                                + c;
                                            acc += x.data()[xi] * conv.weight.value[wi];
                                        }
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, he_normal(rng, n, 2)).unwrap()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut r = seed::rng(3);
        for spec in [
            ConvSpec::cube(3, 1, 1),
            ConvSpec::cube(2, 2, 0),
            ConvSpec::cube(3, 2, 1),
            ConvSpec::square(7, 2, 3),
        ] {
            let mut conv = Conv::<f64>::new("c", 2, 3, spec, &mut r);
            conv.bias.value = vec![0.1, -0.2, 0.3];
            let shape = if spec.kernel[0] == 1 {
                vec![2, 2, 1, 9, 8]
            } else {
                vec![2, 2, 5, 4, 6]
            };
            let x = random_tensor(&mut r, shape);
            let y = conv.forward(&x).unwrap();
            let want = naive_conv(&x, &conv);
            assert_eq!(y.numel(), want.len());
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    /// <conv(x), g> == <x, conv^T(g)>: the data gradient is the adjoint.
    #[test]
    fn conv_backward_is_adjoint_and_transpose_conv_matches() {
        let mut r = seed::rng(5);
        for (spec, shape) in [
            (ConvSpec::cube(3, 2, 1), vec![2, 3, 5, 4, 7]),
            (ConvSpec::cube(3, 1, 1), vec![1, 3, 3, 4, 5]),
            (ConvSpec::square(7, 2, 3), vec![2, 3, 1, 9, 6]),
            (ConvSpec::square(3, 2, 1), vec![1, 3, 1, 2, 3]),
        ] {
            let mut conv = Conv::<f64>::new("c", 3, 4, spec, &mut r);
            let x = random_tensor(&mut r, shape);
            let y = conv.forward(&x).unwrap();
            let g = random_tensor(&mut r, y.shape().to_vec());
            let dx = conv.backward(&x, &g, true).unwrap();
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{spec:?}");
        }

        let spec = ConvSpec::cube(2, 2, 0);
        let mut conv = Conv::<f64>::new("c", 3, 4, spec, &mut r);
        let x = random_tensor(&mut r, vec![2, 3, 4, 4, 4]);
        let y = conv.forward(&x).unwrap();
        let g = random_tensor(&mut r, y.shape().to_vec());
        let dx = conv.backward(&x, &g, true).unwrap();
        // bias is zero at init, so <y, g> = <Wx, g>
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        // A transposed conv sharing the weight computes the same adjoint.
        let mut tconv = ConvTranspose::<f64>::new("t", 4, 3, spec, &mut r);
        tconv.weight.value = conv.weight.value.clone();
        let ty = tconv.forward(&g).unwrap();
        for (a, b) in ty.data().iter().zip(dx.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
