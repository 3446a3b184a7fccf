use crate::error::Result;

use super::conv::{Conv, ConvTranspose};
use super::layers::{relu, relu_backward, Module, Param};
use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv<T>),
    ConvT(ConvTranspose<T>),
    Relu,
}

/// A plain chain of layers with a stored-activation backward pass.
#[derive(Debug, Clone, Default)]
pub struct Seq<T> {
    pub layers: Vec<Layer<T>>,
}

/// Inputs to every layer, recorded by `forward_train`, plus the final output.
pub struct SeqCache<T> {
    inputs: Vec<Tensor<T>>,
    out: Tensor<T>,
}

impl<T: Real> Seq<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = match l {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::ConvT(c) => c.forward(&h)?,
                Layer::Relu => relu(h),
            };
        }
        Ok(h)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SeqCache<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let next = match l {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::ConvT(c) => c.forward(&h)?,
                Layer::Relu => relu(h.clone()),
            };
            inputs.push(h);
            h = next;
        }
        Ok((h.clone(), SeqCache { inputs, out: h }))
    }

    pub fn backward(&mut self, cache: &SeqCache<T>, dout: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let mut d = dout;
        let n = self.layers.len();
        for i in (0..n).rev() {
            let want = need_dx || i > 0;
            let out = if i + 1 < n { &cache.inputs[i + 1] } else { &cache.out };
            let next = match &mut self.layers[i] {
                Layer::Conv(c) => c.backward(&cache.inputs[i], &d, want),
                Layer::ConvT(c) => c.backward(&cache.inputs[i], &d, want),
                Layer::Relu => Some(relu_backward(out, d)),
            };
            match next {
                Some(t) => d = t,
                None => return None,
            }
        }
        Some(d)
    }
}

impl<T: Real> Module<T> for Seq<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv(c) => c.params(),
                Layer::ConvT(c) => c.params(),
                Layer::Relu => vec![],
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Conv(c) => c.params_mut(),
                Layer::ConvT(c) => c.params_mut(),
                Layer::Relu => vec![],
            })
            .collect()
    }
}
