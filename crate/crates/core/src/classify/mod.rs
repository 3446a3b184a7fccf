//! Classifier families and fusion mechanics: gradient-boosted trees,
//! a residual 2D CNN over zero-padded square arrays, and the DAFT model.

mod daft;
mod gbt;
mod net;
mod resnet;

use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub use daft::{DaftBackbone, DaftBlock, DaftCache, DaftConfig, DaftModel, DaftModelCache};
pub use gbt::{train_gbt, GbtConfig, GbtModel, Node, Tree};
pub use net::{predict_net, train_net, Classifier, NetTrainConfig};
pub use resnet::{ResNet2d, ResNetCache, ResNetConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub scenario: String,
    pub fold: usize,
    pub probability: f64,
}

/// Positive iff `p >= thr`.
pub fn threshold_label(p: f64, thr: f64) -> Label {
    if p >= thr {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Smallest square holding `v`, filled row-major; the tail is zero.
pub fn pad_to_square2d(v: &[f32]) -> Result<(usize, Vec<f32>)> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot pad an empty vector".into()));
    }
    let mut side = (v.len() as f64).sqrt().ceil() as usize;
    // guard against floating-point rounding on large perfect squares
    while side * side < v.len() {
        side += 1;
    }
    while side > 1 && (side - 1) * (side - 1) >= v.len() {
        side -= 1;
    }
    let mut out = vec![0.0; side * side];
    out[..v.len()].copy_from_slice(v);
    Ok((side, out))
}

pub fn unpad(square: &[f32], len: usize) -> Result<Vec<f32>> {
    if len > square.len() {
        return Err(Error::InvalidInput(format!("cannot take {len} values from {}", square.len())));
    }
    Ok(square[..len].to_vec())
}

/// `(C,H,W)` → `(C,times,H,W)`, every depth slice a copy of the input.
pub fn stack_latent2d(shape: &[usize], data: &[f32], times: usize) -> Result<Tensor<f32>> {
    if times < 1 {
        return Err(Error::InvalidInput("stack count must be >= 1".into()));
    }
    let [c, h, w] = shape else {
        return Err(Error::Shape {
            expected: vec![128, 16, 16],
            actual: shape.to_vec(),
        });
    };
    let plane = h * w;
    if data.len() != c * plane {
        return Err(Error::Shape {
            expected: shape.to_vec(),
            actual: vec![data.len()],
        });
    }
    let mut out = Vec::with_capacity(c * times * plane);
    for ch in 0..*c {
        let src = &data[ch * plane..(ch + 1) * plane];
        for _ in 0..times {
            out.extend_from_slice(src);
        }
    }
    Tensor::new(vec![*c, times, *h, *w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_boundary() {
        assert_eq!(threshold_label(0.5, 0.5), Label::Positive);
        assert_eq!(threshold_label(0.49, 0.5), Label::Negative);
        assert_eq!(threshold_label(1.0, 0.5), Label::Positive);
    }

    #[test]
    fn padding_examples() {
        let (s, v) = pad_to_square2d(&[1.0; 9]).unwrap();
        assert_eq!((s, v.len()), (3, 9));
        let (s, v) = pad_to_square2d(&[1.0; 5]).unwrap();
        assert_eq!(s, 3);
        assert_eq!(&v[5..], &[0.0; 4]);
        let (s, v) = pad_to_square2d(&vec![1.0; 32768]).unwrap();
        assert_eq!(s, 182);
        assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 356);
        assert!(pad_to_square2d(&[]).is_err());
    }

    #[test]
    fn stacking_replicates_depth() {
        let data: Vec<f32> = (0..128 * 256).map(|i| (i % 977) as f32 - 400.0).collect();
        let t = stack_latent2d(&[128, 16, 16], &data, 16).unwrap();
        assert_eq!(t.shape(), &[128, 16, 16, 16]);
        for c in 0..128 {
            for d in 0..16 {
                let off = (c * 16 + d) * 256;
                assert_eq!(&t.data()[off..off + 256], &data[c * 256..(c + 1) * 256]);
            }
        }
        let s_in: f64 = data.iter().map(|&v| v as f64).sum();
        let s_out: f64 = t.data().iter().map(|&v| v as f64).sum();
        assert_eq!(s_out, 16.0 * s_in);
        assert!(stack_latent2d(&[128, 16, 16], &data, 0).is_err());
    }

    proptest! {
        #[test]
        fn pad_then_unpad_is_identity(v in prop::collection::vec(-1e3f32..1e3, 1..400)) {
            let (side, sq) = pad_to_square2d(&v).unwrap();
            prop_assert!(side * side >= v.len());
            prop_assert!((side - 1) * (side - 1) < v.len());
            prop_assert!(sq[v.len()..].iter().all(|&x| x == 0.0));
            prop_assert_eq!(unpad(&sq, v.len()).unwrap(), v);
        }
    }
}
