//! Central finite-difference check of hand-written backward passes.

use rand::Rng as _;

use super::layers::Module;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares analytic and numeric gradients on `picks` randomly chosen
/// scalar parameters.
///
/// `loss(model, backward)` must return the scalar loss and, when `backward`
/// is true, accumulate its gradient into the (already zeroed) parameters.
pub fn check_params<M: Module<f64>>(
    model: &mut M,
    mut loss: impl FnMut(&mut M, bool) -> f64,
    picks: usize,
    eps: f64,
    rng: &mut Rng,
) -> Vec<GradCheck> {
    model.zero_grad();
    loss(model, true);
    let grads: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();

    let mut out = Vec::with_capacity(picks);
    for _ in 0..picks {
        let mut flat = rng.random_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let orig = model.params()[pi].value[flat];
        model.params_mut()[pi].value[flat] = orig + eps;
        let lp = loss(model, false);
        model.params_mut()[pi].value[flat] = orig - eps;
        let lm = loss(model, false);
        model.params_mut()[pi].value[flat] = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = grads[pi][flat];
        out.push(GradCheck {
            param: model.params()[pi].name.clone(),
            index: flat,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    out
}

/// `|a-b| / max(|a|, |b|)`, with an absolute floor so that two gradients
/// that are both essentially zero compare as equal.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}
