use log::warn;
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::seed::child_rng;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("length mismatch: {a} labels vs {b} predictions")));
    }
    Ok(())
}

/// `2TP / (2TP + FP + FN)`, or 0.0 when the denominator is zero.
pub fn f1_score(y_true: &[bool], y_pred: &[bool]) -> Result<f64> {
    check_len(y_true.len(), y_pred.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    let den = 2 * tp + fp + fneg;
    Ok(if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 })
}

/// Mann–Whitney AUC: the chance a random positive outscores a random
/// negative, ties counting one half. Computed from mid-ranks.
pub fn roc_auc(y_true: &[bool], scores: &[f64]) -> Result<f64> {
    check_len(y_true.len(), scores.len())?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let npos = y_true.iter().filter(|&&t| t).count();
    let nneg = y_true.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::SingleClass(format!("AUC needs both classes ({npos} positives of {})", y_true.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Count, per positive, negatives strictly below plus half the tied ones.
    // Integer counts keep the result exact up to the final division.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let gp = group.iter().filter(|&&k| y_true[k]).count() as u128;
        let gn = group.len() as u128 - gp;
        twice_wins += gp * (2 * neg_below + gn);
        neg_below += gn;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * npos as f64 * nneg as f64))
}

/// ROC vertices `(fpr, tpr)` from `(0,0)` to `(1,1)`, one per distinct score
/// threshold (descending), so tied scores produce a diagonal segment.
pub fn roc_curve(y_true: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_len(y_true.len(), scores.len())?;
    let npos = y_true.iter().filter(|&&t| t).count();
    let nneg = y_true.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::SingleClass("ROC curve needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y_true[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / nneg as f64, tp as f64 / npos as f64));
    }
    Ok(pts)
}

/// Trapezoidal area under a polyline given in increasing-x order.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Mean and sample standard deviation (`n - 1`; zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Keeps every minority-class index and `⌊ratio · minority⌋` majority
/// indices drawn without replacement. Returns indices into `labels`, sorted.
///
/// When the majority class is too small for the requested ratio, all of it
/// is kept and a warning is logged.
pub fn undersample(labels: &[bool], ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("undersampling ratio {ratio} must be positive")));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass(format!(
            "undersampling needs both classes ({} positives, {} negatives)",
            pos.len(),
            neg.len()
        )));
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let want = (ratio * minority.len() as f64).floor() as usize;
    let chosen: Vec<usize> = if want > majority.len() {
        warn!(
            "undersampling wants {want} majority subjects but only {} exist; keeping all",
            majority.len()
        );
        majority
    } else {
        let mut rng = child_rng(seed, "undersample");
        sample(&mut rng, majority.len(), want).into_iter().map(|k| majority[k]).collect()
    };
    let mut out = minority;
    out.extend(chosen);
    out.sort_unstable();
    Ok(out)
}
