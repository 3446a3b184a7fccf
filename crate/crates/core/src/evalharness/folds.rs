use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Label};
use crate::error::{Error, Result};
use crate::imaging::tumor_volume_mm3;
use crate::seed::child_rng;

/// Assignment of every subject to one of `k` validation folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub ids: Vec<String>,
    pub fold: Vec<usize>,
    /// `(label, volume bin)` per subject.
    pub strata: Vec<(Label, usize)>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn val_indices(&self, f: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold[i] == f).collect()
    }

    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold[i] != f).collect()
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id).map(|i| self.fold[i])
    }

    /// Checks that the plan is a partition into `k` nonempty folds.
    pub fn validate(&self) -> Result<()> {
        if self.fold.len() != self.ids.len() || self.strata.len() != self.ids.len() {
            return Err(Error::InvalidInput("fold plan arrays differ in length".into()));
        }
        if let Some(&bad) = self.fold.iter().find(|&&f| f >= self.k) {
            return Err(Error::InvalidInput(format!("fold index {bad} >= k = {}", self.k)));
        }
        for f in 0..self.k {
            if !self.fold.contains(&f) {
                return Err(Error::InvalidInput(format!("fold {f} has no subjects")));
            }
        }
        Ok(())
    }
}

/// Rank-based quantile bins: subject `i` goes to bin `⌊bins·rank(i)/n⌋`,
/// ties broken by position.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = bins * rank / n;
    }
    out
}

/// Stratifies by label × volume bin, shuffles each stratum and deals all
/// strata round-robin with one shared pointer (positives first), so folds
/// stay balanced overall, per label and per stratum.
pub fn stratified_kfold_from(
    ids: &[String],
    labels: &[Label],
    volumes_mm3: &[f64],
    k: usize,
    volume_bins: usize,
    seed: u64,
) -> Result<FoldPlan> {
    let n = ids.len();
    if labels.len() != n || volumes_mm3.len() != n {
        return Err(Error::InvalidInput("ids, labels and volumes differ in length".into()));
    }
    if k < 2 || k > n {
        return Err(Error::InvalidInput(format!("need 2 <= k <= {n} subjects, got k = {k}")));
    }
    if volume_bins == 0 {
        return Err(Error::InvalidInput("volume_bins must be >= 1".into()));
    }
    let bins = quantile_bins(volumes_mm3, volume_bins);
    let mut rng = child_rng(seed, "folds");
    let mut fold = vec![0; n];
    let mut next = 0;
    for label in [Label::Positive, Label::Negative] {
        for b in 0..volume_bins {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == label && bins[i] == b).collect();
            members.shuffle(&mut rng);
            for i in members {
                fold[i] = next;
                next = (next + 1) % k;
            }
        }
    }
    let plan = FoldPlan {
        k,
        seed,
        ids: ids.to_vec(),
        fold,
        strata: labels.iter().copied().zip(bins).collect(),
    };
    plan.validate()?;
    Ok(plan)
}

pub fn stratified_kfold(cohort: &Cohort, k: usize, volume_bins: usize, seed: u64) -> Result<FoldPlan> {
    let volumes: Vec<f64> = cohort
        .subjects
        .iter()
        .map(|s| tumor_volume_mm3(&s.mask, s.volume.spacing_mm))
        .collect();
    stratified_kfold_from(&cohort.ids(), &cohort.labels(), &volumes, k, volume_bins, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:04}")).collect()
    }

    #[test]
    fn ten_subjects_two_positive() {
        let mut labels = vec![Label::Negative; 10];
        labels[3] = Label::Positive;
        labels[7] = Label::Positive;
        let vols: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let p = stratified_kfold_from(&ids(10), &labels, &vols, 5, 3, 1).unwrap();
        for f in 0..5 {
            assert_eq!(p.val_indices(f).len(), 2);
        }
        assert_ne!(p.fold[3], p.fold[7]);
    }

    #[test]
    fn same_seed_same_plan() {
        let labels: Vec<Label> = (0..50).map(|i| if i % 7 == 0 { Label::Positive } else { Label::Negative }).collect();
        let vols: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64).collect();
        let a = stratified_kfold_from(&ids(50), &labels, &vols, 5, 3, 9).unwrap();
        let b = stratified_kfold_from(&ids(50), &labels, &vols, 5, 3, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_k_larger_than_cohort() {
        let labels = vec![Label::Positive, Label::Negative, Label::Negative];
        assert!(stratified_kfold_from(&ids(3), &labels, &[1.0, 2.0, 3.0], 4, 3, 0).is_err());
    }

    #[test]
    fn terciles_by_rank() {
        assert_eq!(quantile_bins(&[5.0, 1.0, 3.0, 2.0, 6.0, 4.0], 3), vec![2, 0, 1, 0, 2, 1]);
    }
}
