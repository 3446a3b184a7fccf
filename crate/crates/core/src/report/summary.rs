use std::fmt::Write as _;

use super::matrix::Matrix;
use super::reference::Reference;
use crate::evalharness::PhaseSet;

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

/// Markdown table of every matrix entry next to the reference column, then
/// the headline comparisons.
pub fn render_summary(matrix: &Matrix, reference: &Reference) -> String {
    let mut s = String::new();
    writeln!(s, "# fusionbench results\n").unwrap();
    writeln!(
        s,
        "{} subjects ({} positive), {}-fold stratified cross-validation, seed {}.\n",
        matrix.n_subjects, matrix.n_positive, matrix.k, matrix.seed
    )
    .unwrap();
    writeln!(
        s,
        "| scenario | phase | F1 mean ± sd | AUC mean ± sd | pooled F1 | pooled AUC | {0} F1 | {0} AUC |",
        reference.label
    )
    .unwrap();
    writeln!(s, "|---|---|---|---|---|---|---|---|").unwrap();
    for e in &matrix.entries {
        let base = e.spec.base_id();
        let phase = e.spec.phase.map(|p| p.as_str()).unwrap_or("image only");
        let r = reference
            .for_base(&base)
            .filter(|r| r.phase.as_deref() == e.spec.phase.map(|p| p.as_str()));
        let (rf, ra) = r.map(|r| (f2(r.f1), f2(r.auc))).unwrap_or(("".into(), "".into()));
        writeln!(
            s,
            "| {base} | {phase} | {} ± {} | {} ± {} | {} | {} | {rf} | {ra} |",
            f2(e.mean_f1),
            f2(e.std_f1),
            f2(e.mean_auc),
            f2(e.std_auc),
            f2(e.pooled_f1),
            f2(e.pooled_auc)
        )
        .unwrap();
    }

    writeln!(s, "\n## Headline comparisons\n").unwrap();
    let f1 = |id: &str| matrix.entry(id).map(|e| e.mean_f1);
    for h in &reference.headline {
        let base = f1(&format!("gbt/tabular/{}", h.phase));
        let multi = f1(&format!("daft/daft-3dssl/{}", h.phase));
        if let (Some(b), Some(m)) = (base, multi) {
            writeln!(
                s,
                "- {}: GBT tabular {} → DAFT 3D latent {} (Δ {:+.2}); {}: {} → {}",
                h.phase,
                f2(b),
                f2(m),
                m - b,
                reference.label,
                f2(h.baseline_f1),
                f2(h.multimodal_f1)
            )
            .unwrap();
        }
    }
    for model in ["gbt", "resnet"] {
        if let (Some(t), Some(l)) = (f1(&format!("{model}/tabular/pre+post")), f1(&format!("{model}/latent2d"))) {
            writeln!(s, "- {model}: tabular {} vs 2D latent only {}", f2(t), f2(l)).unwrap();
        }
    }
    let tab: Vec<(f64, f64)> = matrix
        .entries
        .iter()
        .filter(|e| e.spec.phase == Some(PhaseSet::PrePost))
        .filter_map(|e| {
            let pre = matrix.entry(&format!("{}/pre_op", e.spec.base_id()))?;
            Some((pre.mean_f1, e.mean_f1))
        })
        .collect();
    if !tab.is_empty() {
        let n = tab.len() as f64;
        let pre = tab.iter().map(|t| t.0).sum::<f64>() / n;
        let post = tab.iter().map(|t| t.1).sum::<f64>() / n;
        writeln!(
            s,
            "- mean F1 over {} tabular-bearing scenarios: pre_op {} → pre+post {}",
            tab.len(),
            f2(pre),
            f2(post)
        )
        .unwrap();
    }
    writeln!(
        s,
        "\nReference values were measured on a different, private cohort ({}); they show the expected pattern, not targets.",
        reference.cohort
    )
    .unwrap();
    s
}
