//! Static SVG charts written as plain text.
//!
//! The F1 chart draws exactly one `<rect>` per matrix entry; axes, legend
//! swatches and reference markers use other elements so the rect count can
//! be checked against the matrix.

use std::fmt::Write as _;

use super::matrix::{Matrix, PredictionRow};
use super::reference::Reference;
use crate::error::{Error, Result};
use crate::evalharness::{roc_auc, roc_curve, ModelKind, PhaseSet};

const PLOT_H: f64 = 240.0;
const TOP: f64 = 40.0;
const LEFT: f64 = 60.0;
const BAR_W: f64 = 22.0;
const GROUP_GAP: f64 = 26.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn color(m: ModelKind) -> &'static str {
    match m {
        ModelKind::Gbt => "#1f77b4",
        ModelKind::Resnet => "#2ca02c",
        ModelKind::Daft => "#d62728",
    }
}

/// Grouped mean-F1 bars, one group per `model/inputs`. Pre-operative-only
/// variants are drawn lighter with a dashed outline to the left of their
/// pre+post twin. A separate row below the axis shows the reference values.
pub fn render_f1_barchart(matrix: &Matrix, reference: &Reference) -> Result<String> {
    if matrix.entries.is_empty() {
        return Err(Error::InvalidInput("empty matrix, nothing to plot".into()));
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, e) in matrix.entries.iter().enumerate() {
        let base = e.spec.base_id();
        match groups.iter_mut().find(|g| g.0 == base) {
            Some(g) => g.1.push(i),
            None => groups.push((base, vec![i])),
        }
    }
    let group_w = |n: usize| n as f64 * BAR_W + GROUP_GAP;
    let plot_w: f64 = groups.iter().map(|g| group_w(g.1.len())).sum();
    let width = LEFT + plot_w + 20.0;
    let axis_y = TOP + PLOT_H;
    let marker_y = axis_y + 120.0;
    let height = marker_y + 40.0;
    let y_of = |v: f64| axis_y - v.clamp(0.0, 1.0) * PLOT_H;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{LEFT}" y="16" font-size="13">Mean F1 over {} folds (seed {})</text>"#, matrix.k, matrix.seed).unwrap();
    // legend: solid pre+post, dashed pre-op only, diamond reference
    let ly = 30.0;
    writeln!(s, r##"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="#555" stroke-width="8"/>"##, LEFT, LEFT + 14.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">pre+post</text>"#, LEFT + 18.0, ly + 3.0).unwrap();
    writeln!(
        s,
        r##"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="#555" stroke-opacity="0.4" stroke-width="8"/>"##,
        LEFT + 70.0,
        LEFT + 84.0
    )
    .unwrap();
    writeln!(s, r#"<text x="{}" y="{}">pre-op only (dashed)</text>"#, LEFT + 88.0, ly + 3.0).unwrap();
    writeln!(s, r#"<path d="M{} {ly} l4 -4 l4 4 l-4 4 z" fill="black"/>"#, LEFT + 200.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, LEFT + 212.0, ly + 3.0, esc(&reference.label)).unwrap();

    // axes and grid
    writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{axis_y}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<line x1="{LEFT}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#, LEFT + plot_w).unwrap();
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let y = y_of(v);
        writeln!(s, r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, LEFT, LEFT + plot_w).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#, LEFT - 4.0, y + 3.0).unwrap();
    }
    writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">F1</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    )
    .unwrap();

    writeln!(s, r#"<text x="4" y="{}" font-weight="bold">{}</text>"#, marker_y - 22.0, esc(&reference.label)).unwrap();
    let mut x = LEFT + GROUP_GAP / 2.0;
    for (base, idx) in &groups {
        let first = &matrix.entries[idx[0]];
        let c = color(first.spec.model);
        let mut bars: Vec<usize> = idx.clone();
        // pre-op first so the dashed twin sits on the left
        bars.sort_by_key(|&i| matrix.entries[i].spec.phase != Some(PhaseSet::PreOp));
        for (j, &i) in bars.iter().enumerate() {
            let e = &matrix.entries[i];
            let bx = x + j as f64 * BAR_W;
            let y = y_of(e.mean_f1);
            let h = axis_y - y;
            let style = if e.spec.phase == Some(PhaseSet::PreOp) {
                format!(r#"fill="{c}" fill-opacity="0.4" stroke="{c}" stroke-dasharray="4 2""#)
            } else {
                format!(r#"fill="{c}" stroke="{c}""#)
            };
            writeln!(
                s,
                r#"<rect class="bar" x="{}" y="{y}" width="{}" height="{h}" {style} data-scenario="{}" data-f1="{}"/>"#,
                bx + 1.0,
                BAR_W - 2.0,
                esc(&e.scenario),
                e.mean_f1
            )
            .unwrap();
            let (lo, hi) = (y_of(e.mean_f1 - e.std_f1), y_of(e.mean_f1 + e.std_f1));
            let cx = bx + BAR_W / 2.0;
            writeln!(s, r#"<line class="err" x1="{cx}" y1="{lo}" x2="{cx}" y2="{hi}" stroke="black"/>"#).unwrap();
            writeln!(
                s,
                r#"<text class="bar-label" x="{cx}" y="{}" text-anchor="middle" data-scenario="{}">{:.2}</text>"#,
                hi - 3.0,
                esc(&e.scenario),
                e.mean_f1
            )
            .unwrap();
        }
        let gx = x + bars.len() as f64 * BAR_W / 2.0;
        writeln!(
            s,
            r#"<text x="{gx}" y="{}" transform="rotate(40 {gx} {})" font-size="9">{}</text>"#,
            axis_y + 12.0,
            axis_y + 12.0,
            esc(base)
        )
        .unwrap();
        if let Some(r) = reference.for_base(base) {
            writeln!(s, r#"<path class="paper-marker" d="M{} {marker_y} l5 -5 l5 5 l-5 5 z" fill="black"/>"#, gx - 5.0).unwrap();
            writeln!(
                s,
                r#"<text class="paper-value" x="{gx}" y="{}" text-anchor="middle" data-scenario="{}" data-f1="{}" data-auc="{}">{:.2}</text>"#,
                marker_y + 18.0,
                esc(&r.scenario_id()),
                r.f1,
                r.auc,
                r.f1
            )
            .unwrap();
        }
        x += group_w(bars.len());
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Pooled out-of-fold ROC curve for each named scenario with the chance
/// diagonal. Legend AUCs come from [`roc_auc`] on the same predictions.
pub fn render_roc_curves(rows: &[PredictionRow], scenarios: &[String]) -> Result<String> {
    const SIDE: f64 = 300.0;
    const L: f64 = 50.0;
    const T: f64 = 30.0;
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    if scenarios.is_empty() {
        return Err(Error::InvalidInput("no scenarios for the ROC chart".into()));
    }
    let width = L + SIDE + 20.0;
    let legend_y = T + SIDE + 40.0;
    let height = legend_y + 16.0 * scenarios.len() as f64 + 10.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="{L}" y="18" font-size="13">ROC (pooled out-of-fold predictions)</text>"#).unwrap();
    writeln!(s, r#"<path d="M{L} {T} v{SIDE} h{SIDE}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(
        s,
        r##"<line class="chance" x1="{L}" y1="{}" x2="{}" y2="{T}" stroke="#999" stroke-dasharray="4 3"/>"##,
        T + SIDE,
        L + SIDE
    )
    .unwrap();
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#, L + v * SIDE, T + SIDE + 14.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, L - 4.0, T + SIDE - v * SIDE + 3.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#, L + SIDE / 2.0, T + SIDE + 28.0).unwrap();
    writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">true positive rate</text>"#,
        T + SIDE / 2.0,
        T + SIDE / 2.0
    )
    .unwrap();
    for (k, sc) in scenarios.iter().enumerate() {
        let mine: Vec<&PredictionRow> = rows.iter().filter(|r| &r.scenario_id() == sc).collect();
        if mine.is_empty() {
            return Err(Error::Missing(format!("no stored predictions for scenario {sc}")));
        }
        let y: Vec<bool> = mine.iter().map(|r| r.positive()).collect();
        let p: Vec<f64> = mine.iter().map(|r| r.probability).collect();
        let auc = roc_auc(&y, &p)?;
        let pts = roc_curve(&y, &p)?;
        let c = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(fx, ty)| format!("{},{}", L + fx * SIDE, T + (1.0 - ty) * SIDE)).collect();
        writeln!(
            s,
            r#"<polyline class="roc" data-scenario="{}" points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
            esc(sc),
            coords.join(" ")
        )
        .unwrap();
        let ly = legend_y + 16.0 * k as f64;
        writeln!(s, r#"<line x1="{L}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="3"/>"#, L + 16.0).unwrap();
        writeln!(
            s,
            r#"<text class="legend" x="{}" y="{}" data-scenario="{}" data-auc="{auc}">{} (AUC {auc:.3})</text>"#,
            L + 22.0,
            ly + 3.0,
            esc(sc),
            esc(sc)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Inverse of the ROC chart's point mapping, for checking drawn curves.
pub fn roc_points_from_svg(points: &str) -> Vec<(f64, f64)> {
    points
        .split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',').expect("x,y pair");
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            ((x - 50.0) / 300.0, 1.0 - (y - 30.0) / 300.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::trapezoid_area;

    fn rows(scores: &[(f64, bool)]) -> Vec<PredictionRow> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &(p, y))| PredictionRow {
                subject_id: format!("S{i}"),
                scenario: "gbt/tabular".into(),
                phase: "pre+post".into(),
                fold: i % 5,
                probability: p,
                label_true: y as u8,
                label_pred: (p >= 0.5) as u8,
            })
            .collect()
    }

    fn attr<'a>(tag: &'a str, name: &str) -> &'a str {
        let key = format!(" {name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        &tag[start..start + tag[start..].find('"').unwrap()]
    }

    fn roc_parts(svg: &str) -> (Vec<(f64, f64)>, f64) {
        let poly = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let legend = svg.lines().find(|l| l.contains("class=\"legend\"")).unwrap();
        (roc_points_from_svg(attr(poly, "points")), attr(legend, "data-auc").parse().unwrap())
    }

    #[test]
    fn perfect_classifier_passes_through_top_left() {
        let r = rows(&[(0.9, true), (0.8, true), (0.3, false), (0.1, false), (0.2, false)]);
        let svg = render_roc_curves(&r, &["gbt/tabular/pre+post".into()]).unwrap();
        let (pts, auc) = roc_parts(&svg);
        assert_eq!(auc, 1.0);
        assert!(pts.iter().any(|&(x, y)| x.abs() < 1e-12 && (y - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_scores_give_the_diagonal() {
        let r = rows(&[(0.4, true), (0.4, false), (0.4, false), (0.4, true)]);
        let svg = render_roc_curves(&r, &["gbt/tabular/pre+post".into()]).unwrap();
        let (pts, auc) = roc_parts(&svg);
        assert_eq!(auc, 0.5);
        assert_eq!(pts.len(), 2);
        assert!((trapezoid_area(&pts) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn legend_auc_is_the_drawn_area() {
        let scores: Vec<(f64, bool)> = (0..40).map(|i| (((i * 37) % 11) as f64 / 10.0, i % 3 == 0)).collect();
        let r = rows(&scores);
        let svg = render_roc_curves(&r, &["gbt/tabular/pre+post".into()]).unwrap();
        let (pts, auc) = roc_parts(&svg);
        let y: Vec<bool> = scores.iter().map(|s| s.1).collect();
        let p: Vec<f64> = scores.iter().map(|s| s.0).collect();
        assert!((auc - roc_auc(&y, &p).unwrap()).abs() < 1e-9);
        assert!((trapezoid_area(&pts) - auc).abs() < 1e-9);
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        let r = rows(&[(0.4, true), (0.2, false)]);
        assert!(matches!(render_roc_curves(&r, &["daft/daft-3dssl/pre+post".into()]), Err(Error::Missing(_))));
    }
}
