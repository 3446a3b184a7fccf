//! Gradient-boosted regression trees on the logistic loss: exact greedy
//! splits on presorted features, second-order leaf weights, level-wise
//! growth.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::sigmoid;
use crate::seed::child_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub colsample: f64,
    pub pos_weight: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            subsample: 1.0,
            colsample: 1.0,
            pos_weight: 1.0,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.n_rounds < 1 || self.max_depth < 1 {
            return Err(Error::Config("n_rounds and max_depth must be >= 1".into()));
        }
        if !unit(self.learning_rate) || !unit(self.subsample) || !unit(self.colsample) {
            return Err(Error::Config("learning_rate, subsample and colsample must lie in (0, 1]".into()));
        }
        if !(self.pos_weight > 0.0) || !(self.min_child_weight >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("pos_weight > 0, min_child_weight >= 0, lambda >= 0 required".into()));
        }
        Ok(())
    }
}

/// Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Training log-loss after each round (unweighted).
    pub train_logloss: Vec<f64>,
    pub scenario: Option<String>,
    pub config_hash: Option<String>,
}

impl GbtModel {
    /// Margin using only the first `rounds` trees.
    pub fn margin_at(&self, x: &[f64], rounds: usize) -> f64 {
        self.base_score + self.trees[..rounds.min(self.trees.len())].iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape {
                expected: vec![self.n_features],
                actual: vec![x.len()],
            });
        }
        Ok(sigmoid(self.margin_at(x, self.trees.len())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn logloss(y: &[f64], margins: &[f64]) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .zip(margins)
        .map(|(&yi, &m)| m.max(0.0) - m * yi + (-m.abs()).exp().ln_1p())
        .sum::<f64>()
        / n
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

pub fn train_gbt(x: &[Vec<f64>], y: &[f64], cfg: &GbtConfig) -> Result<GbtModel> {
    cfg.validate()?;
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::InvalidInput(format!("{n} rows for {} labels", y.len())));
    }
    let nf = x[0].len();
    if nf == 0 || x.iter().any(|r| r.len() != nf) {
        return Err(Error::InvalidInput("rows must share a nonzero feature count".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GBT features".into()));
    }
    let npos = y.iter().filter(|&&v| v > 0.5).count();
    if npos == 0 || npos == n {
        return Err(Error::SingleClass(format!("{npos} positives among {n} rows")));
    }

    let w: Vec<f64> = y.iter().map(|&v| if v > 0.5 { cfg.pos_weight } else { 1.0 }).collect();
    let rate = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    let base = (rate / (1.0 - rate)).ln();

    let sorted = Presorted::new(x);

    let mut rng = child_rng(cfg.seed, "gbt");
    let mut margin = vec![base; n];
    let mut trees = Vec::with_capacity(cfg.n_rounds);
    let mut losses = Vec::with_capacity(cfg.n_rounds);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for _ in 0..cfg.n_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            g[i] = w[i] * (p - y[i]);
            h[i] = w[i] * p * (1.0 - p);
        }
        let rows: Vec<bool> = if cfg.subsample < 1.0 {
            let k = ((cfg.subsample * n as f64).round() as usize).max(1);
            let mut m = vec![false; n];
            for i in sample(&mut rng, n, k) {
                m[i] = true;
            }
            m
        } else {
            vec![true; n]
        };
        let mut feats: Vec<usize> = if cfg.colsample < 1.0 {
            let k = ((cfg.colsample * nf as f64).ceil() as usize).clamp(1, nf);
            sample(&mut rng, nf, k).into_vec()
        } else {
            (0..nf).collect()
        };
        feats.sort_unstable();
        let tree = grow_tree(x, &g, &h, &rows, &sorted, &feats, cfg);
        for i in 0..n {
            margin[i] += tree.predict(&x[i]);
        }
        losses.push(logloss(y, &margin));
        trees.push(tree);
    }
    Ok(GbtModel {
        base_score: base,
        n_features: nf,
        trees,
        train_logloss: losses,
        scenario: None,
        config_hash: None,
    })
}

/// Row order and values of every feature, sorted ascending, stored
/// feature-major so split search scans memory sequentially.
struct Presorted {
    n: usize,
    rows: Vec<u32>,
    values: Vec<f64>,
}

impl Presorted {
    fn new(x: &[Vec<f64>]) -> Self {
        let (n, nf) = (x.len(), x[0].len());
        let mut rows = Vec::with_capacity(n * nf);
        let mut values = Vec::with_capacity(n * nf);
        let mut col = Vec::with_capacity(n);
        for f in 0..nf {
            col.clear();
            col.extend(x.iter().enumerate().map(|(i, r)| (r[f], i as u32)));
            col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            rows.extend(col.iter().map(|c| c.1));
            values.extend(col.iter().map(|c| c.0));
        }
        Self { n, rows, values }
    }

    fn feature(&self, f: usize) -> (&[u32], &[f64]) {
        let r = f * self.n..(f + 1) * self.n;
        (&self.rows[r.clone()], &self.values[r])
    }
}

fn grow_tree(
    x: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    rows: &[bool],
    sorted: &Presorted,
    feats: &[usize],
    cfg: &GbtConfig,
) -> Tree {
    let n = x.len();
    let lambda = cfg.lambda;
    let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);
    let leaf = |gs: f64, hs: f64| -cfg.learning_rate * gs / (hs + lambda);

    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    // node index of each active row; None for rows outside the subsample
    let mut at: Vec<Option<usize>> = rows.iter().map(|&r| r.then_some(0)).collect();
    let mut frontier = vec![0usize];
    let mut sums = vec![(0.0, 0.0)];
    for i in 0..n {
        if rows[i] {
            sums[0].0 += g[i];
            sums[0].1 += h[i];
        }
    }

    for _depth in 0..cfg.max_depth {
        if frontier.is_empty() {
            break;
        }
        let slot_of = |node: usize| frontier.iter().position(|&f| f == node);
        let row_slot: Vec<Option<usize>> = at.iter().map(|a| a.and_then(slot_of)).collect();
        let mut best: Vec<Option<Best>> = frontier.iter().map(|_| None).collect();
        let mut gl = vec![0.0; frontier.len()];
        let mut hl = vec![0.0; frontier.len()];
        let mut last: Vec<Option<f64>> = vec![None; frontier.len()];
        for &f in feats {
            gl.fill(0.0);
            hl.fill(0.0);
            last.fill(None);
            let (order, values) = sorted.feature(f);
            for (&i, &v) in order.iter().zip(values) {
                let Some(s) = row_slot[i as usize] else { continue };
                let node = frontier[s];
                let i = i as usize;
                if let Some(prev) = last[s] {
                    if v > prev {
                        let (gt, ht) = sums[node];
                        let (gr, hr) = (gt - gl[s], ht - hl[s]);
                        if hl[s] >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                            let gain = score(gl[s], hl[s]) + score(gr, hr) - score(gt, ht);
                            if gain > 1e-12 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Best {
                                    gain,
                                    feature: f,
                                    threshold: prev,
                                });
                            }
                        }
                    }
                }
                gl[s] += g[i];
                hl[s] += h[i];
                last[s] = Some(v);
            }
        }
        let mut next = Vec::new();
        let mut children = vec![None; frontier.len()];
        for (s, b) in best.iter().enumerate() {
            if let Some(b) = b {
                let l = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                sums.push((0.0, 0.0));
                sums.push((0.0, 0.0));
                nodes[frontier[s]] = Node::Split {
                    feature: b.feature,
                    threshold: b.threshold,
                    left: l,
                    right: l + 1,
                };
                children[s] = Some(l);
                next.push(l);
                next.push(l + 1);
            }
        }
        for i in 0..n {
            let Some(node) = at[i] else { continue };
            let Some(s) = slot_of(node) else { continue };
            match (&best[s], children[s]) {
                (Some(b), Some(l)) => {
                    let c = if x[i][b.feature] <= b.threshold { l } else { l + 1 };
                    at[i] = Some(c);
                    sums[c].0 += g[i];
                    sums[c].1 += h[i];
                }
                _ => {}
            }
        }
        frontier = next;
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = leaf(sums[k].0, sums[k].1);
        }
    }
    Tree { nodes }
}
