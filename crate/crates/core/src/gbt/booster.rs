use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::tree::Tree;
use super::{Dataset, MonotoneSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::transfers::TransferFeatures;

pub const MODEL_FORMAT_VERSION: u32 = 1;

const MIN_HESSIAN: f64 = 1e-16;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostedModel {
    pub format_version: u32,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub monotone: MonotoneSpec,
    /// Log-odds offset shared by every prediction.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Hash of the run configuration that produced this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl BoostedModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_schema(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Schema {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_schema(x)?;
        Ok(self.margin_unchecked(x))
    }

    fn margin_unchecked(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, tree| acc + tree.predict(x))
    }

    /// Probability of the positive class; NaN entries are treated as NA.
    pub fn predict_miss_probability(&self, x: &[f64]) -> Result<f64> {
        self.predict_margin(x).map(sigmoid)
    }

    pub fn predict_features(&self, features: &TransferFeatures) -> Result<f64> {
        self.predict_miss_probability(&features.to_vector())
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len())
            .map(|r| {
                let margin = self.trees.iter().fold(self.base_score, |acc, t| {
                    acc + t.value[t.leaf_index_by(|f| data.column(f)[r])]
                });
                sigmoid(margin)
            })
            .collect()
    }

    /// Copy keeping only the first `rounds` trees.
    pub fn truncated(&self, rounds: usize) -> Self {
        let mut m = self.clone();
        m.trees.truncate(rounds);
        m
    }

    /// Total split gain per feature.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut gains = vec![0.0; self.n_features()];
        for tree in &self.trees {
            for node in 0..tree.len() {
                if !tree.is_leaf(node) {
                    gains[tree.feature[node] as usize] += tree.gain[node];
                }
            }
        }
        self.feature_names.iter().cloned().zip(gains).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        if model.monotone.len() != model.n_features() {
            return Err(Error::Schema {
                expected: model.n_features(),
                got: model.monotone.len(),
            });
        }
        if let Some(bad) = model.trees.iter().position(|t| !t.is_well_formed()) {
            return Err(Error::Parse(format!("tree {bad} is malformed")));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Per-feature presorted non-missing `(value, row)` pairs plus the rows with
/// a missing value.
struct SortedColumns {
    present: Vec<Vec<(f64, u32)>>,
    missing: Vec<Vec<u32>>,
}

impl SortedColumns {
    fn new(data: &Dataset) -> Self {
        let mut present = Vec::with_capacity(data.n_features());
        let mut missing = Vec::with_capacity(data.n_features());
        for f in 0..data.n_features() {
            let col = data.column(f);
            let mut p: Vec<(f64, u32)> = Vec::with_capacity(col.len());
            let mut m = Vec::new();
            for (r, &v) in col.iter().enumerate() {
                if v.is_nan() {
                    m.push(r as u32);
                } else {
                    p.push((v, r as u32));
                }
            }
            p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            present.push(p);
            missing.push(m);
        }
        Self { present, missing }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    lower: f64,
    upper: f64,
}

impl Bounds {
    const FREE: Bounds = Bounds {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    fn clamp(self, w: f64) -> f64 {
        w.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenNode {
    id: usize,
    grad: f64,
    hess: f64,
    count: usize,
    bounds: Bounds,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
    left: (f64, f64),
    right: (f64, f64),
    weights: (f64, f64),
}

struct Grower<'a> {
    config: &'a TrainConfig,
    monotone: &'a [i8],
}

impl Grower<'_> {
    fn weight(&self, g: f64, h: f64, bounds: Bounds) -> f64 {
        bounds.clamp(-g / (h + self.config.lambda))
    }

    /// Loss reduction of using weight `w` for a node with sums (g, h).
    fn score(&self, g: f64, h: f64, w: f64) -> f64 {
        -(2.0 * g * w + (h + self.config.lambda) * w * w)
    }

    fn evaluate(
        &self,
        node: &OpenNode,
        feature: usize,
        left: (f64, f64),
        right: (f64, f64),
    ) -> Option<(f64, (f64, f64))> {
        let mcw = self.config.min_child_weight;
        if left.1 < mcw || right.1 < mcw {
            return None;
        }
        let wl = self.weight(left.0, left.1, node.bounds);
        let wr = self.weight(right.0, right.1, node.bounds);
        match self.monotone[feature] {
            c if c > 0 && wl > wr => return None,
            c if c < 0 && wl < wr => return None,
            _ => {}
        }
        let parent = self.score(node.grad, node.hess, self.weight(node.grad, node.hess, node.bounds));
        let gain = 0.5 * (self.score(left.0, left.1, wl) + self.score(right.0, right.1, wr) - parent)
            - self.config.gamma;
        Some((gain, (wl, wr)))
    }

    fn child_bounds(&self, node: &OpenNode, split: &Split) -> (Bounds, Bounds) {
        let b = node.bounds;
        let mid = 0.5 * (split.weights.0 + split.weights.1);
        match self.monotone[split.feature] {
            c if c > 0 => (Bounds { upper: mid, ..b }, Bounds { lower: mid, ..b }),
            c if c < 0 => (Bounds { lower: mid, ..b }, Bounds { upper: mid, ..b }),
            _ => (b, b),
        }
    }

    fn grow(
        &self,
        columns: &SortedColumns,
        grad: &[f64],
        hess: &[f64],
        rows: &[usize],
        data: &Dataset,
    ) -> Tree {
        let n_rows = data.len();
        const INACTIVE: u32 = u32::MAX;
        let mut tree = Tree::empty();
        let mut node_of = vec![INACTIVE; n_rows];
        let (mut g0, mut h0) = (0.0, 0.0);
        for &r in rows {
            node_of[r] = 0;
            g0 += grad[r];
            h0 += hess[r];
        }
        let root = OpenNode {
            id: tree.push_leaf(0.0),
            grad: g0,
            hess: h0,
            count: rows.len(),
            bounds: Bounds::FREE,
        };
        let mut open = vec![root];
        let mut finished: Vec<OpenNode> = Vec::new();

        for _depth in 0..self.config.max_depth {
            if open.is_empty() {
                break;
            }
            // node id -> slot in `open`
            let mut slot_of = vec![usize::MAX; tree.len()];
            for (s, node) in open.iter().enumerate() {
                slot_of[node.id] = s;
            }
            let slot = |r: u32| -> Option<usize> {
                let id = node_of[r as usize];
                if id == INACTIVE {
                    None
                } else {
                    let s = slot_of[id as usize];
                    (s != usize::MAX).then_some(s)
                }
            };

            let mut best: Vec<Option<Split>> = vec![None; open.len()];
            for feature in 0..columns.present.len() {
                let k = open.len();
                let mut miss = vec![(0.0, 0.0, 0usize); k];
                for &r in &columns.missing[feature] {
                    if let Some(s) = slot(r) {
                        let m = &mut miss[s];
                        m.0 += grad[r as usize];
                        m.1 += hess[r as usize];
                        m.2 += 1;
                    }
                }
                let mut acc = vec![(0.0, 0.0); k];
                let mut last: Vec<Option<f64>> = vec![None; k];
                for &(v, r) in &columns.present[feature] {
                    let Some(s) = slot(r) else { continue };
                    if let Some(prev) = last[s] {
                        if v > prev {
                            let node = &open[s];
                            let (gm, hm, nm) = miss[s];
                            let (gl, hl) = acc[s];
                            let (gr, hr) = (node.grad - gm - gl, node.hess - hm - hl);
                            let threshold = prev + 0.5 * (v - prev);
                            let directions: &[bool] = if nm > 0 { &[false, true] } else { &[false] };
                            for &default_left in directions {
                                let (left, right) = if default_left {
                                    ((gl + gm, hl + hm), (gr, hr))
                                } else {
                                    ((gl, hl), (gr + gm, hr + hm))
                                };
                                if let Some((gain, weights)) = self.evaluate(node, feature, left, right) {
                                    if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                                        best[s] = Some(Split {
                                            gain,
                                            feature,
                                            threshold,
                                            default_left,
                                            left,
                                            right,
                                            weights,
                                        });
                                    }
                                }
                            }
                        }
                    }
                    let a = &mut acc[s];
                    a.0 += grad[r as usize];
                    a.1 += hess[r as usize];
                    last[s] = Some(v);
                }
            }

            let mut next = Vec::new();
            let mut children_of = vec![None; tree.len()];
            for (s, node) in open.iter().enumerate() {
                let Some(split) = best[s].filter(|_| node.count >= 2) else {
                    finished.push(*node);
                    continue;
                };
                let (lb, rb) = self.child_bounds(node, &split);
                let l = tree.push_leaf(0.0);
                let r = tree.push_leaf(0.0);
                tree.set_split(
                    node.id,
                    split.feature,
                    split.threshold,
                    split.default_left,
                    split.gain,
                    (l, r),
                );
                children_of.resize(tree.len(), None);
                children_of[node.id] = Some((l, r, split));
                next.push(OpenNode {
                    id: l,
                    grad: split.left.0,
                    hess: split.left.1,
                    count: 0,
                    bounds: lb,
                });
                next.push(OpenNode {
                    id: r,
                    grad: split.right.0,
                    hess: split.right.1,
                    count: 0,
                    bounds: rb,
                });
            }
            if next.is_empty() {
                open.clear();
                break;
            }
            let mut counts = vec![0usize; tree.len()];
            for &r in rows {
                let id = node_of[r] as usize;
                if let Some(Some((l, rr, split))) = children_of.get(id) {
                    let v = data.column(split.feature)[r];
                    let go_left = if v.is_nan() {
                        split.default_left
                    } else {
                        v < split.threshold
                    };
                    let child = if go_left { *l } else { *rr };
                    node_of[r] = child as u32;
                    counts[child] += 1;
                }
            }
            for node in &mut next {
                node.count = counts[node.id];
            }
            open = next;
        }
        finished.extend(open);

        let eta = self.config.eta;
        for node in finished {
            tree.value[node.id] = eta * self.weight(node.grad, node.hess, node.bounds);
        }
        tree
    }
}

/// Fits `config.nrounds` trees on the logistic loss. Labels are 1 for the
/// positive class (a missed transfer).
pub fn train(data: &Dataset, config: &TrainConfig, monotone: &[i8]) -> Result<BoostedModel> {
    config.validate()?;
    if monotone.len() != data.n_features() {
        return Err(Error::Schema {
            expected: data.n_features(),
            got: monotone.len(),
        });
    }
    let n = data.len();
    let positives = data.positives();
    if positives < 2 || n - positives < 2 {
        return Err(Error::DegenerateLabels);
    }
    let prevalence = positives as f64 / n as f64;
    let base_score = (prevalence / (1.0 - prevalence)).ln();

    let columns = SortedColumns::new(data);
    let grower = Grower { config, monotone };
    let mut rng = seeded(config.seed);
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let sample_size = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(config.nrounds);

    for _ in 0..config.nrounds {
        for r in 0..n {
            let p = sigmoid(margin[r]);
            grad[r] = p - data.label(r);
            hess[r] = (p * (1.0 - p)).max(MIN_HESSIAN);
        }
        let rows: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut picked = index::sample(&mut rng, n, sample_size).into_vec();
            picked.sort_unstable();
            picked
        };
        let tree = grower.grow(&columns, &grad, &hess, &rows, data);
        for (r, m) in margin.iter_mut().enumerate() {
            *m += tree.value[tree.leaf_index_by(|f| data.column(f)[r])];
        }
        trees.push(tree);
    }

    Ok(BoostedModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        feature_names: data.feature_names().to_vec(),
        monotone: monotone.to_vec(),
        base_score,
        trees,
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng as _;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("f{i}")).collect()
    }

    /// Two features; positives more likely at small `x0`, `x1` is noise,
    /// and 10% of `x1` values are missing.
    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 0);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x0: f64 = rng.random_range(0.0..10.0);
            let x1: f64 = if rng.random_bool(0.1) { f64::NAN } else { rng.random() };
            let p = 1.0 / (1.0 + (x0 - 4.0).exp());
            labels.push(rng.random_bool(p));
            rows.push(vec![x0, x1]);
        }
        Dataset::from_rows(&rows, &labels, names(2)).unwrap()
    }

    fn log_loss(model: &BoostedModel, data: &Dataset) -> f64 {
        model
            .predict_dataset(data)
            .iter()
            .zip(data.labels())
            .map(|(p, y)| if y { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / data.len() as f64
    }

    fn small_config(nrounds: usize) -> TrainConfig {
        TrainConfig {
            nrounds,
            max_depth: 3,
            subsample: 1.0,
            gamma: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_rounds_predicts_prevalence() {
        let data = toy(400, 1);
        let model = train(&data, &small_config(0), &[0, 0]).unwrap();
        let prevalence = data.positives() as f64 / data.len() as f64;
        let p = model.predict_miss_probability(&[3.0, 0.5]).unwrap();
        assert!((p - prevalence).abs() < 1e-12);
    }

    #[test]
    fn empty_model_with_zero_base_is_half() {
        let model = BoostedModel {
            format_version: MODEL_FORMAT_VERSION,
            config: TrainConfig::default(),
            feature_names: names(2),
            monotone: vec![0, 0],
            base_score: 0.0,
            trees: Vec::new(),
            config_hash: None,
        };
        assert_eq!(model.predict_miss_probability(&[1.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(
            model.predict_miss_probability(&[1.0]),
            Err(Error::Schema { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn missing_values_give_finite_predictions() {
        let data = toy(600, 2);
        let model = train(&data, &small_config(30), &[0, 0]).unwrap();
        let p = model.predict_miss_probability(&[f64::NAN, f64::NAN]).unwrap();
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }

    #[test]
    fn zero_tree_changes_nothing() {
        let data = toy(300, 3);
        let model = train(&data, &small_config(10), &[0, 0]).unwrap();
        let mut padded = model.clone();
        padded.trees.push(Tree::leaf(0.0));
        for r in 0..data.len() {
            let x = data.row(r);
            let a = model.predict_miss_probability(&x).unwrap();
            let b = padded.predict_miss_probability(&x).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn training_loss_never_increases() {
        let data = toy(800, 4);
        let model = train(&data, &small_config(40), &[0, 0]).unwrap();
        let mut prev = f64::INFINITY;
        for rounds in 0..=40 {
            let loss = log_loss(&model.truncated(rounds), &data);
            assert!(loss <= prev + 1e-12, "round {rounds}: {loss} > {prev}");
            prev = loss;
        }
    }

    #[test]
    fn monotone_constraint_holds_against_the_data() {
        // Miss rate rises with x0 on [0, 5] and falls afterwards; a
        // non-increasing constraint must still hold everywhere.
        let mut rng = stream_rng(5, 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..3000 {
            let x0: f64 = rng.random_range(0.0..10.0);
            let x1: f64 = rng.random();
            let p = if x0 < 5.0 { 0.1 + 0.15 * x0 } else { 0.85 - 0.15 * (x0 - 5.0) };
            labels.push(rng.random_bool(p));
            rows.push(vec![x0, x1]);
        }
        let data = Dataset::from_rows(&rows, &labels, names(2)).unwrap();
        let model = train(&data, &small_config(60), &[-1, 0]).unwrap();
        for _ in 0..1000 {
            let (a, b): (f64, f64) = (rng.random_range(-1.0..11.0), rng.random_range(-1.0..11.0));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let x1: f64 = rng.random();
            let p_lo = model.predict_miss_probability(&[lo, x1]).unwrap();
            let p_hi = model.predict_miss_probability(&[hi, x1]).unwrap();
            assert!(p_hi <= p_lo, "p({hi}) = {p_hi} > p({lo}) = {p_lo}");
        }
    }

    #[test]
    fn missing_rows_follow_their_labels() {
        // Present values split cleanly at 0.5; every missing row is positive,
        // so the learned default must send NaN to the positive side.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let x = i as f64 / 200.0;
            rows.push(vec![x]);
            labels.push(x >= 0.5);
        }
        for _ in 0..50 {
            rows.push(vec![f64::NAN]);
            labels.push(true);
        }
        let data = Dataset::from_rows(&rows, &labels, names(1)).unwrap();
        let model = train(&data, &small_config(1), &[0]).unwrap();
        let root = &model.trees[0];
        assert_eq!(root.feature[0], 0);
        assert!((root.threshold[0] - 0.4975).abs() < 1e-12);
        assert!(!root.default_left[0]);
        let na = model.predict_margin(&[f64::NAN]).unwrap();
        let high = model.predict_margin(&[0.9]).unwrap();
        assert_eq!(na, high);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let data = toy(500, 6);
        let model = train(&data, &small_config(20), &[-1, 0]).unwrap();
        let back = BoostedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        for r in 0..data.len() {
            let x = data.row(r);
            assert_eq!(
                model.predict_margin(&x).unwrap().to_bits(),
                back.predict_margin(&x).unwrap().to_bits()
            );
        }
        let mut bad: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        bad["format_version"] = 99.into();
        assert!(BoostedModel::from_json(&bad.to_string()).is_err());
    }

    #[test]
    fn degenerate_labels_rejected() {
        let rows = vec![vec![1.0]; 10];
        let mut labels = vec![false; 10];
        let data = Dataset::from_rows(&rows, &labels, names(1)).unwrap();
        assert!(matches!(train(&data, &small_config(5), &[0]), Err(Error::DegenerateLabels)));
        labels[0] = true;
        let data = Dataset::from_rows(&rows, &labels, names(1)).unwrap();
        assert!(matches!(train(&data, &small_config(5), &[0]), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn subsampled_training_is_reproducible() {
        let data = toy(500, 7);
        let config = TrainConfig {
            nrounds: 15,
            max_depth: 3,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train(&data, &config, &[0, 0]).unwrap();
        let b = train(&data, &config, &[0, 0]).unwrap();
        assert_eq!(a, b);
        assert!(a.trees.iter().all(|t| t.depth() <= 3));
    }
}
