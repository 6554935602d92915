//! Second-order gradient-boosted regression trees on squared error, with
//! exact greedy split finding, plus a KNN regressor used for comparison.
//!
//! Trees are trained on z-scored targets; the model stores the statistics and
//! denormalizes on prediction.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPGB";
const CHECKPOINT_VERSION: u32 = 1;
const MIN_TRAIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtHyper {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    /// Minimum loss reduction for a split.
    pub gamma: f64,
    /// L2 regularization on leaf weights.
    pub lambda: f64,
    pub early_stopping_rounds: usize,
}

impl Default for GbdtHyper {
    fn default() -> Self {
        Self {
            max_depth: 7,
            learning_rate: 0.021,
            n_estimators: 1386,
            subsample: 0.653,
            colsample_bytree: 0.888,
            gamma: 0.002,
            lambda: 1.744,
            early_stopping_rounds: 200,
        }
    }
}

impl GbdtHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.max_depth == 0 || !(self.learning_rate > 0.0) || self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config(format!("invalid GBDT hyperparameters {self:?}")));
        }
        if !unit(self.subsample) || !unit(self.colsample_bytree) {
            return Err(Error::Config("subsample and colsample_bytree must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// `feature < 0` marks a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: i32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

impl Node {
    pub fn leaf(value: f64) -> Self {
        Self {
            feature: -1,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature < 0
    }
}

/// Binary regression tree; node 0 is the root. Rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.value;
            }
            i = if x[n.feature as usize] < n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    hyper: GbdtHyper,
    features: FeatureConfig,
    target_stats: NormStats,
    base_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    /// Initial prediction in normalized target space.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub hyper: GbdtHyper,
    pub features: FeatureConfig,
    pub target_stats: NormStats,
}

impl GbdtModel {
    pub fn predict_normalized(&self, f: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(f)).sum();
        self.base_score + self.hyper.learning_rate * sum
    }

    /// Prediction in target units.
    pub fn predict(&self, f: &[f64]) -> Result<f64> {
        self.check_dim(f.len())?;
        Ok(self.target_stats.invert(self.predict_normalized(f)))
    }

    /// Prediction denormalized with externally supplied statistics.
    pub fn predict_with_stats(&self, f: &[f64], stats: NormStats) -> Result<f64> {
        self.check_dim(f.len())?;
        Ok(stats.invert(self.predict_normalized(f)))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        let expected = self.features.input_dim();
        if got != expected {
            return Err(Error::DimMismatch { expected, got });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            hyper: self.hyper,
            features: self.features,
            target_stats: self.target_stats,
            base_score: self.base_score,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.trees.len() as u64).to_le_bytes());
        for tree in &self.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for n in &tree.nodes {
                out.extend_from_slice(&n.feature.to_le_bytes());
                out.extend_from_slice(&n.threshold.to_le_bytes());
                out.extend_from_slice(&n.left.to_le_bytes());
                out.extend_from_slice(&n.right.to_le_bytes());
                out.extend_from_slice(&n.value.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a GBDT checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported GBDT checkpoint version {version}")));
        }
        let header_len = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)?;
        let n_trees = r.u64()? as usize;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 20));
        for _ in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                nodes.push(Node {
                    feature: r.i32()?,
                    threshold: r.f64()?,
                    left: r.u32()?,
                    right: r.u32()?,
                    value: r.f64()?,
                });
            }
            let tree = Tree { nodes };
            validate_tree(&tree, header.features.input_dim())?;
            trees.push(tree);
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes in GBDT checkpoint".into()));
        }
        Ok(Self {
            base_score: header.base_score,
            trees,
            hyper: header.hyper,
            features: header.features,
            target_stats: header.target_stats,
        })
    }
}

fn validate_tree(tree: &Tree, n_features: usize) -> Result<()> {
    if tree.nodes.is_empty() {
        return Err(Error::Format("empty tree".into()));
    }
    for (i, n) in tree.nodes.iter().enumerate() {
        if n.is_leaf() {
            continue;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        if n.feature as usize >= n_features || l <= i || r <= i || l >= tree.nodes.len() || r >= tree.nodes.len() {
            return Err(Error::Format(format!("malformed tree node {i}")));
        }
    }
    Ok(())
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Column-major training matrix with per-feature ascending orderings.
struct ColumnData {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl ColumnData {
    fn new(rows: &[Vec<f64>], n_features: usize) -> Self {
        let n_rows = rows.len();
        let columns: Vec<Vec<f64>> = (0..n_features).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let order = columns
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n_rows as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { n_rows, columns, order }
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    g: f64,
    h: f64,
}

fn leaf_weight(s: NodeStats, lambda: f64) -> f64 {
    -s.g / (s.h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Grows one tree level by level. `grad` and `hess` are indexed by row;
/// rows outside `in_sample` are ignored.
fn grow_tree(
    data: &ColumnData,
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    features: &[usize],
    hyper: &GbdtHyper,
) -> Tree {
    const NONE: u32 = u32::MAX;
    let lambda = hyper.lambda;

    let mut root = NodeStats::default();
    let mut node_of = vec![NONE; data.n_rows];
    for i in 0..data.n_rows {
        if in_sample[i] {
            node_of[i] = 0;
            root.g += grad[i];
            root.h += hess[i];
        }
    }

    let mut nodes = vec![Node::leaf(leaf_weight(root, lambda))];
    // tree node ids of the frontier, with their gradient sums
    let mut frontier: Vec<(u32, NodeStats)> = vec![(0, root)];

    for _depth in 0..hyper.max_depth {
        if frontier.is_empty() {
            break;
        }
        // position of each tree node inside the frontier
        let mut slot = vec![NONE; nodes.len()];
        for (k, &(id, _)) in frontier.iter().enumerate() {
            slot[id as usize] = k as u32;
        }

        let per_feature: Vec<Vec<Option<SplitCandidate>>> = features
            .par_iter()
            .map(|&f| {
                let col = &data.columns[f];
                let mut left = vec![NodeStats::default(); frontier.len()];
                let mut last = vec![f64::NAN; frontier.len()];
                let mut best: Vec<Option<SplitCandidate>> = vec![None; frontier.len()];
                for &row in &data.order[f] {
                    let row = row as usize;
                    let id = node_of[row];
                    if id == NONE {
                        continue;
                    }
                    let k = slot[id as usize];
                    if k == NONE {
                        continue;
                    }
                    let k = k as usize;
                    let v = col[row];
                    let l = left[k];
                    if l.h > 0.0 && v > last[k] {
                        let total = frontier[k].1;
                        let (gr, hr) = (total.g - l.g, total.h - l.h);
                        let gain = 0.5 * (score(l.g, l.h, lambda) + score(gr, hr, lambda) - score(total.g, total.h, lambda))
                            - hyper.gamma;
                        if gain > 0.0 && best[k].is_none_or(|b| gain > b.gain) {
                            let mut threshold = last[k] + 0.5 * (v - last[k]);
                            if threshold <= last[k] {
                                threshold = v;
                            }
                            best[k] = Some(SplitCandidate {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                    left[k].g += grad[row];
                    left[k].h += hess[row];
                    last[k] = v;
                }
                best
            })
            .collect();

        // reduce in feature order so the result does not depend on scheduling
        let mut chosen: Vec<Option<SplitCandidate>> = vec![None; frontier.len()];
        for cands in &per_feature {
            for (k, c) in cands.iter().enumerate() {
                if let Some(c) = c {
                    if chosen[k].is_none_or(|b| c.gain > b.gain) {
                        chosen[k] = Some(*c);
                    }
                }
            }
        }

        let mut child_stats: Vec<[NodeStats; 2]> = vec![[NodeStats::default(); 2]; frontier.len()];
        let mut child_ids: Vec<Option<[u32; 2]>> = vec![None; frontier.len()];
        for (k, c) in chosen.iter().enumerate() {
            if let Some(c) = c {
                let (id, _) = frontier[k];
                let l = nodes.len() as u32;
                nodes.push(Node::leaf(0.0));
                nodes.push(Node::leaf(0.0));
                nodes[id as usize] = Node {
                    feature: c.feature as i32,
                    threshold: c.threshold,
                    left: l,
                    right: l + 1,
                    value: 0.0,
                };
                child_ids[k] = Some([l, l + 1]);
            }
        }
        for row in 0..data.n_rows {
            let id = node_of[row];
            if id == NONE {
                continue;
            }
            let k = slot[id as usize];
            if k == NONE {
                node_of[row] = NONE;
                continue;
            }
            let k = k as usize;
            match (child_ids[k], chosen[k]) {
                (Some(ids), Some(c)) => {
                    let side = usize::from(data.columns[c.feature][row] >= c.threshold);
                    node_of[row] = ids[side];
                    child_stats[k][side].g += grad[row];
                    child_stats[k][side].h += hess[row];
                }
                _ => node_of[row] = NONE,
            }
        }
        let mut next = Vec::new();
        for k in 0..frontier.len() {
            if let Some(ids) = child_ids[k] {
                for side in 0..2 {
                    let s = child_stats[k][side];
                    nodes[ids[side] as usize].value = leaf_weight(s, lambda);
                    next.push((ids[side], s));
                }
            }
        }
        frontier = next;
    }
    Tree { nodes }
}

fn check_inputs(features: &[Vec<f64>], targets: &[f64], dim: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    if features.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    for row in features {
        if row.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite target value"));
    }
    Ok(())
}

/// Per-round training loss trace, in normalized space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoostTrace {
    pub train_mse: Vec<f64>,
    pub valid_mse: Vec<f64>,
    pub best_round: Option<usize>,
}

struct Boosting<'a> {
    hyper: &'a GbdtHyper,
    rounds: usize,
    seed: u64,
}

impl Boosting<'_> {
    /// Appends trees to `trees`, starting from predictions `pred` (training)
    /// and `valid_pred`. Targets are normalized.
    fn run(
        &self,
        rows: &[Vec<f64>],
        y: &[f64],
        pred: &mut [f64],
        validation: Option<(&[Vec<f64>], &[f64], &mut Vec<f64>)>,
        trees: &mut Vec<Tree>,
    ) -> BoostTrace {
        let n_features = rows[0].len();
        let data = ColumnData::new(rows, n_features);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lr = self.hyper.learning_rate;
        let n_cols = ((self.hyper.colsample_bytree * n_features as f64).round() as usize).clamp(1, n_features);
        let hess = vec![1.0; rows.len()];
        let mut grad = vec![0.0; rows.len()];
        let mut trace = BoostTrace::default();
        let start_len = trees.len();

        let mut validation = validation;
        let mut best = f64::INFINITY;
        let mut since_best = 0usize;

        for round in 0..self.rounds {
            for i in 0..rows.len() {
                grad[i] = pred[i] - y[i];
            }
            let in_sample: Vec<bool> = if self.hyper.subsample < 1.0 {
                (0..rows.len()).map(|_| rng.random::<f64>() < self.hyper.subsample).collect()
            } else {
                vec![true; rows.len()]
            };
            let mut cols: Vec<usize> = if n_cols < n_features {
                sample_indices(&mut rng, n_features, n_cols).into_vec()
            } else {
                (0..n_features).collect()
            };
            cols.sort_unstable();

            let tree = grow_tree(&data, &grad, &hess, &in_sample, &cols, self.hyper);
            pred.par_iter_mut()
                .zip(rows.par_iter())
                .for_each(|(p, r)| *p += lr * tree.predict(r));
            trace.train_mse.push(mse(pred, y));

            if let Some((vx, vy, vpred)) = validation.as_mut() {
                for (p, r) in vpred.iter_mut().zip(vx.iter()) {
                    *p += lr * tree.predict(r);
                }
                let loss = mse(vpred, vy);
                trace.valid_mse.push(loss);
                trees.push(tree);
                if loss < best {
                    best = loss;
                    since_best = 0;
                    trace.best_round = Some(round);
                } else {
                    since_best += 1;
                    if since_best >= self.hyper.early_stopping_rounds {
                        break;
                    }
                }
            } else {
                trees.push(tree);
            }
        }
        if let Some(b) = trace.best_round {
            trees.truncate(start_len + b + 1);
        }
        trace
    }
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Optional held-out rows for early stopping.
pub type Validation<'a> = Option<(&'a [Vec<f64>], &'a [f64])>;

/// Trains a booster. Targets are in physical units; z-score statistics are
/// fit on them (unit scale for a constant series).
pub fn train_gbdt(
    features: &[Vec<f64>],
    targets: &[f64],
    header: FeatureConfig,
    hyper: &GbdtHyper,
    validation: Validation<'_>,
    seed: u64,
) -> Result<GbdtModel> {
    train_gbdt_traced(features, targets, header, hyper, validation, seed).map(|(m, _)| m)
}

pub fn train_gbdt_traced(
    features: &[Vec<f64>],
    targets: &[f64],
    header: FeatureConfig,
    hyper: &GbdtHyper,
    validation: Validation<'_>,
    seed: u64,
) -> Result<(GbdtModel, BoostTrace)> {
    hyper.validate()?;
    check_inputs(features, targets, header.input_dim())?;
    if features.len() < MIN_TRAIN_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {MIN_TRAIN_SAMPLES} training samples, got {}",
            features.len()
        )));
    }
    if let Some((vx, vy)) = validation {
        check_inputs(vx, vy, header.input_dim())?;
    }

    let stats = NormStats::fit_or_unit(targets);
    let y: Vec<f64> = targets.iter().map(|&t| stats.apply(t)).collect();
    let base_score = y.iter().sum::<f64>() / y.len() as f64;

    let mut model = GbdtModel {
        base_score,
        trees: Vec::new(),
        hyper: *hyper,
        features: header,
        target_stats: stats,
    };
    let mut pred = vec![base_score; y.len()];
    let valid_y: Option<Vec<f64>> = validation.map(|(_, vy)| vy.iter().map(|&t| stats.apply(t)).collect());
    let mut valid_pred = validation.map(|(vx, _)| vec![base_score; vx.len()]).unwrap_or_default();
    let valid = match (validation, valid_y.as_deref()) {
        (Some((vx, _)), Some(vy)) => Some((vx, vy, &mut valid_pred)),
        _ => None,
    };
    let trace = Boosting {
        hyper,
        rounds: hyper.n_estimators,
        seed,
    }
    .run(features, &y, &mut pred, valid, &mut model.trees);
    Ok((model, trace))
}

/// Continued boosting: the existing trees are kept frozen and up to `rounds`
/// new trees are fit to the residuals. `stats` re-targets the normalized
/// space (for example statistics fit on a fine-tuning split).
pub fn continue_boosting(
    model: &GbdtModel,
    features: &[Vec<f64>],
    targets: &[f64],
    stats: NormStats,
    rounds: usize,
    validation: Validation<'_>,
    seed: u64,
) -> Result<GbdtModel> {
    check_inputs(features, targets, model.features.input_dim())?;
    let mut out = model.clone();
    out.target_stats = stats;
    if rounds == 0 {
        return Ok(out);
    }
    let y: Vec<f64> = targets.iter().map(|&t| stats.apply(t)).collect();
    let mut pred: Vec<f64> = features.iter().map(|f| model.predict_normalized(f)).collect();
    let valid_y: Option<Vec<f64>> = validation.map(|(_, vy)| vy.iter().map(|&t| stats.apply(t)).collect());
    let mut valid_pred: Vec<f64> = validation
        .map(|(vx, _)| vx.iter().map(|f| model.predict_normalized(f)).collect())
        .unwrap_or_default();
    let valid = match (validation, valid_y.as_deref()) {
        (Some((vx, _)), Some(vy)) => Some((vx, vy, &mut valid_pred)),
        _ => None,
    };
    Boosting {
        hyper: &model.hyper,
        rounds,
        seed,
    }
    .run(features, &y, &mut pred, valid, &mut out.trees);
    Ok(out)
}

/// Inverse-distance-weighted k-nearest-neighbour regressor on z-scored
/// features.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    pub k: usize,
    feature_stats: Vec<NormStats>,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl KnnRegressor {
    pub const DEFAULT_K: usize = 8;

    pub fn fit(features: &[Vec<f64>], targets: &[f64], k: usize) -> Result<Self> {
        let dim = features.first().map(Vec::len).unwrap_or(0);
        check_inputs(features, targets, dim)?;
        if k == 0 {
            return Err(Error::Config("knn k must be >= 1".into()));
        }
        let feature_stats: Vec<NormStats> = (0..dim)
            .map(|j| NormStats::fit_or_unit(&features.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect();
        let rows = features
            .iter()
            .map(|r| r.iter().zip(&feature_stats).map(|(v, s)| s.apply(*v)).collect())
            .collect();
        Ok(Self {
            k,
            feature_stats,
            rows,
            targets: targets.to_vec(),
        })
    }

    pub fn predict(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.feature_stats.len() {
            return Err(Error::DimMismatch {
                expected: self.feature_stats.len(),
                got: f.len(),
            });
        }
        let z: Vec<f64> = f.iter().zip(&self.feature_stats).map(|(v, s)| s.apply(*v)).collect();
        let mut dists: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
            .collect();
        let k = self.k.min(dists.len());
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &mut dists[..k];
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let exact: Vec<f64> = nearest.iter().filter(|d| d.0 == 0.0).map(|d| self.targets[d.1]).collect();
        if !exact.is_empty() {
            return Ok(exact.iter().sum::<f64>() / exact.len() as f64);
        }
        let (num, den) = nearest
            .iter()
            .fold((0.0, 0.0), |(n, d), &(dist, i)| (n + self.targets[i] / dist, d + 1.0 / dist));
        Ok(num / den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(d: usize) -> FeatureConfig {
        FeatureConfig {
            d,
            k: 0,
            p: 0,
            feature_schema_version: 1,
            phase_encodings: false,
        }
    }

    fn plain(depth: usize, rounds: usize) -> GbdtHyper {
        GbdtHyper {
            max_depth: depth,
            learning_rate: 0.3,
            n_estimators: rounds,
            subsample: 1.0,
            colsample_bytree: 1.0,
            gamma: 0.0,
            lambda: 1.0,
            early_stopping_rounds: 10,
        }
    }

    #[test]
    fn zero_rounds_predict_mean() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
        let m = train_gbdt(&x, &y, header(1), &plain(3, 0), None, 0).unwrap();
        let mean = y.iter().sum::<f64>() / 20.0;
        assert!(m.trees.is_empty());
        assert!((m.predict(&[3.0]).unwrap() - mean).abs() < 1e-9);
    }

    #[test]
    fn constant_targets_never_split() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y = vec![5.0; 30];
        let m = train_gbdt(&x, &y, header(2), &plain(4, 20), None, 1).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        for row in &x {
            assert_eq!(m.predict(row).unwrap(), 5.0);
        }
    }

    #[test]
    fn hand_built_tree_routes() {
        let tree = Tree {
            nodes: vec![
                Node {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    value: 0.0,
                },
                Node::leaf(-1.0),
                Node::leaf(1.0),
            ],
        };
        let m = GbdtModel {
            base_score: 0.25,
            trees: vec![tree],
            hyper: GbdtHyper {
                learning_rate: 0.1,
                ..GbdtHyper::default()
            },
            features: header(1),
            target_stats: NormStats { mean: 0.0, std: 1.0 },
        };
        assert!((m.predict(&[0.7]).unwrap() - (0.25 + 0.1)).abs() < 1e-15);
        assert!((m.predict(&[0.2]).unwrap() - (0.25 - 0.1)).abs() < 1e-15);
        assert!(m.predict(&[0.2, 1.0]).is_err());
    }

    #[test]
    fn depth_respected() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64).sin(), (i as f64 * 0.37).cos()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + r[1].powi(2)).collect();
        let m = train_gbdt(&x, &y, header(2), &plain(3, 15), None, 2).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let y = vec![0.0; 5];
        assert!(train_gbdt(&x, &y, header(1), &plain(2, 2), None, 0).is_err());
        let mut x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let y = vec![0.0; 12];
        assert!(train_gbdt(&x, &y, header(2), &plain(2, 2), None, 0).is_err());
        x[3][0] = f64::NAN;
        assert!(train_gbdt(&x, &y, header(1), &plain(2, 2), None, 0).is_err());
        assert!(train_gbdt(&[], &[], header(1), &plain(2, 2), None, 0).is_err());
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let vx: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 + 0.5]).collect();
        let vy = vec![0.5; 20];
        let hyper = GbdtHyper {
            early_stopping_rounds: 3,
            ..plain(6, 200)
        };
        let (m, trace) = train_gbdt_traced(&x, &y, header(1), &hyper, Some((&vx, &vy)), 0).unwrap();
        let best = trace.best_round.unwrap();
        assert_eq!(m.trees.len(), best + 1);
        assert!(trace.valid_mse.len() < 200);
    }

    #[test]
    fn knn_exact_match_and_weights() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![0.0, 10.0, 20.0, 30.0];
        let knn = KnnRegressor::fit(&x, &y, 2).unwrap();
        assert_eq!(knn.predict(&[1.0]).unwrap(), 10.0);
        // halfway between two neighbours: equal weights
        assert!((knn.predict(&[1.5]).unwrap() - 15.0).abs() < 1e-9);
    }
}
