//! Regularized second-order gradient-boosted trees for binary classification.
//!
//! Trees are grown greedily to a depth cap with exact split search over
//! midpoints of consecutive distinct feature values. Split gain and leaf
//! weights follow the second-order objective with L1 soft-thresholding and L2
//! shrinkage; row subsampling, per-tree and per-level column subsampling,
//! minimum child hessian weight, and a gain threshold are all honored.
//! Training is deterministic given (data, hyperparameters, seed).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten tunable knobs of the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub colsample_bylevel: f64,
    pub colsample_bytree: f64,
    pub subsample: f64,
    pub max_depth: usize,
    /// Minimum hessian sum allowed in either child of a split.
    pub min_child_weight: f64,
    /// L1 penalty α applied to leaf gradient sums by soft-thresholding.
    pub l1_alpha: f64,
    /// Minimum loss reduction γ required to accept a split.
    pub split_gamma: f64,
    /// L2 penalty λ on leaf weights.
    pub l2_lambda: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            n_estimators: 90,
            learning_rate: 0.1,
            colsample_bylevel: 0.8,
            colsample_bytree: 0.8,
            subsample: 0.8,
            max_depth: 4,
            min_child_weight: 0.8,
            l1_alpha: 0.0,
            split_gamma: 0.0,
            l2_lambda: 1.0,
        }
    }
}

impl Hyperparameters {
    /// Check the values against the search-space ranges used for tuning.
    /// `fit` itself only requires basic sanity, so e.g. shallow diagnostic
    /// trees with `max_depth = 1` are allowed outside the tuned pipeline.
    pub fn validate_search_ranges(&self) -> Result<()> {
        fn range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
            if v < lo || v > hi {
                return Err(Error::Argument(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
            Ok(())
        }
        if !(30..=150).contains(&self.n_estimators) {
            return Err(Error::Argument(format!(
                "n_estimators = {} outside [30, 150]",
                self.n_estimators
            )));
        }
        range("learning_rate", self.learning_rate, 0.05, 0.3)?;
        range("colsample_bylevel", self.colsample_bylevel, 0.6, 1.0)?;
        range("colsample_bytree", self.colsample_bytree, 0.6, 1.0)?;
        range("subsample", self.subsample, 0.6, 1.0)?;
        if !(3..=6).contains(&self.max_depth) {
            return Err(Error::Argument(format!(
                "max_depth = {} outside {{3, 4, 5, 6}}",
                self.max_depth
            )));
        }
        range("min_child_weight", self.min_child_weight, 0.6, 1.0)?;
        range("l1_alpha", self.l1_alpha, 0.0, 1.0)?;
        range("split_gamma", self.split_gamma, 0.0, 1.0)?;
        range("l2_lambda", self.l2_lambda, 0.4, 1.0)?;
        Ok(())
    }

    fn validate_sanity(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::Argument("n_estimators must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning_rate = {} must be positive and finite",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("colsample_bylevel", self.colsample_bylevel),
            ("colsample_bytree", self.colsample_bytree),
            ("subsample", self.subsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Argument(format!("{name} = {v} outside (0, 1]")));
            }
        }
        if self.max_depth == 0 {
            return Err(Error::Argument("max_depth must be at least 1".into()));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return Err(Error::Argument(format!(
                "min_child_weight = {} must be non-negative",
                self.min_child_weight
            )));
        }
        if !(self.l1_alpha >= 0.0 && self.split_gamma >= 0.0 && self.l2_lambda >= 0.0) {
            return Err(Error::Argument(
                "regularization terms must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient and hessian of the logistic loss at one point.
pub fn grad_hess_logloss(label: u8, margin: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - label as f64, p * (1.0 - p))
}

pub fn sigmoid(margin: f64) -> f64 {
    1.0 / (1.0 + (-margin).exp())
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

/// Optimal leaf weight −T(G)/(H+λ) with T the α soft-threshold.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, alpha: f64, lambda: f64) -> Result<f64> {
    let denom = hess_sum + lambda;
    if denom <= 0.0 {
        return Err(Error::Numeric(format!(
            "leaf weight denominator H+λ = {denom} not positive"
        )));
    }
    Ok(-soft_threshold(grad_sum, alpha) / denom)
}

/// Structure score T(G)²/(H+λ) of a node.
fn structure_score(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    let t = soft_threshold(g, alpha);
    t * t / (h + lambda)
}

/// Split threshold between two consecutive distinct values: their midpoint,
/// nudged down to `lo` if rounding lands on `hi` so `value <= threshold`
/// always routes `lo` left and `hi` right.
fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitDecision {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exact greedy split search over one node.
///
/// `instances` lists the node's rows (ascending); `candidates` the feature
/// indices to scan. Thresholds are midpoints of consecutive distinct values.
/// Gain is ½[S(G_L,H_L)+S(G_R,H_R)−S(G,H)] − γ with S(G,H) = T(G)²/(H+λ);
/// a split is returned only if gain > 0 and both children carry at least
/// `min_child_weight` hessian. Ties break to the lowest feature index, then
/// the lowest threshold.
pub fn find_best_split(
    columns: &[Vec<f64>],
    instances: &[usize],
    grad: &[f64],
    hess: &[f64],
    candidates: &[usize],
    hp: &Hyperparameters,
) -> Result<Option<SplitDecision>> {
    if instances.is_empty() {
        return Err(Error::Argument("instance set is empty".into()));
    }
    let mut g_total = 0.0;
    let mut h_total = 0.0;
    for &r in instances {
        g_total += grad[r];
        h_total += hess[r];
    }

    let mut feats: Vec<usize> = candidates.to_vec();
    feats.sort_unstable();

    let mut best: Option<SplitDecision> = None;
    let mut order: Vec<usize> = Vec::with_capacity(instances.len());
    for &f in &feats {
        let col = &columns[f];
        for &r in instances {
            if !col[r].is_finite() {
                return Err(Error::Numeric(format!(
                    "feature {f} has non-finite value at row {r}"
                )));
            }
        }
        order.clear();
        order.extend_from_slice(instances);
        order.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).expect("values are finite"));

        let mut run_g = 0.0;
        let mut run_h = 0.0;
        let mut prev = col[order[0]];
        for &r in &order {
            let v = col[r];
            if v != prev {
                let h_left = run_h;
                let h_right = h_total - run_h;
                if h_left >= hp.min_child_weight && h_right >= hp.min_child_weight {
                    let g_left = run_g;
                    let g_right = g_total - run_g;
                    let gain = 0.5
                        * (structure_score(g_left, h_left, hp.l1_alpha, hp.l2_lambda)
                            + structure_score(g_right, h_right, hp.l1_alpha, hp.l2_lambda)
                            - structure_score(g_total, h_total, hp.l1_alpha, hp.l2_lambda))
                        - hp.split_gamma;
                    if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.gain) {
                        best = Some(SplitDecision {
                            feature: f,
                            threshold: split_threshold(prev, v),
                            gain,
                        });
                    }
                }
                prev = v;
            }
            run_g += grad[r];
            run_h += hess[r];
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        gain: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Nodes in creation order; node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf weight reached by a row presented column-major.
    fn score_columns(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if columns[feature as usize][row] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                Node::Leaf { weight } => return weight,
            }
        }
    }

    fn score_row(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                Node::Leaf { weight } => return weight,
            }
        }
    }

    fn depth_from(&self, at: usize) -> usize {
        match self.nodes[at] {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => {
                1 + self.depth_from(left as usize).max(self.depth_from(right as usize))
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.depth_from(0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceKind {
    /// Split count per feature.
    Weight,
    /// Mean split gain per feature.
    Gain,
}

/// A fitted boosted-tree classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub hyperparameters: Hyperparameters,
    pub n_features: usize,
    /// Prior log-odds of the training labels.
    pub base_score: f64,
    /// Number of leading trees used for prediction (argmin validation loss).
    pub best_iteration: usize,
    pub trees: Vec<Tree>,
}

fn sample_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

/// Draw `amount` distinct items of `pool` without replacement, ascending.
fn sample_sorted(rng: &mut ChaCha8Rng, pool: &[u32], ratio: f64) -> Vec<u32> {
    if ratio >= 1.0 {
        return pool.to_vec();
    }
    let amount = sample_count(ratio, pool.len());
    let mut picked: Vec<u32> = rand::seq::index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn logloss_from_margins(labels: &[u8], margins: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&y, &m) in labels.iter().zip(margins) {
        let p = sigmoid(m).clamp(1e-15, 1.0 - 1e-15);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    total / labels.len() as f64
}

struct ActiveNode {
    id: u32,
    g: f64,
    h: f64,
}

/// What the partition pass does with rows of one active node.
enum NodeOutcome {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Finalized,
}

impl GbdtModel {
    /// Train on column-major features, optionally early-stopping against a
    /// validation set (required non-empty when provided).
    ///
    /// Per boosting round: rows are subsampled without replacement, features
    /// per tree and then per depth level, and the tree is grown greedily with
    /// exact split search. `best_iteration` is the prefix length minimizing
    /// validation log loss; training halts once that loss has not improved
    /// for ceil(0.1 × n_estimators) consecutive rounds.
    pub fn fit(
        columns: &[Vec<f64>],
        labels: &[u8],
        valid: Option<(&[Vec<f64>], &[u8])>,
        hp: &Hyperparameters,
        seed: u64,
    ) -> Result<GbdtModel> {
        hp.validate_sanity()?;
        let n_features = columns.len();
        if n_features == 0 {
            return Err(Error::Fit("no feature columns".into()));
        }
        let n = labels.len();
        for (f, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Fit(format!(
                    "feature {f} has {} rows, labels have {n}",
                    col.len()
                )));
            }
            for (r, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "feature {f} has non-finite value at row {r}"
                    )));
                }
            }
        }
        let positives = labels.iter().filter(|&&y| y == 1).count();
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Fit("labels must be 0 or 1".into()));
        }
        if positives == 0 || positives == n {
            return Err(Error::Fit(
                "training data contains a single class; need both".into(),
            ));
        }

        let (valid_cols, valid_labels) = match valid {
            Some((vc, vl)) => {
                if vl.is_empty() {
                    return Err(Error::Argument(
                        "validation set is empty but early stopping is enabled".into(),
                    ));
                }
                if vc.len() != n_features {
                    return Err(Error::Fit(format!(
                        "validation has {} features, train has {n_features}",
                        vc.len()
                    )));
                }
                (Some(vc), Some(vl))
            }
            None => (None, None),
        };

        let prior = positives as f64 / n as f64;
        let base_score = (prior / (1.0 - prior)).ln();

        // One stable presort per feature, reused by every round and level.
        // Values ride along with row ids so the level scan streams both
        // instead of chasing a random column load per visited row.
        let sorted_cols: Vec<Vec<(f64, u32)>> = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    col[a as usize]
                        .partial_cmp(&col[b as usize])
                        .expect("values are finite")
                });
                idx.into_iter().map(|r| (col[r as usize], r)).collect()
            })
            .collect();
        let all_features: Vec<u32> = (0..n_features as u32).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut margins = vec![base_score; n];
        let mut gh = vec![(0.0f64, 0.0f64); n];
        let mut node_of = vec![u32::MAX; n];
        let mut slot_lookup = vec![u32::MAX; n];

        let mut valid_margins: Vec<f64> = valid_labels.map(|vl| vec![base_score; vl.len()]).unwrap_or_default();
        let patience = hp.n_estimators.div_ceil(10);
        let mut best_loss = valid_labels.map(|vl| logloss_from_margins(vl, &valid_margins));
        let mut best_iteration = 0usize;
        let mut rounds_since_best = 0usize;

        let mut trees: Vec<Tree> = Vec::new();
        let all_rows: Vec<u32> = (0..n as u32).collect();

        for _round in 0..hp.n_estimators {
            // Fixed draw order per round: rows, tree features, then one
            // feature subset per depth level (drawn up front so trees that
            // stop early consume the same amount of randomness).
            let rows = sample_sorted(&mut rng, &all_rows, hp.subsample);
            let tree_feats = sample_sorted(&mut rng, &all_features, hp.colsample_bytree);
            let level_feats: Vec<Vec<u32>> = (0..hp.max_depth)
                .map(|_| sample_sorted(&mut rng, &tree_feats, hp.colsample_bylevel))
                .collect();

            for &r in &rows {
                let r = r as usize;
                gh[r] = grad_hess_logloss(labels[r], margins[r]);
            }

            let tree = grow_tree(
                columns,
                &sorted_cols,
                &rows,
                &gh,
                &level_feats,
                hp,
                &mut node_of,
                &mut slot_lookup,
            )?;

            for (r, m) in margins.iter_mut().enumerate() {
                *m += tree.score_columns(columns, r);
            }

            trees.push(tree);

            if let (Some(vc), Some(vl)) = (valid_cols, valid_labels) {
                let tree = trees.last().expect("just pushed");
                for (r, m) in valid_margins.iter_mut().enumerate() {
                    *m += tree.score_columns(vc, r);
                }
                let loss = logloss_from_margins(vl, &valid_margins);
                if loss < best_loss.expect("validation loss tracked") {
                    best_loss = Some(loss);
                    best_iteration = trees.len();
                    rounds_since_best = 0;
                } else {
                    rounds_since_best += 1;
                    if rounds_since_best >= patience {
                        break;
                    }
                }
            } else {
                best_iteration = trees.len();
            }
        }

        Ok(GbdtModel {
            hyperparameters: hp.clone(),
            n_features,
            base_score,
            best_iteration,
            trees,
        })
    }

    /// Raw margin (log-odds) for one row.
    pub fn predict_margin_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::Inference(format!(
                "row has {} features, model expects {}",
                row.len(),
                self.n_features
            )));
        }
        for (f, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Inference(format!("feature {f} is not finite")));
            }
        }
        let mut margin = self.base_score;
        for tree in &self.trees[..self.best_iteration] {
            margin += tree.score_row(row);
        }
        Ok(margin)
    }

    /// Probability of the positive class for one row.
    pub fn predict_proba_row(&self, row: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.predict_margin_row(row)?))
    }

    /// Probabilities for a column-major matrix.
    pub fn predict_proba_columns(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        if columns.len() != self.n_features {
            return Err(Error::Inference(format!(
                "matrix has {} features, model expects {}",
                columns.len(),
                self.n_features
            )));
        }
        let n = columns.first().map_or(0, |c| c.len());
        for (f, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Inference(format!(
                    "feature {f} has {} rows, expected {n}",
                    col.len()
                )));
            }
            for (r, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Inference(format!(
                        "feature {f} is not finite at row {r}"
                    )));
                }
            }
        }
        let mut out = vec![self.base_score; n];
        for tree in &self.trees[..self.best_iteration] {
            for (r, m) in out.iter_mut().enumerate() {
                *m += tree.score_columns(columns, r);
            }
        }
        Ok(out.into_iter().map(sigmoid).collect())
    }

    /// Per-feature importance from the trees in use; normalized to sum to 1
    /// over features with at least one split (all zeros when no splits).
    pub fn builtin_importance(&self, kind: ImportanceKind) -> Vec<f64> {
        let mut count = vec![0.0f64; self.n_features];
        let mut gain_sum = vec![0.0f64; self.n_features];
        for tree in &self.trees[..self.best_iteration] {
            for node in &tree.nodes {
                if let Node::Split { feature, gain, .. } = node {
                    count[*feature as usize] += 1.0;
                    gain_sum[*feature as usize] += gain;
                }
            }
        }
        let mut scores: Vec<f64> = match kind {
            ImportanceKind::Weight => count,
            ImportanceKind::Gain => gain_sum
                .iter()
                .zip(&count)
                .map(|(&g, &c)| if c > 0.0 { g / c } else { 0.0 })
                .collect(),
        };
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            for s in &mut scores {
                *s /= total;
            }
        }
        scores
    }

    /// Serialize to the documented JSON schema; round-trips exactly.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<GbdtModel> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Grow one tree level-synchronously over the presorted (value, row) arrays.
///
/// Equivalent to recursive per-node [`find_best_split`] growth: each level
/// scans the global presorted order filtered to live rows, so per-node
/// prefix sums accumulate in exactly the order a per-node stable sort would
/// produce, and child gradient totals are summed in ascending row order by
/// the partition pass.
#[allow(clippy::too_many_arguments)]
fn grow_tree(
    columns: &[Vec<f64>],
    sorted_cols: &[Vec<(f64, u32)>],
    rows: &[u32],
    gh: &[(f64, f64)],
    level_feats: &[Vec<u32>],
    hp: &Hyperparameters,
    node_of: &mut [u32],
    slot_lookup: &mut [u32],
) -> Result<Tree> {
    let lr = hp.learning_rate;

    for x in node_of.iter_mut() {
        *x = u32::MAX;
    }
    let mut g_root = 0.0;
    let mut h_root = 0.0;
    for &r in rows {
        node_of[r as usize] = 0;
        let (g, h) = gh[r as usize];
        g_root += g;
        h_root += h;
    }

    let mut nodes: Vec<Node> = vec![Node::Leaf { weight: 0.0 }];
    let mut active: Vec<ActiveNode> = vec![ActiveNode {
        id: 0,
        g: g_root,
        h: h_root,
    }];
    let mut slot_of: Vec<u32> = Vec::new();

    for feats in level_feats.iter() {
        if active.is_empty() {
            break;
        }
        let n_active = active.len();

        slot_of.clear();
        slot_of.resize(nodes.len(), u32::MAX);
        for (slot, a) in active.iter().enumerate() {
            slot_of[a.id as usize] = slot as u32;
        }
        // Pre-resolve row -> slot once per level so the per-feature scan
        // does a single indexed load instead of two chained ones.
        slot_lookup.fill(u32::MAX);
        for &r in rows.iter() {
            let nid = node_of[r as usize];
            if nid != u32::MAX {
                slot_lookup[r as usize] = slot_of[nid as usize];
            }
        }

        // Best candidate per active node: (gain, feature, threshold).
        let mut best: Vec<Option<(f64, u32, f64)>> = vec![None; n_active];
        let mut run_g = vec![0.0f64; n_active];
        let mut run_h = vec![0.0f64; n_active];
        let mut prev = vec![0.0f64; n_active];
        let mut seen = vec![false; n_active];

        for &f in feats {
            run_g.iter_mut().for_each(|x| *x = 0.0);
            run_h.iter_mut().for_each(|x| *x = 0.0);
            seen.iter_mut().for_each(|x| *x = false);

            for &(v, r) in &sorted_cols[f as usize] {
                let slot = slot_lookup[r as usize];
                if slot == u32::MAX {
                    continue;
                }
                let slot = slot as usize;
                if seen[slot] && v != prev[slot] {
                    let a = &active[slot];
                    let h_left = run_h[slot];
                    let h_right = a.h - h_left;
                    if h_left >= hp.min_child_weight && h_right >= hp.min_child_weight {
                        let g_left = run_g[slot];
                        let g_right = a.g - g_left;
                        let gain = 0.5
                            * (structure_score(g_left, h_left, hp.l1_alpha, hp.l2_lambda)
                                + structure_score(g_right, h_right, hp.l1_alpha, hp.l2_lambda)
                                - structure_score(a.g, a.h, hp.l1_alpha, hp.l2_lambda))
                            - hp.split_gamma;
                        if gain > 0.0 && best[slot].map_or(true, |(bg, _, _)| gain > bg) {
                            best[slot] = Some((gain, f, split_threshold(prev[slot], v)));
                        }
                    }
                }
                let (g, h) = gh[r as usize];
                run_g[slot] += g;
                run_h[slot] += h;
                prev[slot] = v;
                seen[slot] = true;
            }
        }

        // Materialize decisions: create children or finalize leaves.
        let mut outcomes: Vec<NodeOutcome> = Vec::with_capacity(n_active);
        let mut child_stats: Vec<(f64, f64, f64, f64)> = vec![(0.0, 0.0, 0.0, 0.0); n_active];
        for (slot, a) in active.iter().enumerate() {
            match best[slot] {
                Some((gain, feature, threshold)) => {
                    let left = nodes.len() as u32;
                    let right = left + 1;
                    nodes[a.id as usize] = Node::Split {
                        feature,
                        threshold,
                        gain,
                        left,
                        right,
                    };
                    nodes.push(Node::Leaf { weight: 0.0 });
                    nodes.push(Node::Leaf { weight: 0.0 });
                    outcomes.push(NodeOutcome::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    });
                }
                None => {
                    nodes[a.id as usize] = Node::Leaf {
                        weight: lr * leaf_weight(a.g, a.h, hp.l1_alpha, hp.l2_lambda)?,
                    };
                    outcomes.push(NodeOutcome::Finalized);
                }
            }
        }

        // Partition pass in ascending row order; child gradient totals are
        // accumulated here so they match a per-node recursive computation.
        for &r in rows {
            let r = r as usize;
            let slot = slot_lookup[r];
            if slot == u32::MAX {
                continue;
            }
            let slot = slot as usize;
            match outcomes[slot] {
                NodeOutcome::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let stats = &mut child_stats[slot];
                    let (g, h) = gh[r];
                    if columns[feature as usize][r] <= threshold {
                        node_of[r] = left;
                        stats.0 += g;
                        stats.1 += h;
                    } else {
                        node_of[r] = right;
                        stats.2 += g;
                        stats.3 += h;
                    }
                }
                NodeOutcome::Finalized => node_of[r] = u32::MAX,
            }
        }

        let mut next_active = Vec::new();
        for (slot, outcome) in outcomes.iter().enumerate() {
            if let NodeOutcome::Split { left, right, .. } = outcome {
                let (gl, hl, gr, hr) = child_stats[slot];
                next_active.push(ActiveNode { id: *left, g: gl, h: hl });
                next_active.push(ActiveNode { id: *right, g: gr, h: hr });
            }
        }
        active = next_active;
    }

    // Depth cap reached: everything still active becomes a leaf.
    for a in &active {
        nodes[a.id as usize] = Node::Leaf {
            weight: lr * leaf_weight(a.g, a.h, hp.l1_alpha, hp.l2_lambda)?,
        };
    }
    for &r in rows {
        node_of[r as usize] = u32::MAX;
    }

    Ok(Tree { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn ratios_one(hp: &mut Hyperparameters) {
        hp.subsample = 1.0;
        hp.colsample_bytree = 1.0;
        hp.colsample_bylevel = 1.0;
    }

    #[test]
    fn grad_hess_at_zero_margin() {
        assert_eq!(grad_hess_logloss(1, 0.0), (-0.5, 0.25));
        assert_eq!(grad_hess_logloss(0, 0.0), (0.5, 0.25));
    }

    #[test]
    fn grad_vanishes_for_confident_correct_prediction() {
        let (g, h) = grad_hess_logloss(1, 40.0);
        assert!(g.abs() < 1e-12, "{g}");
        assert!(h.abs() < 1e-12, "{h}");
    }

    #[test]
    fn leaf_weight_hand_values() {
        assert_eq!(leaf_weight(2.0, 3.0, 0.0, 1.0).unwrap(), -0.5);
        assert_eq!(leaf_weight(2.0, 3.0, 0.5, 1.0).unwrap(), -0.375);
        assert_eq!(leaf_weight(0.3, 3.0, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(leaf_weight(-2.0, 3.0, 0.5, 1.0).unwrap(), 0.375);
        assert!(matches!(
            leaf_weight(1.0, 0.0, 0.0, 0.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn lambda_monotonically_shrinks_leaves() {
        let mut prev = f64::INFINITY;
        for lambda in [0.4, 0.6, 0.8, 1.0, 2.0] {
            let w = leaf_weight(1.7, 2.3, 0.2, lambda).unwrap().abs();
            assert!(w <= prev, "lambda {lambda}: {w} > {prev}");
            prev = w;
        }
    }

    fn xor_data(seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let mut cols = vec![Vec::with_capacity(n); 2];
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x1: f64 = rng.gen();
            let x2: f64 = rng.gen();
            cols[0].push(x1);
            cols[1].push(x2);
            labels.push(u8::from((x1 > 0.5) != (x2 > 0.5)));
        }
        (cols, labels)
    }

    #[test]
    fn symmetric_node_yields_no_split() {
        // Mirror-image halves: G_L = G_R, H_L = H_R → gain exactly 0.
        let columns = vec![vec![0.0, 0.0, 1.0, 1.0]];
        let grad = vec![0.5, -0.5, 0.5, -0.5];
        let hess = vec![0.25; 4];
        let mut hp = Hyperparameters {
            split_gamma: 0.0,
            min_child_weight: 0.0,
            ..Hyperparameters::default()
        };
        ratios_one(&mut hp);
        let best = find_best_split(&columns, &[0, 1, 2, 3], &grad, &hess, &[0], &hp).unwrap();
        assert!(best.is_none(), "{best:?}");
    }

    #[test]
    fn gamma_thresholds_the_split() {
        let columns = vec![vec![0.0, 0.0, 1.0, 1.0]];
        let grad = vec![0.5, 0.5, -0.5, -0.5];
        let hess = vec![0.25; 4];
        let mut hp = Hyperparameters {
            split_gamma: 0.0,
            min_child_weight: 0.0,
            l1_alpha: 0.0,
            l2_lambda: 1.0,
            ..Hyperparameters::default()
        };
        ratios_one(&mut hp);
        let best = find_best_split(&columns, &[0, 1, 2, 3], &grad, &hess, &[0], &hp)
            .unwrap()
            .expect("separating split exists");
        assert_eq!(best.feature, 0);
        assert_eq!(best.threshold, 0.5);
        // gain = ½[1/1.5 + 1/1.5 − 0] = 2/3
        approx(best.gain, 2.0 / 3.0, 1e-12);

        let mut strict = hp.clone();
        strict.split_gamma = 0.7;
        let none = find_best_split(&columns, &[0, 1, 2, 3], &grad, &hess, &[0], &strict).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn min_child_weight_blocks_small_children() {
        let columns = vec![vec![0.0, 1.0, 1.0, 1.0]];
        let grad = vec![0.5, -0.5, -0.5, 0.5];
        let hess = vec![0.25; 4];
        let mut hp = Hyperparameters {
            min_child_weight: 0.3, // left child would carry only 0.25
            split_gamma: 0.0,
            ..Hyperparameters::default()
        };
        ratios_one(&mut hp);
        let best = find_best_split(&columns, &[0, 1, 2, 3], &grad, &hess, &[0], &hp).unwrap();
        assert!(best.is_none());
    }

    #[test]
    fn separable_single_feature_reaches_perfect_train_accuracy() {
        let columns = vec![vec![0.1, 0.2, 0.3, 0.4, 1.1, 1.2, 1.3, 1.4]];
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let mut hp = Hyperparameters {
            n_estimators: 10,
            learning_rate: 0.3,
            max_depth: 2,
            min_child_weight: 0.0,
            ..Hyperparameters::default()
        };
        ratios_one(&mut hp);
        let model = GbdtModel::fit(&columns, &labels, None, &hp, 7).unwrap();
        let probs = model.predict_proba_columns(&columns).unwrap();
        for (p, &y) in probs.iter().zip(&labels) {
            assert_eq!(u8::from(*p >= 0.5), y, "p = {p}");
        }
    }

    #[test]
    fn xor_reaches_high_train_accuracy() {
        let (columns, labels) = xor_data(11);
        let mut hp = Hyperparameters {
            n_estimators: 50,
            learning_rate: 0.2,
            max_depth: 3,
            min_child_weight: 0.6,
            ..Hyperparameters::default()
        };
        ratios_one(&mut hp);
        let model = GbdtModel::fit(&columns, &labels, None, &hp, 3).unwrap();
        let probs = model.predict_proba_columns(&columns).unwrap();
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|(p, &y)| u8::from(**p >= 0.5) == y)
            .count();
        assert!(correct >= 190, "train accuracy {correct}/200");
    }

    #[test]
    fn fit_is_deterministic_with_subsampling() {
        let (columns, labels) = xor_data(5);
        let hp = Hyperparameters {
            n_estimators: 15,
            subsample: 0.7,
            colsample_bytree: 0.8,
            colsample_bylevel: 0.8,
            min_child_weight: 0.6,
            ..Hyperparameters::default()
        };
        let a = GbdtModel::fit(&columns, &labels, None, &hp, 42).unwrap();
        let b = GbdtModel::fit(&columns, &labels, None, &hp, 42).unwrap();
        assert_eq!(a, b);
        let c = GbdtModel::fit(&columns, &labels, None, &hp, 43).unwrap();
        assert_ne!(a, c, "different seeds should subsample differently");
    }

    #[test]
    fn gamma_weakly_decreases_split_count() {
        let (columns, labels) = xor_data(9);
        let mut counts = Vec::new();
        for gamma in [0.0, 0.3, 0.8] {
            let mut hp = Hyperparameters {
                n_estimators: 10,
                split_gamma: gamma,
                min_child_weight: 0.6,
                ..Hyperparameters::default()
            };
            ratios_one(&mut hp);
            let model = GbdtModel::fit(&columns, &labels, None, &hp, 1).unwrap();
            counts.push(model.trees.iter().map(Tree::n_splits).sum::<usize>());
        }
        assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{counts:?}");
    }

    #[test]
    fn early_stopping_respects_patience_and_bounds() {
        let (columns, labels) = xor_data(2);
        let train_cols: Vec<Vec<f64>> = columns.iter().map(|c| c[..150].to_vec()).collect();
        let valid_cols: Vec<Vec<f64>> = columns.iter().map(|c| c[150..].to_vec()).collect();
        let mut hp = Hyperparameters {
            n_estimators: 120,
            learning_rate: 0.3,
            max_depth: 3,
            min_child_weight: 0.6,
            ..Hyperparameters::default()
        };
        ratios_one(&mut hp);
        let model = GbdtModel::fit(
            &train_cols,
            &labels[..150],
            Some((&valid_cols, &labels[150..])),
            &hp,
            4,
        )
        .unwrap();
        assert!(model.best_iteration <= model.trees.len());
        assert!(model.trees.len() <= hp.n_estimators);
        assert!(model.best_iteration > 0);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let hp = Hyperparameters::default();
        let err = GbdtModel::fit(&[vec![1.0, 2.0]], &[1, 1], None, &hp, 0).unwrap_err();
        assert!(matches!(err, Error::Fit(_)), "{err}");
        let err = GbdtModel::fit(&[], &[0, 1], None, &hp, 0).unwrap_err();
        assert!(matches!(err, Error::Fit(_)), "{err}");
        let err = GbdtModel::fit(
            &[vec![1.0, 2.0]],
            &[0, 1],
            Some((&[vec![]], &[])),
            &hp,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Argument(_)), "{err}");
        let err = GbdtModel::fit(&[vec![1.0, f64::NAN]], &[0, 1], None, &hp, 0).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn empty_forest_predicts_the_prior() {
        let model = GbdtModel {
            hyperparameters: Hyperparameters::default(),
            n_features: 2,
            base_score: (0.3f64 / 0.7).ln(),
            best_iteration: 0,
            trees: vec![],
        };
        approx(model.predict_proba_row(&[1.0, 2.0]).unwrap(), 0.3, 1e-12);
    }

    #[test]
    fn predict_rejects_incomplete_rows() {
        let model = GbdtModel {
            hyperparameters: Hyperparameters::default(),
            n_features: 3,
            base_score: 0.0,
            best_iteration: 0,
            trees: vec![],
        };
        assert!(matches!(
            model.predict_margin_row(&[1.0, 2.0]),
            Err(Error::Inference(_))
        ));
        assert!(matches!(
            model.predict_margin_row(&[1.0, 2.0, f64::NAN]),
            Err(Error::Inference(_))
        ));
    }

    fn stump(feature: u32, gain: f64) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold: 0.5,
                    gain,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { weight: -0.4 },
                Node::Leaf { weight: 0.4 },
            ],
        }
    }

    #[test]
    fn importance_counts_and_normalizes() {
        let model = GbdtModel {
            hyperparameters: Hyperparameters::default(),
            n_features: 5,
            base_score: 0.0,
            best_iteration: 4,
            trees: vec![stump(0, 1.0), stump(0, 3.0), stump(0, 2.0), stump(1, 4.0)],
        };
        let weight = model.builtin_importance(ImportanceKind::Weight);
        assert_eq!(weight, vec![0.75, 0.25, 0.0, 0.0, 0.0]);
        // mean gains 2.0 and 4.0 normalize to 1/3, 2/3
        let gain = model.builtin_importance(ImportanceKind::Gain);
        approx(gain[0], 1.0 / 3.0, 1e-12);
        approx(gain[1], 2.0 / 3.0, 1e-12);
        approx(gain.iter().sum::<f64>(), 1.0, 1e-12);

        let single = GbdtModel {
            best_iteration: 1,
            trees: vec![stump(3, 1.0)],
            ..model.clone()
        };
        assert_eq!(
            single.builtin_importance(ImportanceKind::Weight),
            vec![0.0, 0.0, 0.0, 1.0, 0.0]
        );

        let empty = GbdtModel {
            best_iteration: 0,
            trees: vec![],
            ..model
        };
        assert_eq!(empty.builtin_importance(ImportanceKind::Gain), vec![0.0; 5]);
    }

    #[test]
    fn model_roundtrips_through_json() {
        let (columns, labels) = xor_data(21);
        let hp = Hyperparameters {
            n_estimators: 8,
            subsample: 0.9,
            min_child_weight: 0.6,
            ..Hyperparameters::default()
        };
        let model = GbdtModel::fit(&columns, &labels, None, &hp, 17).unwrap();
        let json = model.to_json().unwrap();
        let back = GbdtModel::from_json(&json).unwrap();
        assert_eq!(model, back);
        let p1 = model.predict_proba_columns(&columns).unwrap();
        let p2 = back.predict_proba_columns(&columns).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn depth_never_exceeds_cap() {
        let (columns, labels) = xor_data(33);
        for depth in [1, 2, 3, 4] {
            let mut hp = Hyperparameters {
                n_estimators: 6,
                max_depth: depth,
                min_child_weight: 0.0,
                ..Hyperparameters::default()
            };
            ratios_one(&mut hp);
            let model = GbdtModel::fit(&columns, &labels, None, &hp, 5).unwrap();
            for tree in &model.trees {
                assert!(tree.depth() <= depth, "depth {} > cap {depth}", tree.depth());
            }
        }
    }

    #[test]
    fn search_range_validation_matches_table() {
        assert!(Hyperparameters::default().validate_search_ranges().is_ok());
        let bad = Hyperparameters {
            max_depth: 7,
            ..Hyperparameters::default()
        };
        assert!(bad.validate_search_ranges().is_err());
        let bad = Hyperparameters {
            l2_lambda: 0.2,
            ..Hyperparameters::default()
        };
        assert!(bad.validate_search_ranges().is_err());
        let bad = Hyperparameters {
            n_estimators: 20,
            ..Hyperparameters::default()
        };
        assert!(bad.validate_search_ranges().is_err());
    }
}
