//! Stratified cross-validation, minority oversampling, and the metric suite.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::gbdt::{GbdtModel, Hyperparameters};

const STREAM_RESAMPLE: u64 = 0x7265;
const STREAM_FIT: u64 = 0x6669;

/// Fold index per sample for k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// Validation and training index lists (both ascending) for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut valid = Vec::new();
        let mut train = Vec::new();
        for (i, &f) in self.fold_of.iter().enumerate() {
            if f == fold {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        (valid, train)
    }
}

fn check_binary_labels(labels: &[u8]) -> Result<()> {
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Argument("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Stratified k-fold: samples of each class are shuffled and dealt
/// round-robin, with the dealing cursor carried across classes so fold sizes
/// stay within one sample of each other overall and per class.
///
/// The dealing itself only needs both classes present and enough samples to
/// fill every fold; [`cross_validate`] additionally requires each class to
/// have at least k members so every held-out fold contains both classes.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Argument(format!("k = {k} leaves no held-out data")));
    }
    check_binary_labels(labels)?;
    if labels.len() < k {
        return Err(Error::Stratification(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![usize::MAX; labels.len()];
    let mut cursor = 0usize;
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return Err(Error::Stratification(format!(
                "class {class} has no samples"
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Check that every class can reach every fold: each class needs ≥ k members.
pub(crate) fn check_class_counts_for_cv(labels: &[u8], k: usize) -> Result<()> {
    for class in [0u8, 1u8] {
        let count = labels.iter().filter(|&&y| y == class).count();
        if count < k {
            return Err(Error::Stratification(format!(
                "class {class} has {count} samples, need at least {k}"
            )));
        }
    }
    Ok(())
}

/// Group-aware k-fold: whole groups (e.g. drives) are shuffled and dealt
/// round-robin, so no group straddles a fold boundary.
pub fn grouped_kfold(groups: &[u64], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Argument(format!("k = {k} leaves no held-out data")));
    }
    let mut order: Vec<u64> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    for &g in groups {
        if seen.insert(g) {
            order.push(g);
        }
    }
    if order.len() < k {
        return Err(Error::Stratification(format!(
            "{} groups cannot fill {k} folds",
            order.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let fold_of_group: HashMap<u64, usize> = order
        .into_iter()
        .enumerate()
        .map(|(i, g)| (g, i % k))
        .collect();
    Ok(FoldAssignment {
        k,
        fold_of: groups.iter().map(|g| fold_of_group[g]).collect(),
    })
}

/// Randomly re-draw minority-class training indices (with replacement) until
/// the classes balance. The original indices are always retained, in order,
/// with the duplicates appended.
pub fn oversample_minority(train_indices: &[usize], labels: &[u8], seed: u64) -> Result<Vec<usize>> {
    check_binary_labels(labels)?;
    let positives: Vec<usize> = train_indices.iter().copied().filter(|&i| labels[i] == 1).collect();
    let negatives: Vec<usize> = train_indices.iter().copied().filter(|&i| labels[i] == 0).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Resampling(
            "training set contains a single class; need both".into(),
        ));
    }
    let mut out = train_indices.to_vec();
    let (pool, deficit) = if positives.len() < negatives.len() {
        (&positives, negatives.len() - positives.len())
    } else {
        (&negatives, positives.len() - negatives.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..deficit {
        out.push(pool[rng.gen_range(0..pool.len())]);
    }
    Ok(out)
}

const PROB_CLIP: f64 = 1e-15;

/// Mean negative log-likelihood with probabilities clipped to
/// [1e−15, 1−1e−15].
pub fn log_loss(labels: &[u8], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() {
        return Err(Error::Argument(format!(
            "{} labels vs {} probabilities",
            labels.len(),
            probs.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("log loss of an empty set".into()));
    }
    check_binary_labels(labels)?;
    let mut total = 0.0;
    for (&y, &p) in labels.iter().zip(probs) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
        }
        let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / labels.len() as f64)
}

/// Area under the ROC curve via the midrank statistic: the probability that
/// a random positive outranks a random negative, ties counted ½.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Argument(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    check_binary_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(
            "ROC AUC needs both classes in the evaluation set".into(),
        ));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN scores"));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; every member of a tie group takes the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: Σ (R_n − R_{n−1}) · P_n over thresholds at each
/// distinct score, descending.
pub fn auprc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Argument(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    check_binary_labels(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(Error::Metric("AUPRC needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN scores"));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Thresholded-prediction summary for one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Per-class precision, indexed by class.
    pub precision: [f64; 2],
    /// Per-class recall, indexed by class.
    pub recall: [f64; 2],
    /// True-instance count per class.
    pub support: [usize; 2],
    /// Set when a class had no predicted members (precision reported as 0).
    pub precision_undefined: [bool; 2],
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
}

/// Confusion-matrix metrics at fixed predictions. Undefined precision (no
/// predicted members of a class) is reported as 0 with a flag; macro means
/// weight classes equally, weighted means weight by true-instance support.
pub fn classification_report(labels: &[u8], predictions: &[u8]) -> Result<ClassificationReport> {
    if labels.len() != predictions.len() {
        return Err(Error::Argument(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("classification report of an empty set".into()));
    }
    check_binary_labels(labels)?;
    check_binary_labels(predictions)?;

    // confusion[t][p]: true class t predicted as p
    let mut confusion = [[0usize; 2]; 2];
    for (&y, &p) in labels.iter().zip(predictions) {
        confusion[y as usize][p as usize] += 1;
    }
    let support = [confusion[0][0] + confusion[0][1], confusion[1][0] + confusion[1][1]];
    let predicted = [confusion[0][0] + confusion[1][0], confusion[0][1] + confusion[1][1]];
    let n = labels.len() as f64;

    let mut precision = [0.0; 2];
    let mut recall = [0.0; 2];
    let mut precision_undefined = [false; 2];
    for c in 0..2 {
        let tp = confusion[c][c];
        if predicted[c] == 0 {
            precision_undefined[c] = true;
        } else {
            precision[c] = tp as f64 / predicted[c] as f64;
        }
        if support[c] > 0 {
            recall[c] = tp as f64 / support[c] as f64;
        }
    }
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / n;
    Ok(ClassificationReport {
        accuracy,
        precision,
        recall,
        support,
        precision_undefined,
        precision_macro: (precision[0] + precision[1]) / 2.0,
        recall_macro: (recall[0] + recall[1]) / 2.0,
        precision_weighted: (support[0] as f64 * precision[0] + support[1] as f64 * precision[1]) / n,
        recall_weighted: (support[0] as f64 * recall[0] + support[1] as f64 * recall[1]) / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub log_loss: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub auprc: f64,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
}

/// Mean and sample standard deviation over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: f64,
    pub sd: f64,
}

fn aggregate_over_folds(values: impl Iterator<Item = f64> + Clone) -> MetricAggregate {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    MetricAggregate {
        mean,
        sd: (ss / (n - 1.0)).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAggregates {
    pub log_loss: MetricAggregate,
    pub accuracy: MetricAggregate,
    pub auc: MetricAggregate,
    pub auprc: MetricAggregate,
    pub precision_class0: MetricAggregate,
    pub precision_class1: MetricAggregate,
    pub recall_class0: MetricAggregate,
    pub recall_class1: MetricAggregate,
    pub precision_macro: MetricAggregate,
    pub recall_macro: MetricAggregate,
    pub precision_weighted: MetricAggregate,
    pub recall_weighted: MetricAggregate,
}

/// Cross-validation outcome: one row per fold plus aggregates and the
/// leakage audit counter (oversampled duplicate indices found in validation
/// folds — always 0 unless the fold bookkeeping is broken).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldMetrics>,
    pub aggregates: CvAggregates,
    pub resample_duplicates_in_valid: usize,
}

fn gather(columns: &[Vec<f64>], rows: &[usize]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .map(|col| rows.iter().map(|&r| col[r]).collect())
        .collect()
}

fn gather_labels(labels: &[u8], rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&r| labels[r]).collect()
}

/// Evaluate one hyperparameter configuration over a precomputed fold
/// assignment, returning the report plus the per-fold models (needed by
/// feature elimination for held-out permutation importance).
pub fn cross_validate_assigned(
    columns: &[Vec<f64>],
    labels: &[u8],
    folds: &FoldAssignment,
    hp: &Hyperparameters,
    seed: u64,
    resample: bool,
) -> Result<(CvReport, Vec<GbdtModel>)> {
    let mut fold_rows = Vec::with_capacity(folds.k);
    let mut models = Vec::with_capacity(folds.k);
    let mut duplicates_in_valid = 0usize;

    for fold in 0..folds.k {
        let (valid_idx, train_idx) = folds.split(fold);
        let annotate = |e: Error| Error::Fold {
            fold,
            source: Box::new(e),
        };
        if valid_idx.is_empty() || train_idx.is_empty() {
            return Err(annotate(Error::Stratification("empty fold".into())));
        }

        let train_use = if resample {
            let augmented = oversample_minority(
                &train_idx,
                labels,
                derive_seed(seed, STREAM_RESAMPLE, fold as u64),
            )
            .map_err(annotate)?;
            let valid_set: HashSet<usize> = valid_idx.iter().copied().collect();
            duplicates_in_valid += augmented[train_idx.len()..]
                .iter()
                .filter(|i| valid_set.contains(i))
                .count();
            augmented
        } else {
            train_idx
        };

        let train_cols = gather(columns, &train_use);
        let train_labels = gather_labels(labels, &train_use);
        let valid_cols = gather(columns, &valid_idx);
        let valid_labels = gather_labels(labels, &valid_idx);

        let model = GbdtModel::fit(
            &train_cols,
            &train_labels,
            Some((&valid_cols, &valid_labels)),
            hp,
            derive_seed(seed, STREAM_FIT, fold as u64),
        )
        .map_err(annotate)?;

        let probs = model.predict_proba_columns(&valid_cols).map_err(annotate)?;
        let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();

        let report = classification_report(&valid_labels, &preds).map_err(annotate)?;
        fold_rows.push(FoldMetrics {
            fold,
            log_loss: log_loss(&valid_labels, &probs).map_err(annotate)?,
            accuracy: report.accuracy,
            auc: roc_auc(&valid_labels, &probs).map_err(annotate)?,
            auprc: auprc(&valid_labels, &probs).map_err(annotate)?,
            precision: report.precision,
            recall: report.recall,
            precision_macro: report.precision_macro,
            recall_macro: report.recall_macro,
            precision_weighted: report.precision_weighted,
            recall_weighted: report.recall_weighted,
        });
        models.push(model);
    }

    let agg = |f: fn(&FoldMetrics) -> f64| aggregate_over_folds(fold_rows.iter().map(f));
    let aggregates = CvAggregates {
        log_loss: agg(|m| m.log_loss),
        accuracy: agg(|m| m.accuracy),
        auc: agg(|m| m.auc),
        auprc: agg(|m| m.auprc),
        precision_class0: agg(|m| m.precision[0]),
        precision_class1: agg(|m| m.precision[1]),
        recall_class0: agg(|m| m.recall[0]),
        recall_class1: agg(|m| m.recall[1]),
        precision_macro: agg(|m| m.precision_macro),
        recall_macro: agg(|m| m.recall_macro),
        precision_weighted: agg(|m| m.precision_weighted),
        recall_weighted: agg(|m| m.recall_weighted),
    };
    Ok((
        CvReport {
            k: folds.k,
            folds: fold_rows,
            aggregates,
            resample_duplicates_in_valid: duplicates_in_valid,
        },
        models,
    ))
}

/// Stratified k-fold cross-validation of one configuration. Each fold's
/// held-out part doubles as the early-stopping validation set, and training
/// folds are optionally oversampled to class parity.
pub fn cross_validate(
    columns: &[Vec<f64>],
    labels: &[u8],
    hp: &Hyperparameters,
    k: usize,
    seed: u64,
    resample: bool,
) -> Result<CvReport> {
    check_class_counts_for_cv(labels, k)?;
    let folds = stratified_kfold(labels, k, seed)?;
    cross_validate_assigned(columns, labels, &folds, hp, seed, resample).map(|(r, _)| r)
}

/// Like [`cross_validate`] but with whole groups (drives) kept inside single
/// folds.
pub fn cross_validate_grouped(
    columns: &[Vec<f64>],
    labels: &[u8],
    groups: &[u64],
    hp: &Hyperparameters,
    k: usize,
    seed: u64,
    resample: bool,
) -> Result<CvReport> {
    let folds = grouped_kfold(groups, k, seed)?;
    cross_validate_assigned(columns, labels, &folds, hp, seed, resample).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn stratified_folds_match_worked_example() {
        // 10 samples, 3 positives, k=5: every fold gets 2 samples and the
        // positive counts per fold are {1,1,1,0,0} in some order.
        let labels = [0, 0, 1, 0, 0, 1, 0, 0, 1, 0];
        let folds = stratified_kfold(&labels, 5, 99).unwrap();
        let mut sizes = [0usize; 5];
        let mut positives = [0usize; 5];
        for (i, &f) in folds.fold_of.iter().enumerate() {
            sizes[f] += 1;
            if labels[i] == 1 {
                positives[f] += 1;
            }
        }
        assert_eq!(sizes, [2; 5]);
        let mut sorted = positives;
        sorted.sort_unstable();
        assert_eq!(sorted, [0, 0, 1, 1, 1]);
    }

    #[test]
    fn stratified_folds_divisible_case() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 2 == 0)).collect();
        let folds = stratified_kfold(&labels, 10, 3).unwrap();
        for fold in 0..10 {
            let (valid, _) = folds.split(fold);
            assert_eq!(valid.len(), 10);
            assert_eq!(valid.iter().filter(|&&i| labels[i] == 1).count(), 5);
        }
    }

    #[test]
    fn stratified_rejects_degenerate_inputs() {
        let labels = [0, 1, 0, 1];
        assert!(matches!(
            stratified_kfold(&labels, 1, 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            stratified_kfold(&labels, 5, 0),
            Err(Error::Stratification(_))
        ));
        let all_neg = [0, 0, 0, 0];
        let err = stratified_kfold(&all_neg, 2, 0).unwrap_err();
        match err {
            Error::Stratification(msg) => assert!(msg.contains("class 1"), "{msg}"),
            other => panic!("expected stratification error, got {other}"),
        }
    }

    #[test]
    fn cross_validation_requires_k_members_per_class() {
        // 3 positives cannot reach all 5 folds, so the CV protocol rejects it
        // even though the dealing itself is well-defined.
        let labels = [0, 0, 1, 0, 0, 1, 0, 0, 1, 0];
        let cols = vec![(0..10).map(|i| i as f64).collect::<Vec<f64>>()];
        let err =
            cross_validate(&cols, &labels, &Hyperparameters::default(), 5, 0, false).unwrap_err();
        match err {
            Error::Stratification(msg) => assert!(msg.contains("class 1"), "{msg}"),
            other => panic!("expected stratification error, got {other}"),
        }
    }

    #[test]
    fn grouped_folds_keep_groups_whole() {
        let groups: Vec<u64> = (0..60).map(|i| (i / 10) as u64).collect();
        let folds = grouped_kfold(&groups, 3, 7).unwrap();
        for g in 0..6u64 {
            let fold_set: HashSet<usize> = groups
                .iter()
                .zip(&folds.fold_of)
                .filter(|(gg, _)| **gg == g)
                .map(|(_, &f)| f)
                .collect();
            assert_eq!(fold_set.len(), 1, "group {g} straddles folds");
        }
        assert!(matches!(
            grouped_kfold(&groups, 7, 0),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn oversampling_reaches_parity_and_retains_originals() {
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        let train: Vec<usize> = (0..10).collect();
        let out = oversample_minority(&train, &labels, 5).unwrap();
        assert_eq!(out[..10], train[..]);
        assert_eq!(out.len(), 16);
        assert_eq!(out.iter().filter(|&&i| labels[i] == 1).count(), 8);
        assert!(out[10..].iter().all(|&i| labels[i] == 1));
    }

    #[test]
    fn oversampling_identity_when_balanced() {
        let labels = [0, 1, 0, 1];
        let train = vec![0, 1, 2, 3];
        assert_eq!(oversample_minority(&train, &labels, 0).unwrap(), train);
    }

    #[test]
    fn oversampling_rejects_single_class() {
        let labels = [0, 0, 0];
        assert!(matches!(
            oversample_minority(&[0, 1, 2], &labels, 0),
            Err(Error::Resampling(_))
        ));
    }

    #[test]
    fn log_loss_hand_values() {
        approx(
            log_loss(&[1, 0], &[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            1e-15,
        );
        assert!(log_loss(&[1, 0], &[1.0, 0.0]).unwrap() <= 1e-14);
        approx(log_loss(&[0], &[1.0]).unwrap(), -(1e-15f64.ln()), 1e-3);
        assert!(matches!(
            log_loss(&[1], &[0.5, 0.5]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(log_loss(&[1], &[1.2]), Err(Error::Argument(_))));
    }

    #[test]
    fn log_loss_minimized_at_prevalence_for_constant_predictors() {
        let labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let at = |p: f64| log_loss(&labels, &vec![p; 10]).unwrap();
        let best = at(0.3);
        for p in [0.05, 0.1, 0.2, 0.25, 0.35, 0.5, 0.7, 0.9] {
            assert!(at(p) > best, "constant {p} beat the prevalence");
        }
    }

    #[test]
    fn roc_auc_hand_values() {
        assert_eq!(
            roc_auc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap(),
            0.75
        );
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0, 1, 0, 1], &[0.5, 0.5, 0.5, 0.5]).unwrap(), 0.5);
        assert!(matches!(
            roc_auc(&[1, 1], &[0.1, 0.2]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn roc_auc_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let labels: Vec<u8> = (0..50).map(|_| rng.gen_range(0..2) as u8).collect();
        let scores: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let base = roc_auc(&labels, &scores).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (5.0 * s).tanh()).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
        approx(roc_auc(&labels, &squashed).unwrap(), base, 1e-12);
        approx(roc_auc(&labels, &shifted).unwrap(), base, 1e-12);
    }

    #[test]
    fn auprc_hand_values() {
        assert_eq!(auprc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auprc(&[1, 0], &[0.2, 0.9]).unwrap(), 0.5);
        // all scores equal → single threshold admits everything
        approx(auprc(&[1, 0, 0, 0], &[0.4; 4]).unwrap(), 0.25, 1e-15);
        assert!(matches!(auprc(&[0, 0], &[0.1, 0.2]), Err(Error::Metric(_))));
    }

    #[test]
    fn classification_report_hand_values() {
        let rep = classification_report(&[1, 0, 1], &[1, 0, 0]).unwrap();
        approx(rep.accuracy, 2.0 / 3.0, 1e-15);
        assert_eq!(rep.recall[1], 0.5);
        assert_eq!(rep.precision[1], 1.0);
        assert_eq!(rep.support, [1, 2]);
        assert!(!rep.precision_undefined[0] && !rep.precision_undefined[1]);

        let perfect = classification_report(&[0, 1, 1], &[0, 1, 1]).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert_eq!(perfect.precision, [1.0, 1.0]);
        assert_eq!(perfect.recall, [1.0, 1.0]);
        assert_eq!(perfect.precision_macro, 1.0);
        assert_eq!(perfect.recall_weighted, 1.0);
    }

    #[test]
    fn undefined_precision_is_flagged_not_skipped() {
        // nothing predicted positive
        let rep = classification_report(&[1, 0, 1], &[0, 0, 0]).unwrap();
        assert_eq!(rep.precision[1], 0.0);
        assert!(rep.precision_undefined[1]);
        assert!(!rep.precision_undefined[0]);
    }

    #[test]
    fn weighted_recall_equals_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(2..30);
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let preds: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let rep = classification_report(&labels, &preds).unwrap();
            approx(rep.recall_weighted, rep.accuracy, 1e-12);
        }
    }

    fn separable_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = vec![Vec::with_capacity(n); 3];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = u8::from(i % 3 == 0);
            let signal: f64 = if y == 1 { rng.gen::<f64>() + 0.8 } else { rng.gen() };
            cols[0].push(signal);
            cols[1].push(rng.gen());
            cols[2].push(rng.gen());
            labels.push(y);
        }
        (cols, labels)
    }

    #[test]
    fn cross_validation_structure_and_determinism() {
        let (cols, labels) = separable_data(90, 8);
        let hp = Hyperparameters {
            n_estimators: 20,
            min_child_weight: 0.6,
            ..Hyperparameters::default()
        };
        let a = cross_validate(&cols, &labels, &hp, 3, 11, true).unwrap();
        assert_eq!(a.folds.len(), 3);
        assert_eq!(a.resample_duplicates_in_valid, 0);
        assert!(a.aggregates.accuracy.mean > 0.7, "{}", a.aggregates.accuracy.mean);
        for m in &a.folds {
            for rate in [m.accuracy, m.auc, m.auprc, m.precision_macro, m.recall_weighted] {
                assert!((0.0..=1.0).contains(&rate), "{rate}");
            }
        }
        let b = cross_validate(&cols, &labels, &hp, 3, 11, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fold_errors_carry_the_fold_index() {
        // Fold 0's training part keeps one positive, but validation of some
        // fold will have probabilities fine — instead force failure via
        // single-class training by using labels where one class has exactly
        // k members, all landing in distinct folds... simplest trigger:
        // resampling on a training set reduced to one class is impossible
        // only if a fold absorbs every positive, which stratification
        // prevents. Use an out-of-range hyperparameter instead.
        let (cols, labels) = separable_data(30, 2);
        let hp = Hyperparameters {
            learning_rate: -1.0,
            ..Hyperparameters::default()
        };
        let err = cross_validate(&cols, &labels, &hp, 3, 0, false).unwrap_err();
        match err {
            Error::Fold { fold, .. } => assert_eq!(fold, 0),
            other => panic!("expected fold annotation, got {other}"),
        }
    }

    #[test]
    fn cv_report_roundtrips_through_json() {
        let (cols, labels) = separable_data(60, 5);
        let hp = Hyperparameters {
            n_estimators: 10,
            min_child_weight: 0.6,
            ..Hyperparameters::default()
        };
        let report = cross_validate(&cols, &labels, &hp, 3, 1, true).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: CvReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }
}
