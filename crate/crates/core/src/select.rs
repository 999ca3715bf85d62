//! Permutation importance and recursive feature elimination.
//!
//! Elimination retrains under cross-validation at every subset size, scores
//! features by fold-averaged permutation importance on the held-out folds,
//! and drops the least important feature until one survives. The curve of
//! accuracy against subset size feeds a one-standard-error subset pick.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::eval::{check_class_counts_for_cv, cross_validate_assigned, grouped_kfold, stratified_kfold};
use crate::gbdt::{GbdtModel, Hyperparameters};

const STREAM_SHUFFLE: u64 = 0x7368;
const STREAM_RFE: u64 = 0x7266;

/// Shuffle repetitions used when scoring features for elimination.
pub const ELIMINATION_REPS: usize = 5;

/// How an importance vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Permutation,
    Weight,
    Gain,
}

/// Per-feature importance scores, aligned with the model's feature order.
/// Permutation scores are accuracy drops and may be negative; weight and
/// gain scores come normalized from the booster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub method: ImportanceMethod,
    pub scores: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
}

fn accuracy(model: &GbdtModel, columns: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    let probs = model.predict_proba_columns(columns)?;
    if probs.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| u8::from(**p >= 0.5) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Mean validation-accuracy drop over `reps` independent within-column
/// shuffles, per feature. A feature the model never consults (or whose
/// column is constant) scores exactly zero.
pub fn permutation_importance(
    model: &GbdtModel,
    valid_columns: &[Vec<f64>],
    valid_labels: &[u8],
    reps: usize,
    seed: u64,
) -> Result<ImportanceScores> {
    if valid_labels.is_empty() {
        return Err(Error::Argument("validation set is empty".into()));
    }
    if reps == 0 {
        return Err(Error::Argument("reps must be at least 1".into()));
    }
    let baseline = accuracy(model, valid_columns, valid_labels)?;
    let mut working = valid_columns.to_vec();
    let mut scores = Vec::with_capacity(valid_columns.len());
    for feature in 0..valid_columns.len() {
        let mut drop_sum = 0.0;
        for rep in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                STREAM_SHUFFLE,
                (feature * reps + rep) as u64,
            ));
            working[feature].shuffle(&mut rng);
            drop_sum += baseline - accuracy(model, &working, valid_labels)?;
            working[feature].copy_from_slice(&valid_columns[feature]);
        }
        scores.push(drop_sum / reps as f64);
    }
    Ok(ImportanceScores {
        method: ImportanceMethod::Permutation,
        scores,
        repetitions: reps,
        seed,
    })
}

/// One point of the accuracy-vs-subset-size curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
}

/// Full elimination record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RfeResult {
    /// Original feature indices in removal order (first removed first).
    pub elimination_order: Vec<usize>,
    /// One point per subset size, from the full set down to one feature.
    pub curve: Vec<CurvePoint>,
    /// Features from most to least important: the survivor first, then the
    /// eliminated features in reverse removal order.
    pub ranking: Vec<usize>,
    /// Prefix of `ranking` picked by the one-standard-error rule.
    pub selected: Vec<usize>,
}

struct RfeStep {
    point: CurvePoint,
    importance: Vec<f64>,
}

fn rfe_step(
    columns: &[Vec<f64>],
    labels: &[u8],
    groups: Option<&[u64]>,
    hp: &Hyperparameters,
    k: usize,
    resample: bool,
    active: &[usize],
    cv_seed: u64,
) -> Result<RfeStep> {
    let sub: Vec<Vec<f64>> = active.iter().map(|&f| columns[f].clone()).collect();
    let folds = match groups {
        Some(groups) => grouped_kfold(groups, k, cv_seed)?,
        None => {
            check_class_counts_for_cv(labels, k)?;
            stratified_kfold(labels, k, cv_seed)?
        }
    };
    let (report, models) = cross_validate_assigned(&sub, labels, &folds, hp, cv_seed, resample)?;
    let mut importance = vec![0.0; active.len()];
    if active.len() > 1 {
        for (fold, model) in models.iter().enumerate() {
            let (valid_idx, _) = folds.split(fold);
            let valid_cols: Vec<Vec<f64>> = sub
                .iter()
                .map(|col| valid_idx.iter().map(|&i| col[i]).collect())
                .collect();
            let valid_labels: Vec<u8> = valid_idx.iter().map(|&i| labels[i]).collect();
            let imp = permutation_importance(
                model,
                &valid_cols,
                &valid_labels,
                ELIMINATION_REPS,
                derive_seed(cv_seed, STREAM_SHUFFLE, fold as u64),
            )?;
            for (total, s) in importance.iter_mut().zip(&imp.scores) {
                *total += s;
            }
        }
        for total in &mut importance {
            *total /= models.len() as f64;
        }
    }
    Ok(RfeStep {
        point: CurvePoint {
            size: active.len(),
            mean_accuracy: report.aggregates.accuracy.mean,
            sd_accuracy: report.aggregates.accuracy.sd,
        },
        importance,
    })
}

/// Recursive feature elimination under k-fold cross-validation.
///
/// Folds are stratified by class, or keep whole groups together when
/// `groups` is given. Feature-subsampling ratios are pinned to 1.0 for the
/// elimination runs so the order is free of column-sampling randomness; the
/// caller's other hyperparameters pass through unchanged. Errors are
/// annotated with the subset size at which they occurred.
pub fn rfe(
    columns: &[Vec<f64>],
    labels: &[u8],
    groups: Option<&[u64]>,
    hp: &Hyperparameters,
    k: usize,
    seed: u64,
    resample: bool,
) -> Result<RfeResult> {
    if columns.len() < 2 {
        return Err(Error::Argument(
            "elimination needs at least 2 features".into(),
        ));
    }
    let hp = Hyperparameters {
        colsample_bytree: 1.0,
        colsample_bylevel: 1.0,
        ..hp.clone()
    };
    let mut active: Vec<usize> = (0..columns.len()).collect();
    let mut elimination_order = Vec::new();
    let mut curve = Vec::new();
    for iteration in 0.. {
        let size = active.len();
        let cv_seed = derive_seed(seed, STREAM_RFE, iteration);
        let step =
            rfe_step(columns, labels, groups, &hp, k, resample, &active, cv_seed).map_err(|e| {
                Error::Elimination {
                    subset_size: size,
                    source: Box::new(e),
                }
            })?;
        curve.push(step.point);
        if size == 1 {
            break;
        }
        // least important goes; ties fall to the higher original index
        let mut worst = 0;
        for j in 1..size {
            if step.importance[j] <= step.importance[worst] {
                worst = j;
            }
        }
        elimination_order.push(active.remove(worst));
    }
    let mut ranking = vec![active[0]];
    ranking.extend(elimination_order.iter().rev());
    let selected_size = select_subset(&curve)?;
    let selected = ranking[..selected_size].to_vec();
    Ok(RfeResult {
        elimination_order,
        curve,
        ranking,
        selected,
    })
}

/// One-standard-error rule: the smallest size whose mean accuracy is within
/// one standard deviation of the best point's mean.
pub fn select_subset(curve: &[CurvePoint]) -> Result<usize> {
    let Some(first) = curve.first() else {
        return Err(Error::Argument("empty curve".into()));
    };
    let mut best = first;
    for point in &curve[1..] {
        if point.mean_accuracy > best.mean_accuracy {
            best = point;
        }
    }
    let threshold = best.mean_accuracy - best.sd_accuracy;
    let mut pick = best.size;
    for point in curve {
        if point.mean_accuracy >= threshold && point.size < pick {
            pick = point.size;
        }
    }
    Ok(pick)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn stump_hp(n_estimators: usize) -> Hyperparameters {
        Hyperparameters {
            n_estimators,
            max_depth: 1,
            learning_rate: 0.5,
            subsample: 1.0,
            colsample_bytree: 1.0,
            colsample_bylevel: 1.0,
            ..Hyperparameters::default()
        }
    }

    /// One separating feature, one constant, one pure noise.
    fn three_column_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut signal = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n);
        for i in 0..n {
            let y = (i % 2) as u8;
            let x: f64 = rng.gen_range(0.0..1.0);
            signal.push(if y == 1 { x + 2.0 } else { x });
            noise.push(rng.gen_range(0.0..1.0));
            labels.push(y);
        }
        (vec![signal, vec![0.5; n], noise], labels)
    }

    #[test]
    fn permutation_importance_is_zero_for_constant_and_unused_features() {
        let (columns, labels) = three_column_data(80, 1);
        let model = GbdtModel::fit(&columns, &labels, None, &stump_hp(3), 7).unwrap();
        // depth-1 stumps on separable data only ever split the signal column
        let weight = model.builtin_importance(crate::gbdt::ImportanceKind::Weight);
        assert_eq!(weight[1], 0.0);
        assert_eq!(weight[2], 0.0);
        let imp = permutation_importance(&model, &columns, &labels, 10, 3).unwrap();
        assert!(imp.scores[0] > 0.2, "signal importance {}", imp.scores[0]);
        assert_eq!(imp.scores[1], 0.0);
        assert_eq!(imp.scores[2], 0.0);
        assert_eq!(imp.method, ImportanceMethod::Permutation);
        assert_eq!(imp.repetitions, 10);
    }

    #[test]
    fn permutation_importance_of_perfect_separator_is_near_half() {
        let (columns, labels) = three_column_data(200, 2);
        let model = GbdtModel::fit(&columns, &labels, None, &stump_hp(5), 7).unwrap();
        assert_eq!(accuracy(&model, &columns, &labels).unwrap(), 1.0);
        let imp = permutation_importance(&model, &columns, &labels, 20, 11).unwrap();
        // shuffling the only informative column drops balanced accuracy to chance
        assert!(
            (imp.scores[0] - 0.5).abs() < 0.08,
            "importance {}",
            imp.scores[0]
        );
    }

    #[test]
    fn permutation_importance_rejects_degenerate_inputs() {
        let (columns, labels) = three_column_data(40, 3);
        let model = GbdtModel::fit(&columns, &labels, None, &stump_hp(2), 7).unwrap();
        let empty: Vec<Vec<f64>> = vec![Vec::new(); 3];
        assert!(matches!(
            permutation_importance(&model, &empty, &[], 5, 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            permutation_importance(&model, &columns, &labels, 0, 0),
            Err(Error::Argument(_))
        ));
    }

    /// Two informative columns (jointly separating), the rest noise.
    fn planted_data(n: usize, n_noise: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let y = (i % 2) as u8;
            labels.push(y);
            let shift = if y == 1 { 1.5 } else { 0.0 };
            a.push(rng.gen_range(0.0..1.0) + shift);
            b.push(rng.gen_range(0.0..1.0) + shift);
        }
        let mut columns = vec![a, b];
        for _ in 0..n_noise {
            columns.push((0..n).map(|_| rng.gen_range(0.0..1.0)).collect());
        }
        (columns, labels)
    }

    fn small_hp() -> Hyperparameters {
        Hyperparameters {
            n_estimators: 20,
            max_depth: 3,
            learning_rate: 0.3,
            subsample: 1.0,
            ..Hyperparameters::default()
        }
    }

    #[test]
    fn rfe_walks_every_size_and_is_deterministic() {
        let (columns, labels) = planted_data(120, 4, 5);
        let result = rfe(&columns, &labels, None, &small_hp(), 4, 9, false).unwrap();
        let sizes: Vec<usize> = result.curve.iter().map(|p| p.size).collect();
        assert_eq!(sizes, vec![6, 5, 4, 3, 2, 1]);
        assert_eq!(result.elimination_order.len(), 5);
        assert_eq!(result.ranking.len(), 6);
        let mut sorted = result.ranking.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(
            result.selected,
            result.ranking[..result.selected.len()].to_vec()
        );
        let again = rfe(&columns, &labels, None, &small_hp(), 4, 9, false).unwrap();
        assert_eq!(again.elimination_order, result.elimination_order);
        assert_eq!(again.curve, result.curve);
    }

    #[test]
    fn rfe_keeps_planted_signal_features_longest() {
        let (columns, labels) = planted_data(160, 6, 8);
        let result = rfe(&columns, &labels, None, &small_hp(), 4, 13, false).unwrap();
        let mut top2 = result.ranking[..2].to_vec();
        top2.sort_unstable();
        assert_eq!(top2, vec![0, 1], "ranking {:?}", result.ranking);
    }

    #[test]
    fn rfe_ignores_caller_column_subsampling() {
        // feature-subsampling ratios are pinned to 1.0 internally, so wildly
        // different caller values must not change the outcome
        let (columns, labels) = planted_data(100, 3, 21);
        let loose = Hyperparameters {
            colsample_bytree: 0.6,
            colsample_bylevel: 0.6,
            ..small_hp()
        };
        let tight = Hyperparameters {
            colsample_bytree: 0.95,
            colsample_bylevel: 0.95,
            ..small_hp()
        };
        let a = rfe(&columns, &labels, None, &loose, 4, 2, false).unwrap();
        let b = rfe(&columns, &labels, None, &tight, 4, 2, false).unwrap();
        assert_eq!(a.elimination_order, b.elimination_order);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn rfe_errors_carry_the_subset_size() {
        let (columns, _) = planted_data(20, 2, 30);
        // three positives cannot stratify into five folds
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 3)).collect();
        let err = rfe(&columns, &labels, None, &small_hp(), 5, 0, false).unwrap_err();
        match err {
            Error::Elimination { subset_size, source } => {
                assert_eq!(subset_size, 4);
                assert!(matches!(*source, Error::Stratification(_)));
            }
            other => panic!("expected elimination error, got {other}"),
        }
        let single = vec![vec![0.0; 10]];
        let labels = vec![0u8; 10];
        assert!(matches!(
            rfe(&single, &labels, None, &small_hp(), 2, 0, false),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn one_se_rule_matches_hand_cases() {
        let point = |size, mean, sd| CurvePoint {
            size,
            mean_accuracy: mean,
            sd_accuracy: sd,
        };
        // strictly decreasing toward smaller sizes, sd 0: only the best survives
        let increasing = vec![point(3, 0.95, 0.0), point(2, 0.90, 0.0), point(1, 0.85, 0.0)];
        assert_eq!(select_subset(&increasing).unwrap(), 3);
        // flat with sd 0: everything ties, take the smallest
        let flat = vec![point(3, 0.9, 0.0), point(2, 0.9, 0.0), point(1, 0.9, 0.0)];
        assert_eq!(select_subset(&flat).unwrap(), 1);
        let hand = vec![point(3, 0.90, 0.02), point(5, 0.91, 0.02), point(19, 0.915, 0.02)];
        assert_eq!(select_subset(&hand).unwrap(), 3);
        assert!(select_subset(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn one_se_pick_is_valid_and_minimal(
            means in proptest::collection::vec(0.5f64..1.0, 1..12),
            sd in 0.0f64..0.1,
        ) {
            let curve: Vec<CurvePoint> = means
                .iter()
                .enumerate()
                .map(|(i, &m)| CurvePoint {
                    size: means.len() - i,
                    mean_accuracy: m,
                    sd_accuracy: sd,
                })
                .collect();
            let pick = select_subset(&curve).unwrap();
            let best = curve
                .iter()
                .map(|p| p.mean_accuracy)
                .fold(f64::NEG_INFINITY, f64::max);
            let threshold = best - sd;
            let picked = curve.iter().find(|p| p.size == pick).expect("pick exists");
            prop_assert!(picked.mean_accuracy >= threshold);
            for p in &curve {
                if p.size < pick {
                    prop_assert!(p.mean_accuracy < threshold);
                }
            }
        }
    }
}
