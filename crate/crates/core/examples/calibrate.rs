use std::time::Instant;

use lanetrace::data::window_segments;
use lanetrace::eval::cross_validate;
use lanetrace::features::FeatureTable;
use lanetrace::gbdt::Hyperparameters;
use lanetrace::sim::{generate_cohort, ProfileSpread};

fn probe(duration: f64, seed: u64) {
    let (dataset, _) = generate_cohort(8, &ProfileSpread::default(), duration, 20.0, seed).unwrap();
    let windows = window_segments(&dataset, 1.0).unwrap();
    let table = FeatureTable::from_windows(&windows).unwrap();
    let positives: usize = table.labels.iter().map(|&l| l as usize).sum();
    println!(
        "duration {duration}s seed {seed}: {} windows, {} positive",
        table.labels.len(),
        positives
    );

    let default_hp = Hyperparameters::default();
    let strong = Hyperparameters {
        n_estimators: 150,
        learning_rate: 0.15,
        max_depth: 6,
        ..Hyperparameters::default()
    };
    let mid = Hyperparameters {
        n_estimators: 120,
        learning_rate: 0.1,
        max_depth: 5,
        subsample: 0.8,
        ..Hyperparameters::default()
    };
    for (name, hp) in [("default", &default_hp), ("strong", &strong), ("mid", &mid)] {
        let t = Instant::now();
        let report = cross_validate(&table.columns, &table.labels, hp, 10, 7, true).unwrap();
        println!(
            "  {name:>7}: {:>6.2?}  accuracy {:.4} +- {:.4}  log_loss {:.4} +- {:.4}  auc {:.4}",
            t.elapsed(),
            report.aggregates.accuracy.mean,
            report.aggregates.accuracy.sd,
            report.aggregates.log_loss.mean,
            report.aggregates.log_loss.sd,
            report.aggregates.auc.mean,
        );
    }
}

fn main() {
    for duration in [180.0, 240.0, 300.0, 420.0] {
        for seed in [42, 7] {
            probe(duration, seed);
        }
    }
}
