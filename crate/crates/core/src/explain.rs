//! Permutation feature importance over the 44 model inputs.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{feature_names, FeatureVector, Sample, FEATURE_COUNT, ONE_HOT};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::Model;
use crate::par::Exec;
use crate::rng::{self, domain};

pub const MIN_RECORDS: usize = 50;
pub const METHOD: &str = "permutation importance (delta MAE)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub index: usize,
    pub name: String,
    pub delta_mae_mean: f64,
    pub delta_mae_std: f64,
    /// 1 is most important.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub method: String,
    pub repetitions: usize,
    pub seed: u64,
    pub base_mae: f64,
    /// Mean ΔMAE with every column permuted at once.
    pub all_features_delta: f64,
    /// In feature order.
    pub features: Vec<FeatureImportance>,
    pub warnings: Vec<String>,
}

impl ImportanceReport {
    /// Rows sorted by rank.
    pub fn ranked(&self) -> Vec<&FeatureImportance> {
        let mut rows: Vec<_> = self.features.iter().collect();
        rows.sort_by_key(|r| r.rank);
        rows
    }

    pub fn rank_of(&self, index: usize) -> usize {
        self.features[index].rank
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,feature_name,delta_mae_mean,delta_mae_std\n");
        for r in self.ranked() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.rank, r.name, r.delta_mae_mean, r.delta_mae_std
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Columns shuffled together: each non-group column alone, and the group
/// one-hot as one unit.
fn units() -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0..FEATURE_COUNT)
        .filter(|i| !ONE_HOT.contains(i))
        .map(|i| vec![i])
        .collect();
    out.push(ONE_HOT.collect());
    out
}

fn permuted_mae(model: &Model, samples: &[Sample], columns: &[Vec<usize>], seed: u64, stream_base: u64) -> Result<f64> {
    let mut features: Vec<FeatureVector> = samples.iter().map(|s| s.features).collect();
    for (k, unit) in columns.iter().enumerate() {
        let mut rng = rng::stream(seed, domain::PERMUTE, stream_base + k as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for (dst, &src) in order.iter().enumerate() {
            for &c in unit {
                features[dst].0[c] = samples[src].features.0[c];
            }
        }
    }
    let preds = model.predict(&features)?;
    let flow: Vec<f64> = preds.iter().map(|p| p.flow).collect();
    let obs: Vec<f64> = samples.iter().map(|s| s.flow).collect();
    metrics::mae(&flow, &obs)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// ΔMAE = MAE(column shuffled) − MAE(base), averaged over `repetitions`
/// seeded shuffles; ranked by descending mean, ties by feature index.
pub fn permutation_importance(
    model: &Model,
    samples: &[Sample],
    repetitions: usize,
    seed: u64,
    exec: Exec,
) -> Result<ImportanceReport> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "repetitions must be at least 3, got {repetitions}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Metric("cannot explain an empty split".into()));
    }
    let mut warnings = Vec::new();
    if samples.len() < MIN_RECORDS {
        let msg = format!(
            "only {} records (fewer than {MIN_RECORDS}); importances are noisy",
            samples.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let preds = metrics::predict_split(model, samples)?;
    let flow: Vec<f64> = preds.iter().map(|p| p.flow).collect();
    let obs: Vec<f64> = samples.iter().map(|s| s.flow).collect();
    let base = metrics::mae(&flow, &obs)?;

    let units = units();
    let reps = repetitions as u64;
    // stream index = unit * reps + rep, so every (unit, rep) is independent
    let deltas: Vec<Result<Vec<f64>>> = exec.map_range(units.len(), |u| {
        (0..reps)
            .map(|r| {
                let cols = [units[u].clone()];
                permuted_mae(model, samples, &cols, seed, (u as u64 * reps + r) << 8).map(|m| m - base)
            })
            .collect()
    });
    let all_deltas: Vec<f64> = (0..reps)
        .map(|r| {
            let base_index = ((units.len() as u64 * reps + r) << 8) + (1 << 40);
            permuted_mae(model, samples, &units, seed, base_index).map(|m| m - base)
        })
        .collect::<Result<_>>()?;

    let names = feature_names();
    let mut features = vec![None; FEATURE_COUNT];
    for (unit, d) in units.iter().zip(deltas) {
        let (m, s) = mean_std(&d?);
        for &i in unit {
            features[i] = Some(FeatureImportance {
                index: i,
                name: names[i].clone(),
                delta_mae_mean: m,
                delta_mae_std: s,
                rank: 0,
            });
        }
    }
    let mut features: Vec<FeatureImportance> = features.into_iter().map(|f| f.expect("every column covered")).collect();
    let mut order: Vec<usize> = (0..FEATURE_COUNT).collect();
    order.sort_by(|&a, &b| {
        features[b]
            .delta_mae_mean
            .total_cmp(&features[a].delta_mae_mean)
            .then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        features[i].rank = rank + 1;
    }
    Ok(ImportanceReport {
        method: METHOD.into(),
        repetitions,
        seed,
        base_mae: base,
        all_features_delta: mean_std(&all_deltas).0,
        features,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_cover_every_column_once() {
        let mut seen: Vec<usize> = units().into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..FEATURE_COUNT).collect::<Vec<_>>());
        assert_eq!(units().len(), 42);
    }

    #[test]
    fn mean_std_of_constant() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
