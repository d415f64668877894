use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, FEATURE_COUNT, ONE_HOT};
use crate::error::{Error, Result};

/// Per-feature scaling fitted on the training split: `log1p` for
/// non-negative columns, then a z-score. One-hot and zero-variance columns
/// are stored as the identity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub log1p: Vec<bool>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &[FeatureVector]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config(
                "cannot fit a normalizer on an empty training split".into(),
            ));
        }
        let n = train.len() as f64;
        let mut log1p = vec![false; FEATURE_COUNT];
        let mut mean = vec![0.0; FEATURE_COUNT];
        let mut std = vec![1.0; FEATURE_COUNT];
        for j in 0..FEATURE_COUNT {
            if ONE_HOT.contains(&j) {
                continue;
            }
            let log = train.iter().all(|f| f.0[j] >= 0.0);
            let col: Vec<f64> = train
                .iter()
                .map(|f| if log { f.0[j].ln_1p() } else { f.0[j] })
                .collect();
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            // relative guard: constant columns can carry rounding-level spread
            if sd > 1e-12 * mu.abs().max(1.0) {
                log1p[j] = log;
                mean[j] = mu;
                std[j] = sd;
            }
        }
        Ok(Normalizer { log1p, mean, std })
    }

    pub fn apply(&self, f: &FeatureVector) -> FeatureVector {
        let mut out = f.0;
        for (j, v) in out.iter_mut().enumerate() {
            let x = if self.log1p[j] { v.max(0.0).ln_1p() } else { *v };
            *v = (x - self.mean[j]) / self.std[j];
        }
        FeatureVector(out)
    }

    pub fn apply_all(&self, features: &[FeatureVector]) -> Vec<FeatureVector> {
        features.iter().map(|f| self.apply(f)).collect()
    }
}
