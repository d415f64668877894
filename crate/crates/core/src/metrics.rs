//! Evaluation metrics: NRMSE, MAE, Pearson correlation, Jensen–Shannon
//! divergence of flow histograms, and split-level PDP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Group, Sample};
use crate::error::{Error, Result};
use crate::loss::{pdp_hard, FairnessConfig};
use crate::model::{Model, Prediction};

fn same_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(())
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    same_len("mae", pred, obs)?;
    if pred.is_empty() {
        return Err(Error::Metric("MAE of an empty set".into()));
    }
    Ok(pred.iter().zip(obs).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64)
}

/// RMSE divided by the observed range `max(y) − min(y)`.
pub fn nrmse(pred: &[f64], obs: &[f64]) -> Result<f64> {
    same_len("nrmse", pred, obs)?;
    if obs.len() < 2 {
        return Err(Error::Metric("NRMSE needs at least 2 observations".into()));
    }
    let (lo, hi) = obs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::Metric("NRMSE undefined: observations are constant".into()));
    }
    let mse = pred.iter().zip(obs).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / obs.len() as f64;
    Ok(mse.sqrt() / range)
}

pub fn pearson(pred: &[f64], obs: &[f64]) -> Result<f64> {
    same_len("pearson", pred, obs)?;
    if pred.is_empty() {
        return Err(Error::Metric("correlation of an empty set".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mo = obs.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vo) = (0.0, 0.0, 0.0);
    for (p, o) in pred.iter().zip(obs) {
        let (dp, d_o) = (p - mp, o - mo);
        cov += dp * d_o;
        vp += dp * dp;
        vo += d_o * d_o;
    }
    match (vp > 0.0, vo > 0.0) {
        (false, false) => Err(Error::Metric(
            "correlation undefined: predictions and observations are both constant".into(),
        )),
        (false, true) => Err(Error::Metric("correlation undefined: predictions are constant".into())),
        (true, false) => Err(Error::Metric("correlation undefined: observations are constant".into())),
        (true, true) => Ok((cov / (vp.sqrt() * vo.sqrt())).clamp(-1.0, 1.0)),
    }
}

/// Shared binning for both samples: bin 0 holds zeros, then `bins`
/// log-spaced bins from the smallest to the largest positive value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Binning {
    pub fn fit(a: &[f64], b: &[f64], bins: usize) -> Binning {
        let positives = a.iter().chain(b).copied().filter(|&v| v > 0.0);
        let (lo, hi) = positives.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Binning {
            bins: bins.max(1),
            lo,
            hi,
        }
    }

    pub fn bin(&self, v: f64) -> usize {
        if v <= 0.0 {
            return 0;
        }
        if self.hi <= self.lo {
            return 1;
        }
        let t = (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln());
        1 + ((t * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn histogram(&self, values: &[f64]) -> Vec<usize> {
        let mut counts = vec![0; self.bins + 1];
        for &v in values {
            counts[self.bin(v)] += 1;
        }
        counts
    }
}

/// Base-2 Jensen–Shannon divergence of two count histograms.
pub fn jsd_from_counts(p: &[usize], q: &[usize]) -> f64 {
    let (np, nq) = (p.iter().sum::<usize>() as f64, q.iter().sum::<usize>() as f64);
    let mut total = 0.0;
    for (&cp, &cq) in p.iter().zip(q) {
        let (pp, qq) = (cp as f64 / np, cq as f64 / nq);
        let m = 0.5 * (pp + qq);
        if pp > 0.0 {
            total += 0.5 * pp * (pp / m).log2();
        }
        if qq > 0.0 {
            total += 0.5 * qq * (qq / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

pub fn jsd(pred: &[f64], obs: &[f64], bins: usize) -> Result<f64> {
    if pred.is_empty() || obs.is_empty() {
        return Err(Error::Metric("JSD of an empty sample".into()));
    }
    let binning = Binning::fit(pred, obs, bins);
    Ok(jsd_from_counts(&binning.histogram(pred), &binning.histogram(obs)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tau_fraction: f64,
    pub jsd_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau_fraction: FairnessConfig::default().tau_fraction,
            jsd_bins: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub counts: [usize; 3],
    pub nrmse: Option<f64>,
    pub mae: f64,
    pub pearson: Option<f64>,
    pub jsd: f64,
    pub pdp: Option<f64>,
    pub group_mae: [Option<f64>; 3],
    /// Population variance of the three group MAEs.
    pub group_mae_variance: Option<f64>,
    /// Share of pairs whose thresholded presence matches `flow > 0`.
    pub presence_accuracy: f64,
    /// Reasons for every metric reported as absent.
    pub absent: BTreeMap<String, String>,
    pub nrmse_normalizer: String,
    pub tau_fraction: f64,
    pub jsd_bins: usize,
}

pub const CSV_HEADER: &str = "n,nrmse,mae,pearson,jsd,pdp,mae_a1,mae_a2,mae_a3,mae_group_variance,presence_accuracy";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        [
            self.n.to_string(),
            opt(self.nrmse),
            self.mae.to_string(),
            opt(self.pearson),
            self.jsd.to_string(),
            opt(self.pdp),
            opt(self.group_mae[0]),
            opt(self.group_mae[1]),
            opt(self.group_mae[2]),
            opt(self.group_mae_variance),
            self.presence_accuracy.to_string(),
        ]
        .join(",")
    }
}

/// All metrics for predictions against a split.
pub fn evaluate_predictions(
    preds: &[f64],
    samples: &[Sample],
    presence: &[f64],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if preds.len() != samples.len() || presence.len() != samples.len() {
        return Err(Error::Shape {
            op: "evaluate",
            left: vec![preds.len(), presence.len()],
            right: vec![samples.len()],
        });
    }
    let obs: Vec<f64> = samples.iter().map(|s| s.flow).collect();
    let groups: Vec<Group> = samples.iter().map(|s| s.group).collect();
    let mut absent = BTreeMap::new();
    let mut keep = |name: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            absent.insert(name.to_string(), e.to_string());
            None
        }
    };
    let nrmse_v = keep("nrmse", nrmse(preds, &obs));
    let pearson_v = keep("pearson", pearson(preds, &obs));
    let fcfg = FairnessConfig {
        tau_fraction: cfg.tau_fraction,
        ..FairnessConfig::default()
    };
    let losses: Vec<f64> = preds.iter().zip(&obs).map(|(p, y)| (p - y).abs()).collect();
    let pdp_v = keep("pdp", pdp_hard(&losses, &groups, &fcfg));

    let counts = crate::dataset::group_counts(groups.iter().copied());
    let mut sums = [0.0; 3];
    for (l, g) in losses.iter().zip(&groups) {
        sums[g.index()] += l;
    }
    let group_mae: [Option<f64>; 3] = std::array::from_fn(|g| (counts[g] > 0).then(|| sums[g] / counts[g] as f64));
    let group_mae_variance = if group_mae.iter().all(Option::is_some) {
        let v: Vec<f64> = group_mae.iter().flatten().copied().collect();
        let m = v.iter().sum::<f64>() / 3.0;
        Some(v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0)
    } else {
        absent.insert("group_mae_variance".into(), "not all three groups are present".into());
        None
    };
    let correct = presence
        .iter()
        .zip(&obs)
        .filter(|(p, y)| (**p >= 0.5) == (**y > 0.0))
        .count();
    Ok(EvalReport {
        n: samples.len(),
        counts,
        nrmse: nrmse_v,
        mae: mae(preds, &obs)?,
        pearson: pearson_v,
        jsd: jsd(preds, &obs, cfg.jsd_bins)?,
        pdp: pdp_v,
        group_mae,
        group_mae_variance,
        presence_accuracy: correct as f64 / samples.len() as f64,
        absent,
        nrmse_normalizer: "range".into(),
        tau_fraction: cfg.tau_fraction,
        jsd_bins: cfg.jsd_bins,
    })
}

pub fn predict_split(model: &Model, samples: &[Sample]) -> Result<Vec<Prediction>> {
    let features: Vec<_> = samples.iter().map(|s| s.features).collect();
    model.predict(&features)
}

pub fn evaluate(model: &Model, samples: &[Sample], cfg: &EvalConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Metric("cannot evaluate an empty split".into()));
    }
    let preds = predict_split(model, samples)?;
    let flow: Vec<f64> = preds.iter().map(|p| p.flow).collect();
    let presence: Vec<f64> = preds.iter().map(|p| p.presence).collect();
    evaluate_predictions(&flow, samples, &presence, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nrmse_cases() {
        assert_eq!(nrmse(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(nrmse(&[2.0, 4.0], &[1.0, 3.0]).unwrap(), 0.5);
        let (p, y) = ([0.3, 1.7, 2.2, 9.0], [0.0, 2.0, 2.5, 7.0]);
        let k = 13.0;
        let scaled = nrmse(&p.map(|v| v * k), &y.map(|v| v * k)).unwrap();
        assert!((scaled - nrmse(&p, &y).unwrap()).abs() < 1e-14);
        assert!(nrmse(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let affine: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&affine, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
        let msg = pearson(&[0.0; 5], &y).unwrap_err().to_string();
        assert!(msg.contains("predictions are constant"), "{msg}");
        let msg = pearson(&y, &[1.0; 5]).unwrap_err().to_string();
        assert!(msg.contains("observations are constant"), "{msg}");
    }

    #[test]
    fn jsd_cases() {
        let a = [0.0, 1.0, 5.0, 5.0, 30.0];
        let mut b = a;
        b.reverse();
        assert_eq!(jsd(&a, &b, 16).unwrap(), 0.0);
        assert_eq!(jsd(&[0.0, 0.0], &[3.0, 7.0], 16).unwrap(), 1.0);
        assert_eq!(jsd(&[0.0; 3], &[0.0; 3], 16).unwrap(), 0.0);
        let (x, y) = ([0.0, 2.0, 9.0, 40.0], [1.0, 1.0, 3.0, 0.0]);
        assert_eq!(jsd(&x, &y, 16).unwrap(), jsd(&y, &x, 16).unwrap());
    }

    #[test]
    fn binning_puts_extremes_in_first_and_last_bins() {
        let b = Binning::fit(&[0.0, 0.5], &[8.0], 4);
        assert_eq!(b.bin(0.0), 0);
        assert_eq!(b.bin(0.5), 1);
        assert_eq!(b.bin(8.0), 4);
        assert_eq!(b.bin(1.1), 2);
    }
}
