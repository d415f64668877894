//! Accuracy loss, the weighted demographic-parity fairness loss (hard and
//! differentiable forms) and the total training objective.

use serde::{Deserialize, Serialize};

use crate::dataset::Group;
use crate::error::{Error, Result};
use crate::model::ForwardOutput;
use crate::numcore::{sigmoid, Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FairnessConfig {
    /// Lagrange multiplier on the fairness term.
    pub zeta: f64,
    /// Band half-width as a fraction of the mean loss: `τ = c·l̄`.
    pub tau_fraction: f64,
    /// Surrogate temperature as a fraction of τ: `s = t·τ`.
    pub temperature_fraction: f64,
    /// Drop the presence cross-entropy from the objective.
    pub no_bce: bool,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        FairnessConfig {
            zeta: 0.5,
            tau_fraction: 0.5,
            temperature_fraction: 0.2,
            no_bce: false,
        }
    }
}

impl FairnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return Err(Error::Config(format!("zeta must be >= 0, got {}", self.zeta)));
        }
        if !(self.tau_fraction > 0.0 && self.tau_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "tau fraction must lie in (0, 1], got {}",
                self.tau_fraction
            )));
        }
        if !(self.temperature_fraction.is_finite() && self.temperature_fraction > 0.0) {
            return Err(Error::Config(format!(
                "temperature fraction must be positive, got {}",
                self.temperature_fraction
            )));
        }
        Ok(())
    }
}

/// Per-sample absolute errors and their mean.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            op: "mae_loss",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::Contract("mae_loss needs a non-empty batch".into()));
    }
    let losses: Vec<f64> = pred.iter().zip(target).map(|(p, y)| (p - y).abs()).collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((mean, losses))
}

/// `w[p][q] = N / (N_p + N_q)` for distinct non-empty groups, zero
/// elsewhere.
pub fn group_weights(counts: [usize; 3]) -> Result<[[f64; 3]; 3]> {
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::TooFewGroups { present });
    }
    let total: usize = counts.iter().sum();
    let mut w = [[0.0; 3]; 3];
    for p in 0..3 {
        for q in 0..3 {
            if p != q && counts[p] > 0 && counts[q] > 0 {
                w[p][q] = total as f64 / (counts[p] + counts[q]) as f64;
            }
        }
    }
    Ok(w)
}

/// The loss band `[l̄ − τ, l̄ + τ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub tau: f64,
}

impl Band {
    pub fn of(losses: &[f64], tau_fraction: f64) -> Band {
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        Band {
            mean,
            tau: tau_fraction * mean,
        }
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.tau
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.tau
    }

    pub fn contains(&self, l: f64) -> bool {
        self.lo() <= l && l <= self.hi()
    }
}

/// Per-group counts and in-band probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLossSummary {
    pub band: Band,
    pub counts: [usize; 3],
    /// `None` for groups absent from the batch.
    pub in_band: [Option<f64>; 3],
}

fn check_groups(losses: &[f64], groups: &[Group]) -> Result<[usize; 3]> {
    if losses.len() != groups.len() {
        return Err(Error::Shape {
            op: "pdp",
            left: vec![losses.len()],
            right: vec![groups.len()],
        });
    }
    let counts = crate::dataset::group_counts(groups.iter().copied());
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::TooFewGroups { present });
    }
    Ok(counts)
}

pub fn summarize_groups(losses: &[f64], groups: &[Group], tau_fraction: f64) -> Result<GroupLossSummary> {
    let counts = check_groups(losses, groups)?;
    let band = Band::of(losses, tau_fraction);
    let mut hits = [0usize; 3];
    for (&l, g) in losses.iter().zip(groups) {
        if band.contains(l) {
            hits[g.index()] += 1;
        }
    }
    let in_band = std::array::from_fn(|g| (counts[g] > 0).then(|| hits[g] as f64 / counts[g] as f64));
    Ok(GroupLossSummary { band, counts, in_band })
}

fn weighted_disparity(probs: &[Option<f64>; 3], w: &[[f64; 3]; 3]) -> f64 {
    let mut total = 0.0;
    for p in 0..3 {
        for q in 0..3 {
            if let (true, Some(a), Some(b)) = (p != q, probs[p], probs[q]) {
                total += w[p][q] * (a - b).abs();
            }
        }
    }
    total
}

/// Weighted demographic parity over ordered group pairs, with the band
/// indicator evaluated exactly (endpoints inclusive).
pub fn pdp_hard(losses: &[f64], groups: &[Group], cfg: &FairnessConfig) -> Result<f64> {
    let s = summarize_groups(losses, groups, cfg.tau_fraction)?;
    Ok(weighted_disparity(&s.in_band, &group_weights(s.counts)?))
}

/// Smooth PDP: the band indicator becomes
/// `σ((l − (l̄−τ))/s)·σ(((l̄+τ) − l)/s)` with `l̄`, `τ` and `s` held constant.
/// Returns the value and its gradient with respect to every loss.
pub fn pdp_surrogate_with_grad(losses: &[f64], groups: &[Group], cfg: &FairnessConfig) -> Result<(f64, Vec<f64>)> {
    pdp_surrogate_at(losses, groups, cfg, cfg.temperature_fraction)
}

/// As [`pdp_surrogate_with_grad`] with an explicit temperature fraction.
pub fn pdp_surrogate_at(
    losses: &[f64],
    groups: &[Group],
    cfg: &FairnessConfig,
    temperature_fraction: f64,
) -> Result<(f64, Vec<f64>)> {
    let band = Band::of(losses, cfg.tau_fraction);
    if band.tau <= 0.0 {
        check_groups(losses, groups)?;
        // every loss is zero: all groups sit entirely inside the band
        return Ok((0.0, vec![0.0; losses.len()]));
    }
    pdp_surrogate_in_band(losses, groups, band, temperature_fraction * band.tau)
}

/// The surrogate for an explicit band and temperature `s`, treating both
/// as constants.
pub fn pdp_surrogate_in_band(losses: &[f64], groups: &[Group], band: Band, s: f64) -> Result<(f64, Vec<f64>)> {
    let counts = check_groups(losses, groups)?;
    let w = group_weights(counts)?;
    if !(s > 0.0) {
        return Err(Error::Contract(format!(
            "surrogate temperature must be positive, got {s}"
        )));
    }
    let (lo, hi) = (band.lo(), band.hi());
    let mut soft = Vec::with_capacity(losses.len());
    let mut dsoft = Vec::with_capacity(losses.len());
    let mut sums = [0.0; 3];
    for (&l, g) in losses.iter().zip(groups) {
        let a = sigmoid((l - lo) / s);
        let b = sigmoid((hi - l) / s);
        let v = a * b;
        soft.push(v);
        dsoft.push(v * ((1.0 - a) - (1.0 - b)) / s);
        sums[g.index()] += v;
    }
    let probs: [Option<f64>; 3] = std::array::from_fn(|g| (counts[g] > 0).then(|| sums[g] / counts[g] as f64));
    let value = weighted_disparity(&probs, &w);

    // ∂PDP/∂P_g: each unordered pair appears twice in the ordered sum
    let mut dprob = [0.0; 3];
    for p in 0..3 {
        for q in 0..3 {
            if let (true, Some(a), Some(b)) = (p != q, probs[p], probs[q]) {
                let sign = if a > b {
                    1.0
                } else if a < b {
                    -1.0
                } else {
                    0.0
                };
                dprob[p] += 2.0 * w[p][q] * sign;
            }
        }
    }
    let grad = dsoft
        .iter()
        .zip(groups)
        .map(|(d, g)| dprob[g.index()] * d / counts[g.index()] as f64)
        .collect();
    Ok((value, grad))
}

/// Records the surrogate on the tape as a function of the loss node.
pub fn pdp_surrogate(g: &mut Graph, losses: Var, groups: &[Group], cfg: &FairnessConfig) -> Result<Var> {
    let (value, grad) = pdp_surrogate_with_grad(g.value(losses).data(), groups, cfg)?;
    g.reduce(losses, value, grad)
}

/// Components of one evaluation of the training objective.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Var,
    pub bce: Option<f64>,
    pub mae: f64,
    /// `None` when ζ = 0 (not computed) or the batch lacks two groups.
    pub pdp_surrogate: Option<f64>,
    /// Exact PDP of the batch's soft-flow losses, for logging.
    pub pdp_hard: Option<f64>,
    pub fairness_skipped: bool,
}

/// `BCE(B̂, 1[y>0]) + l̄ + ζ·PDP_surrogate` on a forward pass.
pub fn total_loss(
    g: &mut Graph,
    out: &ForwardOutput,
    targets: &[f64],
    groups: &[Group],
    cfg: &FairnessConfig,
) -> Result<LossParts> {
    let n = targets.len();
    if g.value(out.soft_flow).len() != n || groups.len() != n {
        return Err(Error::Shape {
            op: "total_loss",
            left: g.value(out.soft_flow).shape().to_vec(),
            right: vec![n, groups.len()],
        });
    }
    let y = g.leaf(Tensor::new(g.value(out.soft_flow).shape().to_vec(), targets.to_vec())?);
    let diff = g.sub(out.soft_flow, y)?;
    let losses = g.abs(diff);
    let lbar = g.mean(losses);
    let mae = g.value(lbar).item();

    let (mut total, bce) = if cfg.no_bce {
        (lbar, None)
    } else {
        let presence: Vec<f64> = targets.iter().map(|&t| if t > 0.0 { 1.0 } else { 0.0 }).collect();
        let bce = g.bce_with_logits(out.logits, &presence)?;
        let v = g.value(bce).item();
        (g.add(bce, lbar)?, Some(v))
    };

    let loss_values = g.value(losses).data().to_vec();
    let pdp_hard = match pdp_hard(&loss_values, groups, cfg) {
        Ok(v) => Some(v),
        Err(Error::TooFewGroups { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut pdp_sur = None;
    let fairness_skipped = pdp_hard.is_none();
    // a non-finite batch loss is left for the caller's divergence guard
    if cfg.zeta > 0.0 && !fairness_skipped && mae.is_finite() {
        let p = pdp_surrogate(g, losses, groups, cfg)?;
        pdp_sur = Some(g.value(p).item());
        let weighted = g.scale(p, cfg.zeta);
        total = g.add(total, weighted)?;
    }
    Ok(LossParts {
        total,
        bce,
        mae,
        pdp_surrogate: pdp_sur,
        pdp_hard,
        fairness_skipped,
    })
}
