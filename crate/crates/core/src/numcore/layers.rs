use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{BatchStats, Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        RunningStats {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }

    /// Exponential moving average towards the batch statistics.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// `x·W + b` for `x[B×in]`, `W[in×out]`, `b[out]`.
pub fn dense(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let h = g.matmul(x, weight)?;
    g.add_row(h, bias)
}

/// Batch normalization with learnable scale and shift. Train mode uses batch
/// statistics and returns them for the running-average update; eval mode
/// reads `running` and is a fixed per-column affine map.
pub fn batch_norm(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    running: &RunningStats,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<(Var, Option<BatchStats>)> {
    match mode {
        Mode::Train => {
            let (xhat, stats) = g.batch_norm(x, cfg.eps)?;
            let scaled = g.mul_row(xhat, gamma)?;
            Ok((g.add_row(scaled, beta)?, Some(stats)))
        }
        Mode::Eval => {
            let scale: Vec<f64> = running.var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
            let shift: Vec<f64> = running.mean.iter().zip(&scale).map(|(m, s)| -m * s).collect();
            let xhat = g.col_affine(x, scale, &shift)?;
            let scaled = g.mul_row(xhat, gamma)?;
            Ok((g.add_row(scaled, beta)?, None))
        }
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout: survivors are scaled by `1/(1−rate)`.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    g.mask(x, mask)
}
