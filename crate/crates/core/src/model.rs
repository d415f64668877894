//! Hurdle network: origin, destination and communal input blocks, an
//! additive origin+destination combine stacked with the communal block, a
//! shared trunk, and presence/magnitude heads whose product is the flow.

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dataset::{feature_fingerprint, FeatureVector, Normalizer, COMMUNAL_BLOCK, DEST_BLOCK, ORIGIN_BLOCK};
use crate::error::{Error, Result};
use crate::numcore::{
    batch_norm, check_dropout_rate, dense, dropout, BatchNormConfig, BatchStats, Graph, Mode, RunningStats, Tensor, Var,
};

pub const ORIGIN_WIDTH: usize = 20;
pub const DEST_WIDTH: usize = 20;
pub const COMMUNAL_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Number of trunk blocks after the combine.
    pub depth: usize,
    pub dropout: f64,
    /// Give the presence and magnitude heads fully separate input blocks and
    /// trunks instead of a shared trunk.
    pub separate_heads_networks: bool,
    pub batch_norm: BatchNormConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            depth: 3,
            dropout: 0.1,
            separate_heads_networks: false,
            batch_norm: BatchNormConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 1 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        if self.depth < 1 {
            return Err(Error::Config("trunk depth must be at least 1".into()));
        }
        check_dropout_rate(self.dropout)?;
        let bn = self.batch_norm;
        if !(bn.eps > 0.0 && (0.0..=1.0).contains(&bn.momentum)) {
            return Err(Error::Config(format!("invalid batch-norm settings {bn:?}")));
        }
        Ok(())
    }

    fn towers(&self) -> usize {
        if self.separate_heads_networks {
            2
        } else {
            1
        }
    }
}

/// Trainable parameter count, from the architecture alone.
pub fn param_count(cfg: &ModelConfig) -> usize {
    // dense weight + bias, batch-norm scale + shift
    let block = |i: usize, o: usize| i * o + 3 * o;
    let h = cfg.hidden;
    let tower =
        block(ORIGIN_WIDTH, h) + block(DEST_WIDTH, h) + block(COMMUNAL_WIDTH, h) + cfg.depth * block(2 * h, 2 * h);
    let heads = 2 * (2 * h + 1);
    cfg.towers() * tower + heads
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BlockIdx {
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TowerIdx {
    origin: BlockIdx,
    dest: BlockIdx,
    communal: BlockIdx,
    trunk: Vec<BlockIdx>,
}

/// Position of every tensor in the flat parameter list.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    towers: Vec<TowerIdx>,
    cls_w: usize,
    cls_b: usize,
    reg_w: usize,
    reg_b: usize,
    shapes: Vec<Vec<usize>>,
    stat_widths: Vec<usize>,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut shapes = Vec::new();
        let mut stat_widths = Vec::new();
        let mut block = |i: usize, o: usize| {
            let base = shapes.len();
            shapes.extend([vec![i, o], vec![o], vec![o], vec![o]]);
            stat_widths.push(o);
            BlockIdx {
                weight: base,
                bias: base + 1,
                gamma: base + 2,
                beta: base + 3,
                stats: stat_widths.len() - 1,
            }
        };
        let h = cfg.hidden;
        let towers = (0..cfg.towers())
            .map(|_| TowerIdx {
                origin: block(ORIGIN_WIDTH, h),
                dest: block(DEST_WIDTH, h),
                communal: block(COMMUNAL_WIDTH, h),
                trunk: (0..cfg.depth).map(|_| block(2 * h, 2 * h)).collect(),
            })
            .collect();
        let cls_w = shapes.len();
        shapes.extend([vec![2 * h, 1], vec![1], vec![2 * h, 1], vec![1]]);
        Layout {
            towers,
            cls_w,
            cls_b: cls_w + 1,
            reg_w: cls_w + 2,
            reg_b: cls_w + 3,
            shapes,
            stat_widths,
        }
    }

    fn is_dense_weight(&self, idx: usize) -> bool {
        idx == self.cls_w
            || idx == self.reg_w
            || self.towers.iter().any(|t| {
                [t.origin, t.dest, t.communal]
                    .iter()
                    .chain(&t.trunk)
                    .any(|b| b.weight == idx)
            })
    }
}

/// All trainable tensors (flat, in layout order) and batch-norm running
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
    pub running: Vec<RunningStats>,
}

impl ModelParams {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Stage outputs for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Presence probability.
    pub presence: f64,
    /// Flow magnitude given presence.
    pub magnitude: f64,
    /// `hard(presence)·magnitude`.
    pub flow: f64,
}

/// Graph handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub presence: Var,
    pub magnitude: Var,
    /// `presence·magnitude`, the differentiable Stage Three used in training.
    pub soft_flow: Var,
    /// Batch statistics per running-stat slot (train mode only).
    pub bn_stats: Vec<(usize, BatchStats)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Magnitudes are predicted in units of this scale (the mean positive
    /// training flow), so head outputs stay O(1).
    pub target_scale: f64,
    layout: Layout,
}

impl Model {
    /// Fresh model: uniform fan-in weights, zero biases, unit batch-norm
    /// scales.
    pub fn init(config: ModelConfig, target_scale: f64, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if !(target_scale.is_finite() && target_scale > 0.0) {
            return Err(Error::Config(format!(
                "target scale must be positive, got {target_scale}"
            )));
        }
        let layout = Layout::new(&config);
        let mut gammas = Vec::new();
        for t in &layout.towers {
            for b in [t.origin, t.dest, t.communal].iter().chain(&t.trunk) {
                gammas.push(b.gamma);
            }
        }
        let tensors = layout
            .shapes
            .iter()
            .enumerate()
            .map(|(idx, shape)| {
                if layout.is_dense_weight(idx) {
                    let bound = (6.0 / shape[0] as f64).sqrt();
                    let data = (0..shape[0] * shape[1])
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    Tensor::new(shape.clone(), data).expect("layout shape")
                } else if gammas.contains(&idx) {
                    Tensor::full(shape, 1.0)
                } else {
                    Tensor::zeros(shape)
                }
            })
            .collect();
        let running = layout.stat_widths.iter().map(|&w| RunningStats::new(w)).collect();
        Ok(Model {
            config,
            params: ModelParams { tensors, running },
            target_scale,
            layout,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams, target_scale: f64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.tensors.len() != layout.shapes.len() || params.running.len() != layout.stat_widths.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors and {} batch-norm slots for {config:?}, got {} and {}",
                layout.shapes.len(),
                layout.stat_widths.len(),
                params.tensors.len(),
                params.running.len()
            )));
        }
        for (k, (t, s)) in params.tensors.iter().zip(&layout.shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {k} has shape {:?}, config requires {s:?}",
                    t.shape()
                )));
            }
        }
        for (r, &w) in params.running.iter().zip(&layout.stat_widths) {
            if r.mean.len() != w || r.var.len() != w {
                return Err(Error::Checkpoint("batch-norm statistics have the wrong width".into()));
            }
        }
        Ok(Model {
            config,
            params,
            target_scale,
            layout,
        })
    }

    /// Registers every trainable tensor as a leaf; the returned handles are
    /// in the same order as `params.tensors`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        g: &mut Graph,
        vars: &[Var],
        b: BlockIdx,
        x: Var,
        mode: Mode,
        rng: &mut impl Rng,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<Var> {
        let h = dense(g, x, vars[b.weight], vars[b.bias])?;
        let h = g.gelu(h);
        let (h, st) = batch_norm(
            g,
            h,
            vars[b.gamma],
            vars[b.beta],
            &self.params.running[b.stats],
            mode,
            self.config.batch_norm,
        )?;
        if let Some(st) = st {
            stats.push((b.stats, st));
        }
        dropout(g, h, self.config.dropout, mode, rng)
    }

    fn tower(
        &self,
        g: &mut Graph,
        vars: &[Var],
        t: &TowerIdx,
        inputs: [Var; 3],
        mode: Mode,
        rng: &mut impl Rng,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<Var> {
        let o = self.block(g, vars, t.origin, inputs[0], mode, rng, stats)?;
        let d = self.block(g, vars, t.dest, inputs[1], mode, rng, stats)?;
        let c = self.block(g, vars, t.communal, inputs[2], mode, rng, stats)?;
        let od = g.add(o, d)?;
        let mut h = g.concat_cols(od, c)?;
        for b in &t.trunk {
            h = self.block(g, vars, *b, h, mode, rng, stats)?;
        }
        Ok(h)
    }

    /// Forward pass on a batch of normalized feature vectors. `vars` must
    /// come from [`Model::bind`] on the same graph.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        batch: &[FeatureVector],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<ForwardOutput> {
        if vars.len() != self.params.tensors.len() {
            return Err(Error::Contract("parameter handles do not match the model".into()));
        }
        if batch.is_empty() {
            return Err(Error::Contract("forward needs a non-empty batch".into()));
        }
        let block_of = |range: std::ops::Range<usize>| {
            let width = range.len();
            let data = batch.iter().flat_map(|f| f.0[range.clone()].iter().copied()).collect();
            Tensor::matrix(batch.len(), width, data)
        };
        let inputs = [
            g.leaf(block_of(ORIGIN_BLOCK)?),
            g.leaf(block_of(DEST_BLOCK)?),
            g.leaf(block_of(COMMUNAL_BLOCK)?),
        ];
        let mut stats = Vec::new();
        let towers = self.layout.towers.clone();
        let shared = self.tower(g, vars, &towers[0], inputs, mode, rng, &mut stats)?;
        let reg_in = match towers.get(1) {
            Some(t) => self.tower(g, vars, t, inputs, mode, rng, &mut stats)?,
            None => shared,
        };
        let logits = dense(g, shared, vars[self.layout.cls_w], vars[self.layout.cls_b])?;
        let presence = g.sigmoid(logits);
        let z = dense(g, reg_in, vars[self.layout.reg_w], vars[self.layout.reg_b])?;
        let sp = g.softplus(z);
        let magnitude = g.scale(sp, self.target_scale);
        let soft_flow = g.mul(presence, magnitude)?;
        Ok(ForwardOutput {
            logits,
            presence,
            magnitude,
            soft_flow,
            bn_stats: stats,
        })
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running(&mut self, stats: &[(usize, BatchStats)]) {
        let m = self.config.batch_norm.momentum;
        for (slot, st) in stats {
            self.params.running[*slot].update(st, m);
        }
    }

    /// Eval-mode predictions with the hard presence threshold applied.
    pub fn predict(&self, features: &[FeatureVector]) -> Result<Vec<Prediction>> {
        // eval mode never draws from the generator
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(1024) {
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let f = self.forward(&mut g, &vars, chunk, Mode::Eval, &mut rng)?;
            let (p, m) = (g.value(f.presence).data(), g.value(f.magnitude).data());
            out.extend(p.iter().zip(m).map(|(&presence, &magnitude)| Prediction {
                presence,
                magnitude,
                flow: if presence >= 0.5 { magnitude } else { 0.0 },
            }));
        }
        Ok(out)
    }

    /// Zeroes every first-layer weight reading input feature `feature`, so
    /// the model provably ignores it.
    pub fn ablate_feature(&mut self, feature: usize) -> Result<()> {
        let (block, row) = if ORIGIN_BLOCK.contains(&feature) {
            (0, feature - ORIGIN_BLOCK.start)
        } else if DEST_BLOCK.contains(&feature) {
            (1, feature - DEST_BLOCK.start)
        } else if COMMUNAL_BLOCK.contains(&feature) {
            (2, feature - COMMUNAL_BLOCK.start)
        } else {
            return Err(Error::Contract(format!("no input feature {feature}")));
        };
        for t in &self.layout.towers {
            let idx = [t.origin, t.dest, t.communal][block].weight;
            let w = &mut self.params.tensors[idx];
            let cols = w.cols();
            w.data_mut()[row * cols..(row + 1) * cols].fill(0.0);
        }
        Ok(())
    }

    /// Copies the origin block (weights and running statistics) into the
    /// destination block, making the combine symmetric in its inputs.
    pub fn tie_origin_dest(&mut self) {
        for t in &self.layout.towers {
            for (src, dst) in [
                (t.origin.weight, t.dest.weight),
                (t.origin.bias, t.dest.bias),
                (t.origin.gamma, t.dest.gamma),
                (t.origin.beta, t.dest.beta),
            ] {
                self.params.tensors[dst] = self.params.tensors[src].clone();
            }
            self.params.running[t.dest.stats] = self.params.running[t.origin.stats].clone();
        }
    }
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Self-describing model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub target_scale: f64,
    pub params: ModelParams,
    pub normalizer: Normalizer,
    pub feature_fingerprint: String,
    pub seed: u64,
    pub zeta: f64,
}

impl Checkpoint {
    pub fn new(model: &Model, normalizer: &Normalizer, seed: u64, zeta: f64) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            config: model.config.clone(),
            target_scale: model.target_scale,
            params: model.params.clone(),
            normalizer: normalizer.clone(),
            feature_fingerprint: feature_fingerprint(),
            seed,
            zeta,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    /// Loads for inference, refusing checkpoints whose feature layout or
    /// architecture differs from what the caller expects.
    pub fn load_for_inference(path: &Path, expected: Option<&ModelConfig>) -> Result<(Self, Model)> {
        let ck = Checkpoint::load(path)?;
        let current = feature_fingerprint();
        if ck.feature_fingerprint != current {
            return Err(Error::Checkpoint(format!(
                "feature-order fingerprint {} does not match this build ({current}); \
                 the model was trained on a different input layout",
                ck.feature_fingerprint
            )));
        }
        if let Some(cfg) = expected {
            if cfg != &ck.config {
                return Err(Error::Checkpoint(format!(
                    "config mismatch: checkpoint has hidden={} depth={}, requested hidden={} depth={}",
                    ck.config.hidden, ck.config.depth, cfg.hidden, cfg.depth
                )));
            }
        }
        let model = ck.model()?;
        Ok((ck, model))
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.config.clone(), self.params.clone(), self.target_scale)
    }
}
