//! Mini-batch Adam training on the total objective, the ζ grid sweep, and
//! the end-to-end experiment runner.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, interleave_by_group, io, FeatureVector, Group, Part, PreparedData, RegionProfile, Sample, SplitSpec,
};
use crate::error::{Error, Result};
use crate::loss::{total_loss, FairnessConfig};
use crate::metrics::{self, evaluate, EvalConfig, EvalReport};
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::numcore::{AdamConfig, AdamState, Graph, Mode, Tensor};
use crate::par::Exec;
use crate::rng::{self, domain};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation metrics are logged every this many epochs (and on the
    /// last epoch).
    pub val_every: usize,
    pub fairness: FairnessConfig,
    pub model: ModelConfig,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 5e-4,
            epochs: 200,
            batch_size: 256,
            seed: 0,
            val_every: 10,
            fairness: FairnessConfig::default(),
            model: ModelConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 4 {
            return Err(Error::Config(format!(
                "batch size must be at least 4, got {}",
                self.batch_size
            )));
        }
        self.fairness.validate()?;
        self.model.validate()?;
        self.split.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub nrmse: Option<f64>,
    pub mae: f64,
    pub pdp: Option<f64>,
}

/// One line of `train_log.jsonl`; loss components are batch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub bce: Option<f64>,
    pub mae: f64,
    /// Absent when ζ = 0: the surrogate is never evaluated.
    pub pdp_surrogate: Option<f64>,
    pub pdp_hard: Option<f64>,
    /// ζ·PDP_surrogate as it entered the objective.
    pub fairness_contribution: f64,
    pub total: f64,
    pub fairness_skipped_batches: usize,
    pub validation: Option<ValidationRow>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRow>,
}

fn mean_positive_flow(samples: &[Sample]) -> f64 {
    let pos: Vec<f64> = samples.iter().map(|s| s.flow).filter(|&f| f > 0.0).collect();
    if pos.is_empty() {
        1.0
    } else {
        pos.iter().sum::<f64>() / pos.len() as f64
    }
}

/// Contiguous stratified batches; a trailing batch smaller than 2 is
/// merged into its predecessor so batch norm always has statistics.
fn batches(samples: &[Sample], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let groups: Vec<Group> = samples.iter().map(|s| s.group).collect();
    let all: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng::stream(seed, domain::BATCHES, epoch as u64);
    let order = interleave_by_group(&all, &groups, &mut rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(tail);
        }
    }
    out
}

struct BatchData {
    features: Vec<FeatureVector>,
    targets: Vec<f64>,
    groups: Vec<Group>,
}

impl BatchData {
    fn gather(samples: &[Sample], idx: &[usize]) -> Self {
        BatchData {
            features: idx.iter().map(|&i| samples[i].features).collect(),
            targets: idx.iter().map(|&i| samples[i].flow).collect(),
            groups: idx.iter().map(|&i| samples[i].group).collect(),
        }
    }
}

/// Train-mode objective on the whole of `samples` with a fixed dropout
/// stream; deterministic for a given `seed`.
pub fn full_batch_objective(model: &Model, samples: &[Sample], fairness: &FairnessConfig, seed: u64) -> Result<f64> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let b = BatchData::gather(samples, &idx);
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let mut rng = rng::stream(seed, domain::DROPOUT, u64::MAX);
    let out = model.forward(&mut g, &vars, &b.features, Mode::Train, &mut rng)?;
    let parts = total_loss(&mut g, &out, &b.targets, &b.groups, fairness)?;
    Ok(g.value(parts.total).item())
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Fixed-epoch mini-batch training. The returned model carries the running
/// batch-norm statistics accumulated during training.
pub fn train(train: &[Sample], validation: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Config(format!(
            "training split needs at least 2 samples, got {}",
            train.len()
        )));
    }
    let mut init_rng = rng::stream(cfg.seed, domain::INIT, 0);
    let mut model = Model::init(cfg.model.clone(), mean_positive_flow(train), &mut init_rng)?;
    let mut adam = AdamState::new(cfg.adam(), &model.params.tensors);
    let mut drop_rng = rng::stream(cfg.seed, domain::DROPOUT, 0);
    let eval_cfg = EvalConfig {
        tau_fraction: cfg.fairness.tau_fraction,
        ..EvalConfig::default()
    };
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let snapshot = model.clone();
        let (mut bce, mut mae, mut sur, mut hard, mut contrib, mut total) =
            (vec![], vec![], vec![], vec![], vec![], vec![]);
        let mut skipped = 0;
        for idx in batches(train, cfg.batch_size, cfg.seed, epoch) {
            let b = BatchData::gather(train, &idx);
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let out = model.forward(&mut g, &vars, &b.features, Mode::Train, &mut drop_rng)?;
            let parts = total_loss(&mut g, &out, &b.targets, &b.groups, &cfg.fairness)?;
            let value = g.value(parts.total).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite: Box::new(snapshot),
                });
            }
            let mut grads = g.backward(parts.total)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut model.params.tensors, &grads)?;
            model.update_running(&out.bn_stats);

            bce.extend(parts.bce);
            mae.push(parts.mae);
            hard.extend(parts.pdp_hard);
            if let Some(s) = parts.pdp_surrogate {
                sur.push(s);
                contrib.push(cfg.fairness.zeta * s);
            }
            skipped += usize::from(parts.fairness_skipped);
            total.push(value);
        }
        let validation = if !validation.is_empty() && (epoch % cfg.val_every.max(1) == 0 || epoch == cfg.epochs) {
            let r = evaluate(&model, validation, &eval_cfg)?;
            Some(ValidationRow {
                nrmse: r.nrmse,
                mae: r.mae,
                pdp: r.pdp,
            })
        } else {
            None
        };
        let row = LogRow {
            epoch,
            bce: mean(&bce),
            mae: mean(&mae).unwrap_or(0.0),
            pdp_surrogate: mean(&sur),
            pdp_hard: mean(&hard),
            fairness_contribution: mean(&contrib).unwrap_or(0.0),
            total: mean(&total).unwrap_or(0.0),
            fairness_skipped_batches: skipped,
            validation,
        };
        log::debug!(
            "epoch {epoch}: total {:.4} mae {:.4} pdp {:?}",
            row.total,
            row.mae,
            row.pdp_hard
        );
        log.push(row);
    }
    Ok(TrainOutcome { model, log })
}

pub fn default_zeta_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub zeta: f64,
    pub seed: u64,
    /// Validation metrics; `None` when the cell failed.
    pub pdp: Option<f64>,
    pub nrmse: Option<f64>,
    pub mae: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Index of ζ* in `cells`.
    pub selected: Option<usize>,
}

impl SweepResult {
    pub fn zeta_star(&self) -> Option<f64> {
        self.selected.map(|k| self.cells[k].zeta)
    }

    pub fn curve_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = String::from("zeta,pdp,nrmse,mae\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{},{}\n", c.zeta, opt(c.pdp), opt(c.nrmse), opt(c.mae)));
        }
        out
    }
}

/// ζ* = argmin validation PDP over completed cells; equal PDP goes to the
/// lower NRMSE, then to the earlier grid point.
pub fn select_zeta(cells: &[SweepCell]) -> Option<usize> {
    let key = |c: &SweepCell| (c.pdp.unwrap_or(f64::INFINITY), c.nrmse.unwrap_or(f64::INFINITY));
    cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.error.is_none() && c.pdp.is_some())
        .min_by(|(ia, a), (ib, b)| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ia.cmp(ib))
        })
        .map(|(k, _)| k)
}

pub struct SweepOutcome {
    pub result: SweepResult,
    /// Trained model per cell (`None` for failed cells).
    pub runs: Vec<Option<TrainOutcome>>,
}

pub fn cell_seed(base: u64, index: usize) -> u64 {
    rng::derive_seed(base, index as u64)
}

/// Trains one model per ζ on the grid, each with its own derived seed, and
/// scores it on the validation split.
pub fn sweep_zeta(data: &PreparedData, base: &TrainConfig, grid: &[f64], exec: Exec) -> Result<SweepOutcome> {
    base.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("zeta grid is empty".into()));
    }
    let eval_cfg = EvalConfig {
        tau_fraction: base.fairness.tau_fraction,
        ..EvalConfig::default()
    };
    let runs: Vec<(SweepCell, Option<TrainOutcome>)> = exec.map_range(grid.len(), |k| {
        let mut cfg = base.clone();
        cfg.fairness.zeta = grid[k];
        cfg.seed = cell_seed(base.seed, k);
        let mut cell = SweepCell {
            zeta: grid[k],
            seed: cfg.seed,
            pdp: None,
            nrmse: None,
            mae: None,
            error: None,
        };
        let scored = train(&data.train, &data.validation, &cfg)
            .and_then(|run| evaluate(&run.model, &data.validation, &eval_cfg).map(|r| (run, r)));
        match scored {
            Ok((run, report)) => {
                cell.pdp = report.pdp;
                cell.nrmse = report.nrmse;
                cell.mae = Some(report.mae);
                (cell, Some(run))
            }
            Err(e) => {
                log::warn!("sweep cell zeta={} failed: {e}", grid[k]);
                cell.error = Some(e.to_string());
                (cell, None)
            }
        }
    });
    let (cells, runs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let selected = select_zeta(&cells);
    Ok(SweepOutcome {
        result: SweepResult { cells, selected },
        runs,
    })
}

/// One JSON document describing a full experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub regions: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    /// Generates the data in memory when no input files are given.
    pub synth: Option<SynthConfig>,
    pub train: TrainConfig,
    /// Run the ζ grid sweep; otherwise train once at `train.fairness.zeta`.
    pub sweep: bool,
    pub zeta_grid: Vec<f64>,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            regions: None,
            flows: None,
            synth: None,
            train: TrainConfig::default(),
            sweep: true,
            zeta_grid: default_zeta_grid(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config; relative data paths resolve against the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.regions, &mut cfg.flows].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match (&self.regions, &self.flows, &self.synth) {
            (Some(_), Some(_), _) | (None, None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "give both `regions` and `flows` paths, or a `synth` section".into(),
                ))
            }
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.sweep && self.zeta_grid.is_empty() {
            return Err(Error::Config("zeta grid is empty".into()));
        }
        if self.zeta_grid.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
            return Err(Error::Config("zeta grid values must be >= 0".into()));
        }
        Ok(())
    }

    /// Evaluation settings with the band rule taken from training.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            tau_fraction: self.train.fairness.tau_fraction,
            ..self.eval.clone()
        }
    }

    pub fn load_inputs(&self) -> Result<(Vec<RegionProfile>, Vec<dataset::FlowRow>)> {
        match (&self.regions, &self.flows, &self.synth) {
            (Some(r), Some(f), _) => Ok((io::load_regions(r)?, io::load_flows(f)?)),
            (_, _, Some(s)) => {
                let (regions, flows) = synth::generate(s)?;
                Ok((regions.profiles, synth::to_rows(&flows)))
            }
            _ => Err(Error::Config("no input data configured".into())),
        }
    }

    pub fn prepare(&self) -> Result<PreparedData> {
        let (regions, rows) = self.load_inputs().map_err(Error::stage("ingest"))?;
        dataset::prepare(&regions, &rows, &self.train.split).map_err(Error::stage("prepare"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub zeta: f64,
    pub report: EvalReport,
}

/// Contents of `eval_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub format_version: u32,
    /// `sweep`, `fixed-zeta` or `eval`.
    pub mode: String,
    pub split: Part,
    pub model: LabeledReport,
    /// The ζ = 0 ablation, when the sweep trained one.
    pub baseline: Option<LabeledReport>,
    pub weight_decay: String,
}

pub const EVAL_FORMAT: u32 = 1;
pub const MANIFEST_FORMAT: u32 = 1;

pub fn model_label(zeta: f64) -> String {
    if zeta == 0.0 {
        "no-fairness (zeta=0)".to_string()
    } else {
        format!("fair (zeta={zeta})")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub checkpoint_format: u32,
    pub eval_format: u32,
    pub command: String,
    pub mode: String,
    pub config: ExperimentConfig,
    pub final_seed: u64,
    pub zeta: f64,
    pub feature_fingerprint: String,
    pub split_sizes: [usize; 3],
    pub stratified: bool,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

pub const ARTIFACTS: [&str; 6] = [
    "checkpoint.json",
    "train_log.jsonl",
    "eval_report.json",
    "sweep_curve.csv",
    "predictions.csv",
    "run_manifest.json",
];

pub struct ExperimentOutcome {
    pub model: Model,
    pub document: EvalDocument,
    pub sweep: Option<SweepResult>,
    pub out_dir: PathBuf,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn predictions_csv(samples: &[Sample], predicted: &[f64]) -> String {
    let mut out = String::from("origin_id,dest_id,observed,predicted\n");
    for (s, p) in samples.iter().zip(predicted) {
        out.push_str(&format!("{},{},{},{}\n", s.origin_id, s.dest_id, s.flow, p));
    }
    out
}

/// Ingest → group → split → normalize → sweep (optional) → train at ζ* →
/// test-split report, writing every artifact into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, exec: Exec) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let data = cfg.prepare()?;
    let eval_cfg = cfg.eval_config();

    let (run, zeta, seed, sweep, baseline) = if cfg.sweep {
        let outcome = sweep_zeta(&data, &cfg.train, &cfg.zeta_grid, exec).map_err(Error::stage("sweep"))?;
        let k = outcome.result.selected.ok_or_else(|| Error::Stage {
            stage: "sweep",
            source: Box::new(Error::Contract("every sweep cell failed".into())),
        })?;
        let cell = outcome.result.cells[k].clone();
        let baseline = match cfg.zeta_grid.iter().position(|&z| z == 0.0) {
            Some(b) if b != k => match &outcome.runs[b] {
                Some(r) => Some(LabeledReport {
                    label: model_label(0.0),
                    zeta: 0.0,
                    report: evaluate(&r.model, &data.test, &eval_cfg).map_err(Error::stage("evaluate"))?,
                }),
                None => None,
            },
            _ => None,
        };
        let mut runs = outcome.runs;
        // the selected cell already is the model trained at ζ* with its seed
        let run = runs[k].take().expect("selected cell has a model");
        (run, cell.zeta, cell.seed, Some(outcome.result), baseline)
    } else {
        let run = train(&data.train, &data.validation, &cfg.train).map_err(Error::stage("train"))?;
        (run, cfg.train.fairness.zeta, cfg.train.seed, None, None)
    };

    let report = evaluate(&run.model, &data.test, &eval_cfg).map_err(Error::stage("evaluate"))?;
    let document = EvalDocument {
        format_version: EVAL_FORMAT,
        mode: if cfg.sweep { "sweep" } else { "fixed-zeta" }.into(),
        split: Part::Test,
        model: LabeledReport {
            label: model_label(zeta),
            zeta,
            report,
        },
        baseline,
        weight_decay: "decoupled".into(),
    };

    let write = |name: &str| out_dir.join(name);
    Checkpoint::new(&run.model, &data.normalizer, seed, zeta)
        .save(&write("checkpoint.json"))
        .map_err(Error::stage("write"))?;
    let mut log_text = String::new();
    for row in &run.log {
        log_text.push_str(&serde_json::to_string(row).map_err(|e| Error::json(write("train_log.jsonl"), e))?);
        log_text.push('\n');
    }
    write_text(&write("train_log.jsonl"), &log_text).map_err(Error::stage("write"))?;
    write_json(&write("eval_report.json"), &document).map_err(Error::stage("write"))?;
    let curve = match &sweep {
        Some(s) => s.curve_csv(),
        None => {
            let v = evaluate(&run.model, &data.validation, &eval_cfg).map_err(Error::stage("evaluate"))?;
            SweepResult {
                cells: vec![SweepCell {
                    zeta,
                    seed,
                    pdp: v.pdp,
                    nrmse: v.nrmse,
                    mae: Some(v.mae),
                    error: None,
                }],
                selected: Some(0),
            }
            .curve_csv()
        }
    };
    write_text(&write("sweep_curve.csv"), &curve).map_err(Error::stage("write"))?;
    let preds = metrics::predict_split(&run.model, &data.test).map_err(Error::stage("evaluate"))?;
    let flows: Vec<f64> = preds.iter().map(|p| p.flow).collect();
    write_text(&write("predictions.csv"), &predictions_csv(&data.test, &flows)).map_err(Error::stage("write"))?;
    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT,
        checkpoint_format: crate::model::CHECKPOINT_FORMAT,
        eval_format: EVAL_FORMAT,
        command: if cfg.sweep { "sweep" } else { "train" }.into(),
        mode: document.mode.clone(),
        config: cfg.clone(),
        final_seed: seed,
        zeta,
        feature_fingerprint: dataset::feature_fingerprint(),
        split_sizes: [data.train.len(), data.validation.len(), data.test.len()],
        stratified: data.split.stratified,
        notes: vec![
            "weight decay is decoupled: p <- p - lr*wd*p before the Adam update".into(),
            format!(
                "tau = {} * mean loss per batch / split",
                cfg.train.fairness.tau_fraction
            ),
            "nrmse is normalized by the observed range".into(),
        ],
    };
    write_json(&write("run_manifest.json"), &manifest).map_err(Error::stage("write"))?;

    Ok(ExperimentOutcome {
        model: run.model,
        document,
        sweep,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Re-evaluates a saved checkpoint on the test split of the experiment it
/// came from.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalDocument> {
    let (ck, model) = Checkpoint::load_for_inference(checkpoint, None)?;
    let data = cfg.prepare()?;
    if data.normalizer != ck.normalizer {
        return Err(Error::Checkpoint(
            "normalizer statistics differ from the configured data; wrong config for this checkpoint?".into(),
        ));
    }
    let report = evaluate(&model, &data.test, &cfg.eval_config())?;
    Ok(EvalDocument {
        format_version: EVAL_FORMAT,
        mode: "eval".into(),
        split: Part::Test,
        model: LabeledReport {
            label: model_label(ck.zeta),
            zeta: ck.zeta,
            report,
        },
        baseline: None,
        weight_decay: "decoupled".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(zeta: f64, pdp: Option<f64>, nrmse: Option<f64>) -> SweepCell {
        SweepCell {
            zeta,
            seed: 0,
            pdp,
            nrmse,
            mae: Some(1.0),
            error: None,
        }
    }

    #[test]
    fn singleton_grid_selects_it() {
        assert_eq!(select_zeta(&[cell(0.0, Some(0.4), Some(0.1))]), Some(0));
    }

    #[test]
    fn equal_pdp_prefers_lower_nrmse() {
        let cells = [
            cell(0.0, Some(0.5), Some(0.1)),
            cell(0.1, Some(0.2), Some(0.3)),
            cell(0.2, Some(0.2), Some(0.25)),
        ];
        assert_eq!(select_zeta(&cells), Some(2));
    }

    #[test]
    fn failed_cells_are_excluded() {
        let mut bad = cell(0.3, Some(0.0), Some(0.0));
        bad.error = Some("diverged".into());
        let cells = [cell(0.0, Some(0.5), Some(0.1)), bad, cell(0.5, None, None)];
        assert_eq!(select_zeta(&cells), Some(0));
    }

    #[test]
    fn grid_is_eleven_tenths() {
        let g = default_zeta_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.batch_size = 3;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let e = ExperimentConfig::default();
        assert!(e.validate().is_err(), "no data source");
    }

    fn fixture() -> Vec<Sample> {
        let mut rng = rng::stream(9, domain::INIT, 99);
        (0..16)
            .map(|k| {
                let mut v = [0.0; crate::dataset::FEATURE_COUNT];
                for x in v.iter_mut().take(41) {
                    *x = rand::Rng::random_range(&mut rng, -1.0..1.0);
                }
                let group = Group::from_index(k % 3).unwrap();
                v[41 + group.index()] = 1.0;
                Sample {
                    origin_id: format!("o{k}"),
                    dest_id: format!("d{k}"),
                    features: FeatureVector(v),
                    flow: if k % 4 == 0 { 0.0 } else { (k % 7 + 1) as f64 },
                    group,
                }
            })
            .collect()
    }

    #[test]
    fn first_epoch_lowers_the_objective() {
        let samples = fixture();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            seed: 4,
            model: ModelConfig {
                hidden: 8,
                depth: 1,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut init_rng = rng::stream(cfg.seed, domain::INIT, 0);
        let before = Model::init(cfg.model.clone(), mean_positive_flow(&samples), &mut init_rng).unwrap();
        let after = train(&samples, &[], &cfg).unwrap().model;
        let l0 = full_batch_objective(&before, &samples, &cfg.fairness, 0).unwrap();
        let l1 = full_batch_objective(&after, &samples, &cfg.fairness, 0).unwrap();
        assert!(l1 < l0, "{l1} >= {l0}");
    }

    #[test]
    fn training_is_bitwise_repeatable_and_zeta_zero_skips_fairness() {
        let samples = fixture();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            model: ModelConfig {
                hidden: 8,
                depth: 1,
                ..ModelConfig::default()
            },
            fairness: FairnessConfig {
                zeta: 0.0,
                ..FairnessConfig::default()
            },
            ..TrainConfig::default()
        };
        let a = train(&samples, &samples, &cfg).unwrap();
        let b = train(&samples, &samples, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 5);
        assert!(a
            .log
            .iter()
            .all(|r| r.pdp_surrogate.is_none() && r.fairness_contribution == 0.0));
    }

    #[test]
    fn divergence_reports_epoch_and_last_finite_model() {
        let mut samples = fixture();
        samples[3].features.0[0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            model: ModelConfig {
                hidden: 4,
                depth: 1,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        match train(&samples, &[], &cfg) {
            Err(Error::Diverged { epoch, last_finite }) => {
                assert_eq!(epoch, 1);
                assert!(last_finite.params.tensors.iter().all(|t| t.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
