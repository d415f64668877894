//! `fairflow` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairflow::dataset::io;
use fairflow::explain::permutation_importance;
use fairflow::model::Checkpoint;
use fairflow::par::Exec;
use fairflow::synth::{self, SynthConfig};
use fairflow::trainer::{self, ExperimentConfig};
use fairflow::{report, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "fairflow",
    version,
    about = "Fairness-aware origin-destination flow prediction"
)]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic regions.csv and flows.csv.
    Synth(SynthArgs),
    /// Train (with the zeta sweep unless disabled) and write run artifacts.
    Train(TrainArgs),
    /// Run the zeta grid sweep and train the selected model.
    Sweep(TrainArgs),
    /// Evaluate a checkpoint on the test split of its experiment.
    Eval(CheckpointArgs),
    /// Permutation feature importance of a checkpoint.
    Explain(ExplainArgs),
    /// Print a summary table of a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Train once at this zeta instead of sweeping.
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    no_sweep: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    inner: CheckpointArgs,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
}

fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::OutputExists(path.to_path_buf()));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_experiment(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.train.split.seed = seed;
        if let Some(s) = cfg.synth.as_mut() {
            s.seed = seed;
        }
    }
    Ok(cfg)
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let c = &args.common;
    let text = std::fs::read_to_string(&c.config).map_err(|e| Error::Io {
        path: c.config.clone(),
        source: e,
    })?;
    let mut cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: c.config.clone(),
        source: e,
    })?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    create_dir(&c.out)?;
    let (regions, flows) = (c.out.join("regions.csv"), c.out.join("flows.csv"));
    guard(&regions, c.force)?;
    guard(&flows, c.force)?;
    let (r, f) = synth::generate(&cfg)?;
    io::write_regions(&regions, &r.profiles)?;
    io::write_flows(&flows, &synth::to_rows(&f))?;
    log::info!(
        "wrote {} regions and {} pairs to {}",
        r.profiles.len(),
        f.len(),
        c.out.display()
    );
    Ok(())
}

fn run_train(args: &TrainArgs, force_sweep: bool) -> Result<()> {
    let c = &args.common;
    let mut cfg = load_experiment(c)?;
    if let Some(z) = args.zeta {
        cfg.train.fairness.zeta = z;
        cfg.sweep = false;
    }
    if args.no_sweep {
        cfg.sweep = false;
    }
    if force_sweep {
        if args.no_sweep || args.zeta.is_some() {
            return Err(Error::Config(
                "`sweep` cannot be combined with --no-sweep or --zeta".into(),
            ));
        }
        cfg.sweep = true;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    create_dir(&c.out)?;
    guard(&c.out.join("run_manifest.json"), c.force)?;
    let outcome = trainer::run_experiment(&cfg, &c.out, Exec::default())?;
    let r = &outcome.document.model.report;
    log::info!(
        "zeta={} test nrmse={:?} pdp={:?} mae={:.4}",
        outcome.document.model.zeta,
        r.nrmse,
        r.pdp,
        r.mae
    );
    Ok(())
}

fn run_eval(args: &CheckpointArgs) -> Result<()> {
    let c = &args.common;
    let cfg = load_experiment(c)?;
    create_dir(&c.out)?;
    let path = c.out.join("eval_report.json");
    guard(&path, c.force)?;
    let doc = trainer::evaluate_checkpoint(&cfg, &args.checkpoint)?;
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    write(&path, &(text + "\n"))
}

fn run_explain(args: &ExplainArgs) -> Result<()> {
    let c = &args.inner.common;
    let cfg = load_experiment(c)?;
    create_dir(&c.out)?;
    let csv = c.out.join("importance.csv");
    guard(&csv, c.force)?;
    let (ck, model) = Checkpoint::load_for_inference(&args.inner.checkpoint, None)?;
    let data = cfg.prepare()?;
    if data.normalizer != ck.normalizer {
        return Err(Error::Checkpoint(
            "normalizer statistics differ from the configured data; wrong config for this checkpoint?".into(),
        ));
    }
    let seed = c.seed.unwrap_or(ck.seed);
    let rep = permutation_importance(&model, &data.test, args.repetitions, seed, Exec::default())?;
    rep.write_csv(&csv)?;
    let json = c.out.join("importance.json");
    let text = serde_json::to_string_pretty(&rep).map_err(|e| Error::Json {
        path: json.clone(),
        source: e,
    })?;
    write(&json, &(text + "\n"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => run_synth(&a),
        Command::Train(a) => run_train(&a, false),
        Command::Sweep(a) => run_train(&a, true),
        Command::Eval(a) => run_eval(&a),
        Command::Explain(a) => run_explain(&a),
        Command::Report { run_dir } => {
            print!("{}", report::report(&run_dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
