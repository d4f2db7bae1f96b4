//! Operator entry point: dataset generation, training, evaluation, and the
//! gradient-check battery.

mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use gait_core::checkpoint;
use gait_core::data::{load_dataset, synth::write_dataset};
use gait_core::eval::{embed_set, rank1_matrix, render_cells_csv, render_report, split_entries};
use gait_core::model::ModelParams;
use gait_core::seeds::substream;
use gait_core::train::{train_loop, LoopOptions, TrainSet, TrainState};

#[derive(Parser)]
#[command(
    name = "gait",
    about = "Gait-recognition workbench: synthetic data, training, cross-view evaluation, gradient checks",
    version
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML, key = value per section); defaults apply
    /// when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap for parallel sections (1 = fully serial).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-view dataset.
    GenData {
        /// Overwrite an existing non-empty dataset root.
        #[arg(long)]
        force: bool,
    },
    /// Train a model on the configured dataset split.
    Train {
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the cross-view rank-1 protocol.
    Eval {
        /// Checkpoint directory to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the finite-difference gradient-check battery.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.common.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;

    match cli.command {
        Command::GenData { force } => cmd_gen_data(&cfg, force),
        Command::Train { resume } => cmd_train(&cfg, resume),
        Command::Eval { checkpoint } => cmd_eval(&cfg, &checkpoint),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn cmd_gen_data(cfg: &RunConfig, force: bool) -> Result<ExitCode> {
    let root = &cfg.dataset.root;
    if root.exists() {
        let occupied = fs::read_dir(root)
            .map(|mut rd| rd.next().is_some())
            .unwrap_or(false);
        if occupied && !force {
            bail!(
                "dataset root {} is not empty; pass --force to overwrite",
                root.display()
            );
        }
    }
    let gen = cfg.gen_config()?;
    let mut rng = substream(cfg.seed, "data");
    write_dataset(root, &gen, &mut rng)?;
    let manifest = fs::read_to_string(root.join("manifest.txt"))
        .with_context(|| "reading freshly written manifest")?;
    print!("{manifest}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(cfg: &RunConfig, resume: Option<PathBuf>) -> Result<ExitCode> {
    let model_cfg = cfg.model_config();
    let index = load_dataset(&cfg.dataset.root, true)?;
    let set = TrainSet::load(&index, &cfg.train.train_seqs)?;

    let mut state = match &resume {
        None => TrainState::<f64>::new(&model_cfg, cfg.seed)?,
        Some(dir) => {
            let template = ModelParams::<f64>::init(&model_cfg, cfg.seed)?;
            checkpoint::load(dir, &template)?
        }
    };

    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output dir {}", cfg.out.display()))?;
    let metrics_path = cfg.out.join("metrics.csv");
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;

    let opts = LoopOptions {
        steps: cfg.train.steps.saturating_sub(state.step),
        workers: cfg.workers,
        checkpoint_dir: Some(cfg.out.clone()),
        checkpoint_every: cfg.train.checkpoint_every,
    };
    let history = train_loop(
        &mut state,
        &set,
        &cfg.batch_spec(),
        &model_cfg,
        &cfg.triplet_config(),
        &cfg.optim_config(),
        &opts,
        &mut metrics,
    )?;
    metrics.flush().ok();

    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "trained steps {}..{}: loss {:.6} -> {:.6} (metrics: {})",
            first.step,
            last.step,
            first.loss,
            last.loss,
            metrics_path.display()
        );
    } else {
        println!("nothing to do: checkpoint already at step {}", state.step);
    }
    println!("final checkpoint: {}", final_checkpoint_path(cfg, state.step).display());
    Ok(ExitCode::SUCCESS)
}

fn final_checkpoint_path(cfg: &RunConfig, step: u64) -> PathBuf {
    cfg.out.join(format!("ckpt-{step:06}"))
}

fn cmd_eval(cfg: &RunConfig, ckpt: &std::path::Path) -> Result<ExitCode> {
    let model_cfg = cfg.model_config();
    let template = ModelParams::<f64>::init(&model_cfg, cfg.seed)?;
    let state = checkpoint::load(ckpt, &template)?;

    let index = load_dataset(&cfg.dataset.root, true)?;
    let split = cfg.split_spec()?;
    let (gallery_entries, probe_entries) = split_entries(&index, &split)?;
    let (gallery, skipped_g) = embed_set(&gallery_entries, &state.params, &model_cfg, cfg.workers)?;
    let (probes, skipped_p) = embed_set(&probe_entries, &state.params, &model_cfg, cfg.workers)?;
    let mut skipped = skipped_g;
    skipped.extend(skipped_p);
    if !skipped.is_empty() {
        eprintln!(
            "warning: skipped {} sequences shorter than the clip length: {}",
            skipped.len(),
            skipped.join(", ")
        );
    }
    let report = rank1_matrix(&gallery, &probes, skipped)?;

    let table = render_report(&report, "model");
    print!("{table}");
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("report.txt"), &table)?;
    fs::write(cfg.out.join("report_cells.csv"), render_cells_csv(&report))?;

    // Embedding export: raw little-endian f64 records plus a text manifest,
    // gallery first, then probes.
    let mut bin = Vec::new();
    let mut manifest = Vec::new();
    gallery.export(&mut bin, &mut manifest)?;
    probes.export(&mut bin, &mut manifest)?;
    fs::write(cfg.out.join("embeddings.bin"), &bin)?;
    fs::write(cfg.out.join("embeddings.txt"), &manifest)?;

    println!(
        "report files: {}, {}",
        cfg.out.join("report.txt").display(),
        cfg.out.join("report_cells.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck() -> Result<ExitCode> {
    let results = gait_core::battery::run_battery();
    print!("{}", gait_core::battery::render_results(&results));
    let failures: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failures.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed checks: {}", failures.join(", "));
        Ok(ExitCode::FAILURE)
    }
}
