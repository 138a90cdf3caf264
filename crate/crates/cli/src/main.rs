//! `pgcon`: synthetic data, pretraining, evaluation and snapshot analysis.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pgcon::config::{EvalTask, RunConfig};
use pgcon::contrastive::LossMode;
use pgcon::eval::{
    embed_images, linear_probe, snapshot_pca_csv, snapshot_stats, zero_shot_eval, LabeledEmbeddingSet, ANALYSIS_HEADER,
};
use pgcon::nn::checkpoint::{encoder_from_tensors, infer_encoder_config, load_tensors};
use pgcon::synth::{generate_dataset, load_corpus, validate_record, write_dataset, NUM_CLASSES};
use pgcon::trainer::{read_snapshots_csv, write_snapshots_csv, Snapshot, Trainer};
use pgcon::{Encoder32, Error};

const CONFIG_FILE: &str = "config.toml";

#[derive(Parser)]
#[command(name = "pgcon", version, about = "Prior-guided contrastive pretraining at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic anomaly dataset.
    Synth(SynthArgs),
    /// Pretrain an encoder with PGCon or WINCon.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint with weighted kNN or a linear probe.
    Eval(EvalArgs),
    /// Alignment, uniformity, cosine and PCA tables from snapshot files.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of images.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Side length in pixels.
    #[arg(long)]
    image_size: Option<usize>,
    /// Class proportions, comma separated.
    #[arg(long, value_delimiter = ',')]
    class_mix: Option<Vec<f64>>,
    /// Lower the anomaly a* margin to the hard-mode value.
    #[arg(long)]
    hard: bool,
    /// Flat directory without labels.
    #[arg(long)]
    unlabeled: bool,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset directory written by `synth` (or any image folder).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// pgcon or wincon.
    #[arg(long)]
    mode: Option<LossMode>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Cap on optimisation steps; the schedule spans the capped run.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// View-construction threads (1 is bit-reproducible; so is any other value).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint written by an identical configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled reference corpus.
    #[arg(long)]
    train: PathBuf,
    /// Labeled query corpus.
    #[arg(long)]
    test: PathBuf,
    /// knn or linear.
    #[arg(long)]
    task: Option<EvalTask>,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    knn_tau: Option<f64>,
    /// Directory for the report and resolved config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Snapshot CSV files.
    #[arg(required = true)]
    snapshots: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| {
            c.downcast_ref::<Error>()
                .map(|e| e.exit_code() as u8)
                .or_else(|| c.downcast_ref::<std::io::Error>().map(|_| 3))
        })
        .unwrap_or(1)
}

fn base_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display())),
        None => Ok(RunConfig::default()),
    }
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.save(out.join(CONFIG_FILE))?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    let s = &mut cfg.synth;
    if let Some(v) = a.n {
        s.n_images = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.image_size {
        s.image_size = v;
    }
    if let Some(v) = a.class_mix {
        if v.len() != NUM_CLASSES {
            return Err(Error::Config {
                field: "synth.class_mix".into(),
                reason: format!("expected {NUM_CLASSES} proportions, got {}", v.len()),
            }
            .into());
        }
        s.class_mix.copy_from_slice(&v);
    }
    s.hard_mode |= a.hard;
    s.validate()?;
    prepare_out(&a.out, &cfg)?;
    let records = generate_dataset(&cfg.synth)?;
    write_dataset(&records, Some(&cfg.synth), &a.out, !a.unlabeled)?;
    let mut counts = [0usize; NUM_CLASSES];
    records.iter().for_each(|r| counts[r.label] += 1);
    let margin = cfg.synth.effective_margin();
    let failed = records.iter().filter(|r| !validate_record(r, margin).passed).count();
    println!("wrote {} images to {}", records.len(), a.out.display());
    for (c, n) in counts.iter().enumerate() {
        println!("  class {c}: {n}");
    }
    println!("  validation failures: {failed}");
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    let t = &mut cfg.train;
    if let Some(v) = a.mode {
        t.loss.mode = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.max_steps {
        t.max_steps = Some(v);
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr_max = v;
    }
    if let Some(v) = a.workers {
        t.workers = v;
    }
    if let Some(v) = a.snapshot_every {
        t.snapshot_every = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    let corpus = load_corpus(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let n = corpus.len();
    cfg.train.validate(n)?;
    prepare_out(&a.out, &cfg)?;
    let ckpt_dir = a.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;

    let mut trainer = match &a.resume {
        Some(path) => Trainer::<f32>::load_checkpoint(cfg.train.clone(), n, path)?,
        None => Trainer::<f32>::new(cfg.train.clone(), n)?,
    };
    let snap_path = a.out.join("snapshots.csv");
    let mut snapshots: Vec<Snapshot> = if a.resume.is_some() && snap_path.exists() {
        let start = trainer.progress().step;
        read_snapshots_csv(&snap_path)?.into_iter().filter(|s| s.step <= start).collect()
    } else {
        Vec::new()
    };
    let metrics_path = a.out.join("metrics.jsonl");
    let mut metrics = if a.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&metrics_path)?
    } else {
        File::create(&metrics_path)?
    };

    let images = &corpus.images;
    let labels = &corpus.labels;
    if snapshots.iter().all(|s| s.step != trainer.progress().step) {
        snapshots.push(trainer.snapshot(images, labels)?);
        write_snapshots_csv(&snap_path, &snapshots)?;
    }
    let (snap_every, ckpt_every) = (cfg.train.snapshot_every, cfg.train.checkpoint_every);
    let total = trainer.total_steps();
    println!("pretraining {:?} on {n} images for {total} steps", cfg.train.loss.mode);
    while let Some(m) = trainer.step(images)? {
        writeln!(metrics, "{}", serde_json::to_string(&m)?)?;
        let done = m.step + 1;
        if snap_every > 0 && done % snap_every == 0 && done < total {
            snapshots.push(trainer.snapshot(images, labels)?);
            write_snapshots_csv(&snap_path, &snapshots)?;
        }
        if ckpt_every > 0 && done % ckpt_every == 0 && done < total {
            trainer.save_checkpoint(ckpt_dir.join(format!("step_{done:06}.pgcw")))?;
        }
        if done % 50 == 0 || done == total {
            println!("step {done}/{total} loss {:.4} lr {:.6}", m.loss, m.lr);
        }
    }
    if snapshots.last().is_none_or(|s| s.step != trainer.progress().step) {
        snapshots.push(trainer.snapshot(images, labels)?);
        write_snapshots_csv(&snap_path, &snapshots)?;
    }
    let last = ckpt_dir.join("final.pgcw");
    trainer.save_checkpoint(&last)?;
    println!("wrote {}", last.display());
    Ok(())
}

fn load_encoder(path: &Path) -> Result<Encoder32> {
    let tensors = load_tensors(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = infer_encoder_config(&tensors, "")?;
    Ok(encoder_from_tensors(&tensors, &cfg)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = base_config(&a.config)?;
    if let Some(v) = a.task {
        cfg.eval.task = v;
    }
    if let Some(v) = a.knn_k {
        cfg.eval.knn_k = v;
    }
    if let Some(v) = a.knn_tau {
        cfg.eval.knn_tau = v;
    }
    if let Some(out) = &a.out {
        prepare_out(out, &cfg)?;
    }
    let encoder = load_encoder(&a.checkpoint)?;
    let train = load_corpus(&a.train).with_context(|| format!("loading {}", a.train.display()))?;
    let test = load_corpus(&a.test).with_context(|| format!("loading {}", a.test.display()))?;
    let (train_labels, test_labels) = (train.require_labels()?, test.require_labels()?);
    let ecfg = cfg.eval_config();
    let (json, top1) = match cfg.eval.task {
        EvalTask::Knn => {
            let r = zero_shot_eval(&encoder, (&train.images, &train_labels), (&test.images, &test_labels), &ecfg)?;
            (serde_json::to_string_pretty(&r)?, r.top1_accuracy)
        }
        EvalTask::Linear => {
            let tr = LabeledEmbeddingSet::new(embed_images(&encoder, &train.images, &ecfg.views)?, train_labels)?;
            let te = LabeledEmbeddingSet::new(embed_images(&encoder, &test.images, &ecfg.views)?, test_labels)?;
            let r = linear_probe(&tr, &te, &cfg.eval.probe)?;
            (serde_json::to_string_pretty(&r)?, r.best_val_accuracy)
        }
    };
    println!("top-1 accuracy: {top1:.4}");
    if let Some(out) = &a.out {
        fs::write(out.join("eval_report.json"), &json)?;
    } else {
        println!("{json}");
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let mut snapshots = Vec::new();
    for path in &a.snapshots {
        let s = read_snapshots_csv(path).with_context(|| format!("reading {}", path.display()))?;
        snapshots.extend(s);
    }
    fs::create_dir_all(&a.out)?;
    let mut table = String::from(ANALYSIS_HEADER);
    table.push('\n');
    println!("{ANALYSIS_HEADER}");
    for (i, s) in snapshots.iter().enumerate() {
        let row = snapshot_stats(s).csv_row();
        println!("{row}");
        table.push_str(&row);
        table.push('\n');
        fs::write(a.out.join(format!("pca_{i:03}_step_{:06}.csv", s.step)), snapshot_pca_csv(s)?)?;
    }
    fs::write(a.out.join("analysis.csv"), table)?;
    Ok(())
}
