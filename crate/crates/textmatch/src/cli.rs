//! The `textmatch` command line: gen / train / score / eval subcommands
//! over the library. Every run is reproducible from (args, seed, inputs);
//! the canonical configuration echo is written beside each artifact.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::datagen::{DatasetManifest, ProfileKind, Split};
use crate::embed::encode_text;
use crate::error::{Result, TmError};
use crate::eval::{evaluate_model, Criterion};
use crate::image::{preprocess_image, GrayImage};
use crate::matcher::{classify, cross_attention_score, ModelKind, Reduction};
use crate::tensor::Tape;
use crate::train::{load_checkpoint, save_checkpoint, train};

#[derive(Parser)]
#[command(
    name = "textmatch",
    about = "Image/text matching: dataset generation, training, scoring, evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset (images + manifest).
    Gen(GenArgs),
    /// Train a matcher on a generated manifest.
    Train(TrainArgs),
    /// Score one image/text pair with a trained checkpoint.
    Score(ScoreArgs),
    /// Evaluate a checkpoint against a manifest.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// key=value configuration file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides config file and TEXTMATCH_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonConfig {
    /// defaults(profile) <- TEXTMATCH_SEED <- config file <- flags.
    fn build(&self, profile: ProfileKind, overrides: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let content = fs::read_to_string(path).map_err(|e| {
                    TmError::Input(format!("cannot read config {}: {e}", path.display()))
                })?;
                let mut base = RunConfig::parse(&content, &path.display().to_string())?;
                if !content
                    .lines()
                    .any(|l| l.trim_start().starts_with("profile"))
                {
                    base.profile = profile;
                }
                base
            }
            None => RunConfig::defaults(profile),
        };
        for (key, value) in overrides {
            if let Some(v) = value {
                config
                    .set_flag(key, v)
                    .map_err(|e| TmError::Input(format!("--{key}: {e}")))?;
            }
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

impl RunConfig {
    fn set_flag(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply(&format!("{key}={value}"), "flag")
    }
}

#[derive(Args)]
struct GenArgs {
    /// Dataset profile: date, synthetic, or iam.
    #[arg(long)]
    profile: String,
    /// Matching pairs to generate (dataset holds 2x this many samples).
    #[arg(long)]
    pairs: Option<usize>,
    /// Negative mode for synthetic/iam profiles.
    #[arg(long)]
    neg_mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
    /// IAM words index (iam profile).
    #[arg(long)]
    iam_words: Option<PathBuf>,
    /// IAM image directory (iam profile).
    #[arg(long)]
    iam_images: Option<PathBuf>,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest produced by `gen`.
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Model kind: cross-attention (default) or naive.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    reduction: Option<String>,
    #[arg(long)]
    d_t: Option<usize>,
    #[arg(long)]
    d_i: Option<usize>,
    #[arg(long)]
    d_att: Option<usize>,
    #[arg(long)]
    s_t: Option<usize>,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct ScoreArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grayscale image (PGM).
    #[arg(long)]
    image: PathBuf,
    /// Candidate text.
    #[arg(long)]
    text: String,
    /// Override the reduction stored with the checkpoint.
    #[arg(long)]
    reduction: Option<String>,
    /// Write the attention heat map (s_t rows x s_i columns) as CSV.
    #[arg(long)]
    dump_attention: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Report output path (key=value; a .table twin is written too).
    #[arg(long)]
    report: PathBuf,
    /// Threshold criterion: f1 (default) or cost.
    #[arg(long)]
    criterion: Option<String>,
    /// Evaluate the naive averaged-cosine baseline head instead.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    reduction: Option<String>,
}

/// Parses arguments and runs one subcommand, translating errors into exit
/// codes (clap itself exits with 2 on usage errors).
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let profile = ProfileKind::parse(&args.profile)?;
    let config = args.common.build(
        profile,
        &[
            ("profile", Some(args.profile.clone())),
            ("pairs", args.pairs.map(|v| v.to_string())),
            ("neg_mode", args.neg_mode.clone()),
            (
                "iam_words",
                args.iam_words.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "iam_images",
                args.iam_images.as_ref().map(|p| p.display().to_string()),
            ),
        ],
    )?;
    if args.out.exists() && args.out.join("manifest.tsv").exists() && !args.force {
        return Err(TmError::Input(format!(
            "output directory {} already holds a dataset; pass --force to overwrite",
            args.out.display()
        )));
    }
    let manifest = crate::datagen::build_dataset(&config.gen_spec(), &args.out)?;
    config.write_echo(&args.out.join("manifest.tsv"))?;
    let count = |s: Split| manifest.entries_for(s).count();
    println!(
        "generated {} samples ({} pairs): {} train / {} val / {} test",
        manifest.entries.len(),
        config.pairs,
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
    );
    println!("manifest: {}", args.out.join("manifest.tsv").display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let profile = ProfileKind::parse(&manifest.profile)?;
    let config = args.common.build(
        profile,
        &[
            ("model", args.model.clone()),
            ("encoder", args.encoder.clone()),
            ("lr", args.lr.map(|v| v.to_string())),
            ("momentum", args.momentum.map(|v| v.to_string())),
            ("margin", args.margin.map(|v| v.to_string())),
            ("alpha", args.alpha.map(|v| v.to_string())),
            ("batch_size", args.batch_size.map(|v| v.to_string())),
            ("max_epochs", args.max_epochs.map(|v| v.to_string())),
            ("reduction", args.reduction.clone()),
            ("d_t", args.d_t.map(|v| v.to_string())),
            ("d_i", args.d_i.map(|v| v.to_string())),
            ("d_att", args.d_att.map(|v| v.to_string())),
            ("s_t", args.s_t.map(|v| v.to_string())),
        ],
    )?;
    // Configuration problems must surface before any epoch runs.
    let model_config = config.model_config()?;
    if manifest.alphabet != model_config.alphabet {
        return Err(TmError::Config(format!(
            "manifest alphabet {:?} does not match profile alphabet {:?}",
            manifest.alphabet.spec(),
            model_config.alphabet.spec()
        )));
    }
    if config.profile != profile {
        return Err(TmError::Config(format!(
            "config profile {} does not match manifest profile {}",
            config.profile.name(),
            manifest.profile
        )));
    }

    let base_dir = args
        .manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let train_set = manifest.load_samples(&base_dir, Some(Split::Train))?;
    let val_set = manifest.load_samples(&base_dir, Some(Split::Val))?;
    let val_ref = (!val_set.is_empty()).then_some(val_set.as_slice());

    let initial = crate::matcher::MatcherParams::init(&model_config, config.seed)?;
    let outcome = train(
        &train_set,
        val_ref,
        &model_config,
        &config.train_config(),
        initial,
        config.model,
    )?;
    for h in &outcome.history {
        match (h.val_f1, h.tau) {
            (Some(f1), Some(tau)) => println!(
                "epoch {:>3}  loss {:.6}  val_f1 {:.2}  tau {:.4}",
                h.epoch, h.mean_loss, f1, tau
            ),
            _ => println!("epoch {:>3}  loss {:.6}", h.epoch, h.mean_loss),
        }
    }
    save_checkpoint(
        &outcome.params,
        &outcome.history,
        outcome.tau,
        &config.canonical(),
        &args.out,
    )?;
    config.write_echo(&args.out)?;
    println!(
        "checkpoint: {} (selected epoch {}, tau {:.4})",
        args.out.display(),
        outcome.best_epoch,
        outcome.tau
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let config = RunConfig::parse(&checkpoint.config_echo, "checkpoint")?;
    let model_config = config.model_config()?;
    let params = checkpoint.into_params(&model_config)?;

    let image = GrayImage::load_pgm(&args.image)?;
    let img = preprocess_image(
        &image,
        model_config.encoder.image_h,
        model_config.encoder.image_w,
    )?;
    let text = encode_text(&args.text, &model_config.alphabet, model_config.s_t)?;
    let reduction = match &args.reduction {
        Some(r) => Reduction::parse(r)?,
        None => config.reduction,
    };

    // Build the augmented embeddings once, reusing them for the attention
    // dump as well as the score.
    let mut tape = Tape::new();
    let ids = params.register(&mut tape, false);
    let img_id = tape.constant(img);
    let j_raw = crate::embed::encode_image(&mut tape, img_id, &ids.encoder, &model_config.encoder)?;
    let j = tape.add(j_raw, ids.pos_i)?;
    let t_raw = tape.row_gather(ids.t_emb, &text.indices)?;
    let t = tape.add(t_raw, ids.pos_t)?;
    let score = match config.model {
        ModelKind::CrossAttention => {
            let out = cross_attention_score(
                tape.value(j),
                tape.value(t),
                &text.pad_mask,
                &params,
                reduction,
            )?;
            if let Some(path) = &args.dump_attention {
                fs::write(path, out.attention_csv())?;
                println!("attention: {}", path.display());
            }
            out.score
        }
        ModelKind::Naive => {
            let s = crate::matcher::naive_score(&mut tape, j, t, &text.pad_mask)?;
            tape.value(s).data()[0]
        }
    };
    let label = classify(score, checkpoint.tau);
    println!(
        "score={score:.6} tau={:.6} label={label}",
        checkpoint.tau
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let config = RunConfig::parse(&checkpoint.config_echo, "checkpoint")?;
    let model_config = config.model_config()?;
    let params = checkpoint.into_params(&model_config)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let base_dir = args
        .manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let criterion = match &args.criterion {
        Some(c) => Criterion::parse(c)?,
        None => config.criterion,
    };
    let reduction = match &args.reduction {
        Some(r) => Reduction::parse(r)?,
        None => config.reduction,
    };
    let kind = match &args.baseline {
        Some(b) => ModelKind::parse(b)?,
        None => config.model,
    };

    let report = evaluate_model(
        &params,
        &model_config,
        &manifest,
        &base_dir,
        reduction,
        criterion,
        kind,
    )?;
    fs::write(&args.report, report.to_kv())?;
    let mut table_path = args.report.file_name().unwrap_or_default().to_os_string();
    table_path.push(".table");
    fs::write(args.report.with_file_name(table_path), report.to_table())?;
    config.write_echo(&args.report)?;

    print!("{}", report.to_table());
    if let Some(tp) = report.throughput {
        println!("throughput: {tp:.1} samples/sec");
    }
    Ok(())
}
