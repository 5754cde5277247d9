//! End-to-end run in one process: generate a small synthetic dataset,
//! train the matcher, pick the threshold on validation, and report test
//! metrics.
//!
//!     cargo run --release --example train_end_to_end

use textmatch::config::RunConfig;
use textmatch::datagen::{build_dataset, ProfileKind, Split};
use textmatch::eval::{evaluate_model, Criterion};
use textmatch::matcher::{MatcherParams, ModelKind};
use textmatch::train::train;

fn main() -> textmatch::Result<()> {
    let dir = std::env::temp_dir().join("textmatch_e2e");
    let mut run = RunConfig::defaults(ProfileKind::Synthetic);
    run.pairs = 300;
    run.seed = 11;
    run.max_epochs = 6;

    let manifest = build_dataset(&run.gen_spec(), &dir)?;
    println!(
        "dataset: {} samples under {}",
        manifest.entries.len(),
        dir.display()
    );

    let model_config = run.model_config()?;
    let train_set = manifest.load_samples(&dir, Some(Split::Train))?;
    let val_set = manifest.load_samples(&dir, Some(Split::Val))?;
    let initial = MatcherParams::init(&model_config, run.seed)?;
    let outcome = train(
        &train_set,
        Some(&val_set),
        &model_config,
        &run.train_config(),
        initial,
        ModelKind::CrossAttention,
    )?;
    for h in &outcome.history {
        println!(
            "epoch {:>2}  loss {:.4}  val_f1 {:.2}  tau {:.4}",
            h.epoch,
            h.mean_loss,
            h.val_f1.unwrap_or(f64::NAN),
            h.tau.unwrap_or(f64::NAN),
        );
    }

    let report = evaluate_model(
        &outcome.params,
        &model_config,
        &manifest,
        &dir,
        run.reduction,
        Criterion::F1,
        ModelKind::CrossAttention,
    )?;
    println!("\ntest-set report:\n{}", report.to_table());
    if let Some(tp) = report.throughput {
        println!("scoring throughput: {tp:.1} samples/sec");
    }
    Ok(())
}
