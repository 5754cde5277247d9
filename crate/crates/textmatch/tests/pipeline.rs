//! End-to-end command-line pipeline tests: gen → train → score → eval on a
//! small dataset, plus the exit-code contract for error paths.

use std::path::Path;
use std::process::{Command, Output};

fn textmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gen_small(dir: &Path) {
    let out = textmatch(&[
        "gen",
        "--profile",
        "date",
        "--pairs",
        "30",
        "--seed",
        "9",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn gen_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    gen_small(dir.path());
    let out = textmatch(&[
        "gen",
        "--profile",
        "date",
        "--pairs",
        "30",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("--force"));

    // With --force the same command succeeds and reproduces the manifest.
    let before = std::fs::read(dir.path().join("manifest.tsv")).unwrap();
    let out = textmatch(&[
        "gen",
        "--profile",
        "date",
        "--pairs",
        "30",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
        "--force",
    ]);
    assert!(out.status.success());
    let after = std::fs::read(dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn unknown_profile_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = textmatch(&[
        "gen",
        "--profile",
        "cheques",
        "--pairs",
        "5",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cheques"));
}

#[test]
fn missing_checkpoint_exits_two_with_path() {
    let out = textmatch(&[
        "score",
        "--checkpoint",
        "/nonexistent/model.txmc",
        "--image",
        "/nonexistent/img.pgm",
        "--text",
        "151219",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/model.txmc"));
}

#[test]
fn full_pipeline_runs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data);
    let manifest = data.join("manifest.tsv");

    // Train a tiny model for a couple of epochs.
    let ckpt = dir.path().join("model.txmc");
    let train_args = [
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--encoder",
        "toy",
        "--d-t",
        "16",
        "--d-i",
        "16",
        "--d-att",
        "8",
        "--max-epochs",
        "2",
        "--seed",
        "4",
        "--out",
        ckpt.to_str().unwrap(),
    ];
    let out = textmatch(&train_args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("epoch"));
    assert!(ckpt.exists());
    assert!(ckpt.with_file_name("model.txmc.config").exists());

    // Same seed, second run: byte-identical checkpoint.
    let ckpt2 = dir.path().join("model2.txmc");
    let mut again = train_args;
    again[again.len() - 1] = ckpt2.to_str().unwrap();
    let out = textmatch(&again);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(&ckpt2).unwrap()
    );

    // Score one generated image against matching and perturbed texts.
    let sample_image = data.join("images/000000.pgm");
    let manifest_text = std::fs::read_to_string(&manifest).unwrap();
    let first_record = manifest_text
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap();
    let text = first_record.split('\t').nth(1).unwrap();
    let csv = dir.path().join("attention.csv");
    let out = textmatch(&[
        "score",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        sample_image.to_str().unwrap(),
        "--text",
        text,
        "--dump-attention",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.contains("score=") && line.contains("tau=") && line.contains("label="));
    let heat = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(heat.lines().count(), 6, "s_t rows of attention");
    assert_eq!(heat.lines().next().unwrap().split(',').count(), 8, "s_i columns");

    // Sum reduction on a k-character text is k × the mean reduction.
    let score_of = |reduction: &str| -> f64 {
        let out = textmatch(&[
            "score",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--image",
            sample_image.to_str().unwrap(),
            "--text",
            "1512",
            "--reduction",
            reduction,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let line = stdout(&out);
        let field = line.split_whitespace().next().unwrap();
        field.trim_start_matches("score=").parse().unwrap()
    };
    let mean = score_of("mean");
    let sum = score_of("sum");
    assert!(
        (sum - 4.0 * mean).abs() < 1e-9,
        "sum {sum} vs 4x mean {mean}"
    );

    // Out-of-alphabet text is an input error (exit 2).
    let out = textmatch(&[
        "score",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        sample_image.to_str().unwrap(),
        "--text",
        "15x219",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("'x'"));

    // Evaluate twice: identical reports, in both formats.
    let report = dir.path().join("report.kv");
    let eval_args = [
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ];
    let out = textmatch(&eval_args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("tau"));
    let kv1 = std::fs::read_to_string(&report).unwrap();
    assert!(kv1.contains("f1_pct="));
    let table = std::fs::read_to_string(dir.path().join("report.kv.table")).unwrap();
    assert!(table.contains("TP"));
    let out = textmatch(&eval_args);
    assert!(out.status.success());
    let kv2 = std::fs::read_to_string(&report).unwrap();
    assert_eq!(kv1, kv2, "reports from identical inputs must be identical");

    // Naive baseline dispatch works on the same checkpoint.
    let out = textmatch(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--report",
        dir.path().join("naive.kv").to_str().unwrap(),
        "--baseline",
        "naive",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txmc");
    std::fs::write(&bad, b"not a checkpoint at all").unwrap();
    let out = textmatch(&[
        "score",
        "--checkpoint",
        bad.to_str().unwrap(),
        "--image",
        "/nonexistent.pgm",
        "--text",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("magic"));
}

#[test]
fn seed_env_var_is_a_default_override() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let run = |out_dir: &Path, env_seed: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_textmatch"));
        cmd.args([
            "gen",
            "--profile",
            "date",
            "--pairs",
            "10",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .env("TEXTMATCH_SEED", env_seed);
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&out_a, "5");
    run(&out_b, "6");
    let a = std::fs::read_to_string(out_a.join("manifest.tsv")).unwrap();
    let b = std::fs::read_to_string(out_b.join("manifest.tsv")).unwrap();
    assert!(a.contains("# seed=5"));
    assert!(b.contains("# seed=6"));
    assert_ne!(a, b);

    // An explicit --seed flag beats the environment.
    let out_c = dir.path().join("c");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_textmatch"));
    cmd.args([
        "gen",
        "--profile",
        "date",
        "--pairs",
        "10",
        "--seed",
        "5",
        "--out",
        out_c.to_str().unwrap(),
    ])
    .env("TEXTMATCH_SEED", "777");
    assert!(cmd.output().unwrap().status.success());
    let c = std::fs::read_to_string(out_c.join("manifest.tsv")).unwrap();
    assert_eq!(a, c);
}
