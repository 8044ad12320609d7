//! The `diffad` binary: subcommands, exit codes and environment overrides.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{small_corpus, tiny_config};

fn diffad(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_diffad"));
    cmd.args(args)
        .env_remove("DIFFAD_DATASET")
        .env_remove("DIFFAD_OUTPUT")
        .env("RUST_LOG", "warn");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dataset_problems_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let missing = dir.path().join("nowhere");
    let out = run(&mut diffad(&[
        "train",
        "--run-dir",
        s(&run_dir),
        "--dataset",
        s(&missing),
    ]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let out = run(&mut diffad(&["train", "--run-dir", s(&run_dir)]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DIFFAD_DATASET"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = run(&mut diffad(&["train", "--run-dir", s(&run_dir), "--config", s(&bad)]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_inputs_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&mut diffad(&["eval", "--scores", s(&dir.path().join("none.csv"))]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generate_writes_a_clean_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    let out = run(&mut diffad(&[
        "generate",
        "--out",
        s(&root),
        "--kind",
        "dropped_band",
        "--n-train",
        "3",
        "--n-normal-test",
        "2",
        "--n-anomaly-test",
        "2",
    ]));
    assert!(out.status.success());
    let manifest = fs::read_to_string(root.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 7);
    assert!(manifest
        .lines()
        .filter(|l| l.contains(",train,"))
        .all(|l| l.contains(",normal")));
    assert!(fs::read_dir(root.join("synth/train")).unwrap().count() == 3);
    assert_eq!(
        fs::read_to_string(root.join("anomaly_truth.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 2
    );
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path());
    let cfg = tiny_config(&data);
    let mut file_cfg = cfg.clone();
    file_cfg.paths.dataset = None;
    let config = dir.path().join("tiny.toml");
    fs::write(&config, file_cfg.to_toml().unwrap()).unwrap();
    let p = |name: &str| dir.path().join(name);

    // dataset from the environment only
    let out = run(diffad(&["train", "--config", s(&config), "--run-dir", s(&p("run"))]).env("DIFFAD_DATASET", &data));
    assert!(out.status.success());
    let ckpt = p("run/ckpt_6.bin");
    assert!(ckpt.exists() && p("run/ckpt_3.bin").exists() && p("run/train_log.csv").exists());

    let common = ["--config", s(&config), "--dataset", s(&data)];
    let score = |name: &str| {
        let (csv, cache) = (p(name), p("cache.bin"));
        let mut args = vec!["score"];
        args.extend(common);
        args.extend([
            "--checkpoint",
            s(&ckpt),
            "--out",
            s(&csv),
            "--cache",
            s(&cache),
            "--jobs",
            "1",
        ]);
        assert!(run(&mut diffad(&args)).status.success());
        fs::read(csv).unwrap()
    };
    assert_eq!(score("a.csv"), score("b.csv"));

    let out = run(&mut diffad(&[
        "eval",
        "--scores",
        s(&p("a.csv")),
        "--manifest",
        s(&data.join("manifest.csv")),
        "--out",
        s(&p("report.csv")),
    ]));
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("synth") && table.contains("hmean"));

    let out = run(&mut diffad(&[
        "sweep",
        "--cache",
        s(&p("cache.bin")),
        "--out",
        s(&p("sweep.csv")),
    ]));
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(p("sweep.csv")).unwrap().lines().count(), 1 + 66);

    let clip = fs::read_dir(data.join("synth/test"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let viz_dir = p("viz");
    let mut args = vec!["viz"];
    args.extend(common);
    args.extend(["--checkpoint", s(&ckpt), "--clip", s(&clip), "--out-dir", s(&viz_dir)]);
    assert!(run(&mut diffad(&args)).status.success());
    assert_eq!(fs::read_dir(p("viz")).unwrap().count(), 8);

    let bench_csv = p("bench.csv");
    let mut args = vec!["bench"];
    args.extend(common);
    args.extend(["--checkpoint", s(&ckpt), "--clips", "1", "--out", s(&bench_csv)]);
    let out = run(&mut diffad(&args));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("call ratio 70.00"));
}

#[test]
fn seed_flag_changes_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(dir.path());
    let mut cfg = tiny_config(&data);
    cfg.train.total_steps = 2;
    let config = dir.path().join("tiny.toml");
    fs::write(&config, cfg.to_toml().unwrap()).unwrap();
    let losses = |seed: &str, name: &str| {
        let run_dir = dir.path().join(name);
        let out = run(&mut diffad(&[
            "train",
            "--config",
            s(&config),
            "--seed",
            seed,
            "--run-dir",
            s(&run_dir),
        ]));
        assert!(out.status.success());
        let snapshot = diffad::config::RunConfig::load(run_dir.join("config.toml")).unwrap();
        assert_eq!(snapshot.seed, seed.parse::<u64>().unwrap());
        let log = fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
        log.lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(losses("5", "a"), losses("5", "b"));
    assert_ne!(losses("5", "c"), losses("6", "d"));
}
