//! End-to-end tests of the command-line harness at micro scale.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as ProcCommand;

use clap::Parser;
use mudaf_lab::cli::{run, Cli};
use mudaf_lab::corpus::{Corpus, CorpusConfig};
use mudaf_lab::model::ModelConfig;
use mudaf_lab::train::{LrSchedule, TrainConfig};

fn cli(args: &[&str]) -> mudaf_lab::Result<()> {
    let mut full = vec!["mudaf-lab"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full).expect("argument parsing"))
}

fn write_micro_configs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let corpus_cfg = CorpusConfig { n_passages: 3, ..CorpusConfig::default() };
    let corpus_path = dir.join("corpus.json");
    fs::write(&corpus_path, serde_json::to_string(&corpus_cfg).unwrap()).unwrap();

    let vocab = Corpus::new(corpus_cfg).unwrap().vocab().size();
    let model_path = dir.join("model.json");
    fs::write(&model_path, serde_json::to_string(&ModelConfig::micro(vocab)).unwrap()).unwrap();

    let train_cfg = TrainConfig {
        steps: 4,
        batch_size: 2,
        lr: 1e-3,
        schedule: LrSchedule::Constant,
        ..TrainConfig::default()
    };
    let train_path = dir.join("train.json");
    fs::write(&train_path, serde_json::to_string(&train_cfg).unwrap()).unwrap();
    (corpus_path, model_path, train_path)
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn gen_data_is_deterministic_and_guards_overwrites() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.jsonl");
    let out_b = dir.path().join("b.jsonl");
    cli(&["gen-data", "--n", "5", "--seed", "3", "--out", &s(&out_a)]).unwrap();
    cli(&["gen-data", "--n", "5", "--seed", "3", "--out", &s(&out_b)]).unwrap();
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());

    // Overwrite refused without --force, allowed with it.
    let err = cli(&["gen-data", "--n", "5", "--seed", "3", "--out", &s(&out_a)]).unwrap_err();
    assert_eq!(err.class(), "usage");
    cli(&["gen-data", "--n", "2", "--seed", "4", "--out", &s(&out_a), "--force"]).unwrap();

    // The generated file round-trips through the loader.
    let loaded = mudaf_lab::corpus::load_jsonl(&out_a).unwrap();
    assert_eq!(loaded.len(), 2);
    mudaf_lab::corpus::save_jsonl(&loaded, &out_b).unwrap();
    let reloaded = mudaf_lab::corpus::load_jsonl(&out_b).unwrap();
    assert_eq!(loaded, reloaded);
}

#[test]
fn gen_data_n_zero_writes_an_empty_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.jsonl");
    cli(&["gen-data", "--n", "0", "--seed", "1", "--out", &s(&out)]).unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
    assert!(mudaf_lab::corpus::load_jsonl(&out).unwrap().is_empty());
}

#[test]
fn train_score_mask_report_pipeline_runs_at_micro_scale() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_cfg, model_cfg, train_cfg) = write_micro_configs(dir.path());
    let data = dir.path().join("train.jsonl");
    let evalset = dir.path().join("eval.jsonl");
    cli(&[
        "gen-data", "--corpus-config", &s(&corpus_cfg), "--n", "8", "--seed", "1", "--out",
        &s(&data),
    ])
    .unwrap();
    cli(&[
        "gen-data", "--corpus-config", &s(&corpus_cfg), "--n", "4", "--seed", "2", "--out",
        &s(&evalset),
    ])
    .unwrap();

    // Vanilla baseline.
    let run_v = dir.path().join("runs/vanilla");
    cli(&[
        "train", "--run-dir", &s(&run_v), "--mode", "vanilla",
        "--dataset", &s(&data),
        "--corpus-config", &s(&corpus_cfg),
        "--model-config", &s(&model_cfg),
        "--train-config", &s(&train_cfg),
        "--seed", "5",
    ])
    .unwrap();
    let ckpt_v = run_v.join("checkpoints/final");
    assert!(ckpt_v.join("weights.bin").exists());
    assert!(run_v.join("metrics.jsonl").exists());

    // Score its heads; epsilon 1.0 strictly excludes everything.
    let scores = dir.path().join("scores");
    cli(&[
        "score-heads", "--checkpoint", &s(&ckpt_v), "--dataset", &s(&evalset),
        "--out", &s(&scores),
    ])
    .unwrap();
    let scores_json = dir.path().join("scores.json");
    let table = mudaf_lab::analysis::export::load_table(&scores_json).unwrap();
    let csv = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    // CSV and JSON agree row for row.
    for (line, e) in csv.lines().skip(1).zip(table.entries.iter()) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0].parse::<usize>().unwrap(), e.head.layer);
        assert_eq!(cols[2].parse::<f64>().unwrap(), e.f1);
        assert_eq!(cols[4].parse::<usize>().unwrap(), e.rank);
    }

    let strict = dir.path().join("strict");
    cli(&[
        "score-heads", "--checkpoint", &s(&ckpt_v), "--dataset", &s(&evalset),
        "--epsilon", "1.0", "--out", &s(&strict),
    ])
    .unwrap();
    let strict_table =
        mudaf_lab::analysis::export::load_table(&dir.path().join("strict.json")).unwrap();
    assert!(strict_table.entries.iter().all(|e| e.f1 == 0.0));

    // Contrastive training with auto-selected heads; the manifest records
    // the sampled set.
    let run_m = dir.path().join("runs/mudaf");
    cli(&[
        "train", "--run-dir", &s(&run_m), "--mode", "mudaf",
        "--dataset", &s(&data),
        "--corpus-config", &s(&corpus_cfg),
        "--model-config", &s(&model_cfg),
        "--train-config", &s(&train_cfg),
        "--heads", "auto", "--scores", &s(&scores_json),
        "--seed", "5",
    ])
    .unwrap();
    let manifest =
        mudaf_lab::cli::manifest::RunManifest::load(&run_m.join("manifest.json")).unwrap();
    assert_eq!(manifest.experiment.target_heads.len(), 8);
    assert!(manifest.experiment.selection.is_some());
    manifest.verify_artifacts(&run_m).unwrap();

    // Masking with k = 0 equals the baseline on every random run, and the
    // report carries per-seed rows.
    let mask_out = dir.path().join("mask.json");
    cli(&[
        "mask-eval", "--checkpoint", &s(&run_m.join("checkpoints/final")),
        "--dataset", &s(&evalset), "--strategy", "random", "--k", "0",
        "--repeats", "3", "--out", &s(&mask_out),
    ])
    .unwrap();
    let report: mudaf_lab::analysis::masking::MaskingReport =
        serde_json::from_str(&fs::read_to_string(&mask_out).unwrap()).unwrap();
    let random = report.condition("random").unwrap();
    assert_eq!(random.runs.len(), 3);
    for r in &random.runs {
        assert!(r.seed.is_some());
        assert_eq!(r.exact_match, report.baseline.exact_match);
    }
    let mask_csv = fs::read_to_string(dir.path().join("mask.csv")).unwrap();
    assert_eq!(mask_csv.lines().count(), 1 + 1 + 3); // header + baseline + 3 runs

    // Report artifacts from the two score tables; generation is idempotent.
    let after = dir.path().join("after");
    cli(&[
        "score-heads", "--checkpoint", &s(&run_m.join("checkpoints/final")),
        "--dataset", &s(&evalset), "--out", &s(&after),
    ])
    .unwrap();
    cli(&[
        "report", "--run-dir", &s(&run_m),
        "--before", &s(&scores_json), "--after", &s(&dir.path().join("after.json")),
        "--dataset", &s(&evalset),
    ])
    .unwrap();
    let imp = run_m.join("reports/score_improvement.csv");
    let heat_csv = run_m.join("reports/heatmap.csv");
    let heat_svg = run_m.join("reports/heatmap.svg");
    assert!(imp.exists() && heat_csv.exists() && heat_svg.exists());
    let first = (fs::read(&imp).unwrap(), fs::read(&heat_svg).unwrap());
    cli(&[
        "report", "--run-dir", &s(&run_m),
        "--before", &s(&scores_json), "--after", &s(&dir.path().join("after.json")),
        "--dataset", &s(&evalset),
    ])
    .unwrap();
    assert_eq!(first, (fs::read(&imp).unwrap(), fs::read(&heat_svg).unwrap()));
    // Heatmap cells: one row per layer holding selected heads, one column
    // per passage.
    let rows = fs::read_to_string(&heat_csv).unwrap().lines().count() - 1;
    let svg = fs::read_to_string(&heat_svg).unwrap();
    assert_eq!(svg.matches("<rect").count(), rows * 3);

    // The run directory still verifies (no command mutated it).
    manifest.verify_artifacts(&run_m).unwrap();
}

#[test]
fn train_replay_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_cfg, model_cfg, train_cfg) = write_micro_configs(dir.path());
    let data = dir.path().join("train.jsonl");
    cli(&[
        "gen-data", "--corpus-config", &s(&corpus_cfg), "--n", "6", "--seed", "9",
        "--out", &s(&data),
    ])
    .unwrap();

    let run_a = dir.path().join("runs/a");
    cli(&[
        "train", "--run-dir", &s(&run_a), "--mode", "vanilla",
        "--dataset", &s(&data),
        "--corpus-config", &s(&corpus_cfg),
        "--model-config", &s(&model_cfg),
        "--train-config", &s(&train_cfg),
        "--seed", "7",
    ])
    .unwrap();

    let run_b = dir.path().join("runs/b");
    cli(&["train", "--run-dir", &s(&run_b), "--from-manifest", &s(&run_a.join("manifest.json"))])
        .unwrap();

    for rel in ["checkpoints/final/weights.bin", "checkpoints/final/manifest.json", "metrics.jsonl", "manifest.json"] {
        assert_eq!(
            fs::read(run_a.join(rel)).unwrap(),
            fs::read(run_b.join(rel)).unwrap(),
            "{rel} must replay byte-identically"
        );
    }
}

#[test]
fn non_empty_run_dir_requires_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_cfg, model_cfg, train_cfg) = write_micro_configs(dir.path());
    let data = dir.path().join("train.jsonl");
    cli(&[
        "gen-data", "--corpus-config", &s(&corpus_cfg), "--n", "4", "--seed", "1",
        "--out", &s(&data),
    ])
    .unwrap();
    let run = dir.path().join("runs/x");
    let train_args = [
        "train", "--run-dir", &s(&run), "--mode", "vanilla",
        "--dataset", &s(&data),
        "--corpus-config", &s(&corpus_cfg),
        "--model-config", &s(&model_cfg),
        "--train-config", &s(&train_cfg),
    ];
    cli(&train_args).unwrap();
    assert_eq!(cli(&train_args).unwrap_err().class(), "usage");
    let mut with_resume = train_args.to_vec();
    with_resume.push("--resume");
    cli(&with_resume).unwrap();
}

#[test]
fn binary_reports_errors_as_json_on_stderr() {
    let exe = env!("CARGO_BIN_EXE_mudaf-lab");
    let output = ProcCommand::new(exe)
        .args(["score-heads", "--checkpoint", "/nonexistent", "--dataset", "/nope", "--out", "/tmp/x"])
        .output()
        .expect("binary runs");
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let line = stderr.lines().last().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(line).expect("stderr ends with JSON");
    assert_eq!(parsed["error"], "io");
}

#[test]
fn vanilla_mode_warns_when_heads_are_passed() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_cfg, model_cfg, train_cfg) = write_micro_configs(dir.path());
    let data = dir.path().join("train.jsonl");
    cli(&[
        "gen-data", "--corpus-config", &s(&corpus_cfg), "--n", "4", "--seed", "1",
        "--out", &s(&data),
    ])
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_mudaf-lab");
    let run = dir.path().join("runs/warn");
    let output = ProcCommand::new(exe)
        .args([
            "train", "--run-dir", &s(&run), "--mode", "vanilla",
            "--dataset", &s(&data),
            "--corpus-config", &s(&corpus_cfg),
            "--model-config", &s(&model_cfg),
            "--train-config", &s(&train_cfg),
            "--heads", "auto",
        ])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ignored in vanilla mode"), "stderr: {stderr}");
}

#[test]
fn seed_env_var_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out_env = dir.path().join("env.jsonl");
    let out_flag = dir.path().join("flag.jsonl");
    let exe = env!("CARGO_BIN_EXE_mudaf-lab");
    let status = ProcCommand::new(exe)
        .env(mudaf_lab::cli::SEED_ENV_VAR, "123")
        .args(["gen-data", "--n", "3", "--seed", "999", "--out", &s(&out_env)])
        .status()
        .unwrap();
    assert!(status.success());
    cli(&["gen-data", "--n", "3", "--seed", "123", "--out", &s(&out_flag)]).unwrap();
    assert_eq!(fs::read(&out_env).unwrap(), fs::read(&out_flag).unwrap());
}
