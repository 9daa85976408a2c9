//! End-to-end tests of the `ate` binary: exit codes, artifact layout, and
//! determinism through the process boundary.

use std::path::Path;
use std::process::{Command, Output};

use ate_cli::train::MetricsRecord;

fn ate<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ate"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Overrides shrinking the desk profile to a seconds-long run.
const TINY: &[&str] = &[
    "--override",
    "profile=desk",
    "--override",
    "data.n_identities=6",
    "--override",
    "data.samples_per_identity=6",
    "--override",
    "data.dim=4",
    "--override",
    "model.hidden=8",
    "--override",
    "model.embed_dim=4",
    "--override",
    "batch.p=3",
    "--override",
    "batch.k=2",
    "--override",
    "train.epochs=2",
];

fn tiny_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = TINY.to_vec();
    v.extend_from_slice(extra);
    v
}

#[test]
fn no_subcommand_is_a_usage_error() {
    let out = ate::<&str>(&[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&ate(&["--help"])), 0);
    assert_eq!(code(&ate(&["--version"])), 0);
    let help = ate(&["--help"]);
    let text = String::from_utf8_lossy(&help.stdout);
    for verb in ["train", "eval", "sweep-eps", "compare", "gen-data"] {
        assert!(text.contains(verb), "help lists {verb}");
    }
}

#[test]
fn bad_config_values_exit_two() {
    let out = ate(&["train", "--override", "batch.p=1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch.p"));

    let out = ate(&["train", "--override", "no.such.key=1"]);
    assert_eq!(code(&out), 2);

    let out = ate(&["train", "--override", "malformed"]);
    assert_eq!(code(&out), 2);

    let out = ate(&["train", "--config", "/nonexistent/config.txt"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_round_trip_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out_str = out_dir.to_str().unwrap();

    let out = ate(&tiny_args(&["--seed", "1", "--out", out_str, "train"]));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let checkpoint = out_dir.join("seed-1/checkpoint.bin");
    assert!(checkpoint.exists());
    let metrics = std::fs::read_to_string(out_dir.join("seed-1/metrics.jsonl")).unwrap();
    let records: Vec<MetricsRecord> = metrics
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    assert!(records.windows(2).all(|w| w[0].epoch < w[1].epoch));

    let eval_out = dir.path().join("eval");
    let out = ate(&tiny_args(&[
        "--seed",
        "1",
        "--out",
        eval_out.to_str().unwrap(),
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(eval_out.join("eval/summary.txt")).unwrap();
    assert!(summary.contains("rank1="), "{summary}");
    assert!(summary.contains("map="), "{summary}");
    assert!(eval_out.join("eval/report.json").exists());

    // Evaluating twice yields identical reports.
    let again = ate(&tiny_args(&[
        "--seed",
        "1",
        "--out",
        eval_out.to_str().unwrap(),
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
    ]));
    assert_eq!(code(&again), 0);
    let report_a = std::fs::read_to_string(eval_out.join("eval/report.json")).unwrap();
    assert_eq!(summary, std::fs::read_to_string(eval_out.join("eval/summary.txt")).unwrap());
    assert!(!report_a.is_empty());
}

#[test]
fn eval_with_mismatched_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = ate(&tiny_args(&["--seed", "1", "--out", out_dir.to_str().unwrap(), "train"]));
    assert_eq!(code(&out), 0);

    // Same checkpoint, but a config whose features have a different width.
    let mut args = tiny_args(&[]);
    args[7] = "data.dim=5";
    let eval_dir = dir.path().join("eval");
    let checkpoint = out_dir.join("seed-1/checkpoint.bin");
    args.extend_from_slice(&[
        "--seed",
        "1",
        "--out",
        eval_dir.to_str().unwrap(),
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
    ]);
    let out = ate(&args);
    assert_eq!(code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = ate(&tiny_args(&[
        "eval",
        "--checkpoint",
        "/nonexistent/checkpoint.bin",
    ]));
    assert_eq!(code(&out), 2);
}

/// Metrics lines with the wall-time field removed, for byte comparison.
fn stripped_metrics(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_s");
            v.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn identical_train_runs_are_byte_identical_modulo_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = ate(&tiny_args(&["--seed", "7", "--out", out_dir.to_str().unwrap(), "train"]));
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        stripped_metrics(&a.join("seed-7/metrics.jsonl")),
        stripped_metrics(&b.join("seed-7/metrics.jsonl")),
    );
    let ck_a = std::fs::read(a.join("seed-7/checkpoint.bin")).unwrap();
    let ck_b = std::fs::read(b.join("seed-7/checkpoint.bin")).unwrap();
    assert_eq!(ck_a, ck_b, "bit-identical checkpoints");
}

#[test]
fn numeric_blowup_exits_three_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = ate(&tiny_args(&[
        "--seed",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--override",
        "optim.alpha0=1e300",
        "train",
    ]));
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.join("seed-1/checkpoint.bin").exists());
    let metrics = std::fs::read_to_string(out_dir.join("seed-1/metrics.jsonl")).unwrap();
    assert!(metrics.lines().last().unwrap().contains("error"));
}

#[test]
fn gen_data_writes_a_loadable_gzip_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("data.txt.gz");
    let mut args: Vec<String> = TINY.iter().map(|s| s.to_string()).collect();
    args.extend([
        "--override".to_string(),
        format!("data.path={}", dest.display()),
        "--out".to_string(),
        dir.path().display().to_string(),
        "gen-data".to_string(),
    ]);
    let out = ate(&args);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let ds = ate_core::dataset::load_features::<f64>(&dest).unwrap();
    assert_eq!(ds.len(), 36);

    // A file-sourced training run consumes the generated file.
    let run_dir = dir.path().join("run");
    let mut args: Vec<String> = TINY.iter().map(|s| s.to_string()).collect();
    args.extend([
        "--override".to_string(),
        "data.source=file".to_string(),
        "--override".to_string(),
        format!("data.path={}", dest.display()),
        "--seed".to_string(),
        "1".to_string(),
        "--out".to_string(),
        run_dir.display().to_string(),
        "train".to_string(),
    ]);
    let out = ate(&args);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("seed-1/checkpoint.bin").exists());
}

#[test]
fn sweep_csv_echoes_epsilon_labels_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let out = ate(&tiny_args(&[
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
        "sweep-eps",
        "--eps",
        "1e-2,5e-1",
    ]));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "epsilon,seed,rank1,map");
    assert!(lines[1].starts_with("1e-2,3,"), "{}", lines[1]);
    assert!(lines[2].starts_with("5e-1,3,"), "{}", lines[2]);

    let out = ate(&["sweep-eps", "--eps", "not-a-number"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_writes_rows_for_every_loss_seed_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = ate(&tiny_args(&[
        "--override",
        "train.seeds=1,2",
        "--override",
        "loss.epsilon=0",
        "--out",
        dir.path().to_str().unwrap(),
        "compare",
        "--losses",
        "softplus,ate",
    ]));
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "header + 2 losses x 2 seeds:\n{csv}");
    let summary = std::fs::read_to_string(dir.path().join("compare_summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    // Zero-radius ATE ties softplus exactly, including the medians.
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][1], rows[1][1], "median rank1 matches:\n{summary}");
    assert_eq!(rows[0][2], rows[1][2], "median map matches:\n{summary}");

    let out = ate(&tiny_args(&["compare", "--losses", "softplus"]));
    assert_eq!(code(&out), 2, "one loss is not a comparison");
}
