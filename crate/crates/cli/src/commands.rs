//! The implementation behind each CLI verb. Every command works off a
//! resolved [`ExperimentConfig`] and writes its artifacts under the
//! configured output directory, so runs are reproducible from the saved
//! `config.txt` alone.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use ate_core::dataset::{generate_synthetic, save_features, DatasetError};
use ate_core::embedder::{load_checkpoint, save_checkpoint, EmbedderError};
use ate_core::losses::LossError;
use ate_core::metrics::{
    evaluate, save_report_json, write_summary, EvalError, EvalReport,
};

use crate::config::{serialize_config, ConfigError, ExperimentConfig, LossName};
use crate::train::{run_train, MetricsRecord, TrainError};

/// The published perturbation-radius grid, in its original order. Labels
/// are preserved verbatim in sweep output.
pub const DEFAULT_EPS_GRID: [(f64, &str); 7] = [
    (1e-4, "1e-4"),
    (5e-3, "5e-3"),
    (1e-3, "1e-3"),
    (5e-2, "5e-2"),
    (1e-2, "1e-2"),
    (5e-1, "5e-1"),
    (1e-1, "1e-1"),
];

/// Command-level errors, each mapping to a process exit code: usage and
/// configuration problems exit 2, numeric failures exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error("checkpoint: {0}")]
    Checkpoint(EmbedderError),
    #[error(transparent)]
    Eval(EvalError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 3,
            CliError::Eval(EvalError::NonFiniteEmbedding { .. }) => 3,
            CliError::Checkpoint(EmbedderError::NonFiniteGradient) => 3,
            _ => 2,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            TrainError::Config(c) => CliError::Config(c),
            TrainError::Data(d) => CliError::Data(d),
            TrainError::Embedder(m) => CliError::Checkpoint(m),
            TrainError::Loss(l) => match l {
                LossError::InnerDiverged(_) => CliError::Numeric(l.to_string()),
                other => CliError::Usage(other.to_string()),
            },
            TrainError::Eval(v) => CliError::Eval(v),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e)
    }
}

fn write_resolved_config(cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), serialize_config(cfg))?;
    Ok(())
}

fn write_metrics_log(
    path: &Path,
    records: &[MetricsRecord],
    failure: Option<&TrainError>,
) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::Usage(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    if let Some(err) = failure {
        let diag = serde_json::json!({ "error": err.to_string() });
        w.write_all(diag.to_string().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One trained seed's artifacts.
#[derive(Debug)]
pub struct TrainedSeed {
    pub seed: u64,
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub final_loss: f64,
}

/// `train`: one run per configured seed, each into `out/seed-<s>/` with a
/// `metrics.jsonl` log and a final `checkpoint.bin`. On a numeric failure
/// the log ends in a diagnostic line and no checkpoint is written.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainedSeed>, CliError> {
    write_resolved_config(cfg)?;
    let mut trained = Vec::new();
    for &seed in &cfg.train.seeds {
        let dir = cfg.out_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let metrics_path = dir.join("metrics.jsonl");
        match run_train(cfg, seed) {
            Ok(outcome) => {
                write_metrics_log(&metrics_path, &outcome.records, None)?;
                let checkpoint = dir.join("checkpoint.bin");
                save_checkpoint(&outcome.params, &checkpoint)
                    .map_err(CliError::Checkpoint)?;
                let final_loss = outcome.records.last().map_or(f64::NAN, |r| r.mean_loss);
                println!(
                    "seed {seed}: {} epochs, final mean loss {final_loss}, checkpoint {}",
                    outcome.records.len(),
                    checkpoint.display(),
                );
                trained.push(TrainedSeed {
                    seed,
                    dir,
                    checkpoint,
                    final_loss,
                });
            }
            Err(failure) => {
                write_metrics_log(&metrics_path, &failure.records, Some(&failure.error))?;
                log::error!("seed {seed} aborted: {}", failure.error);
                return Err(failure.error.into());
            }
        }
    }
    Ok(trained)
}

/// `eval`: evaluates a checkpoint on the test split that the first
/// configured seed produces, writing `report.json` and `summary.txt` under
/// `out/eval/`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
) -> Result<EvalReport<f64>, CliError> {
    write_resolved_config(cfg)?;
    let seed = cfg.train.seeds[0];
    let (_, test, protocol) = crate::train::prepare_splits(cfg, seed)?;
    let params = load_checkpoint(checkpoint).map_err(CliError::Checkpoint)?;
    let report = evaluate(&params, &test, &protocol)?;

    let dir = cfg.out_dir.join("eval");
    fs::create_dir_all(&dir)?;
    save_report_json(&report, &dir.join("report.json")).map_err(CliError::Eval)?;
    let mut summary = Vec::new();
    write_summary(&report, &mut summary)?;
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{}", String::from_utf8_lossy(&summary));
    Ok(report)
}

/// `gen-data`: writes the configured synthetic dataset to `data.path` (or
/// `out/dataset.txt`), gzip-compressed if the name ends in `.gz`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dest = cfg
        .data
        .path
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("dataset.txt"));
    if let Some(parent) = dest.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let ds = generate_synthetic::<f64>(&cfg.synthetic_spec());
    save_features(&ds, &dest)?;
    println!(
        "wrote {} samples ({} identities, dim {}) to {}",
        ds.len(),
        ds.n_identities(),
        ds.dim(),
        dest.display(),
    );
    Ok(dest)
}

/// One sweep cell: a perturbation radius (with its verbatim label) trained
/// and evaluated under one seed.
pub struct SweepRow {
    pub label: String,
    pub epsilon: f64,
    pub seed: u64,
    pub rank1: f64,
    pub map: f64,
}

fn train_and_eval(cfg: &ExperimentConfig, seed: u64) -> Result<EvalReport<f64>, CliError> {
    let outcome = run_train(cfg, seed).map_err(|f| CliError::from(f.error))?;
    Ok(evaluate(&outcome.params, &outcome.test, &outcome.protocol)?)
}

/// `sweep-eps`: a full train+eval per (radius, seed) cell, collected into
/// `out/sweep.csv` with the radius column echoing the input labels
/// verbatim.
pub fn cmd_sweep_eps(
    cfg: &ExperimentConfig,
    grid: &[(f64, String)],
) -> Result<Vec<SweepRow>, CliError> {
    if grid.is_empty() {
        return Err(CliError::Usage("sweep needs at least one epsilon".into()));
    }
    write_resolved_config(cfg)?;
    let mut rows = Vec::new();
    for (epsilon, label) in grid {
        let mut cell_cfg = cfg.clone();
        cell_cfg.loss.name = LossName::Ate;
        cell_cfg.loss.epsilon = *epsilon;
        crate::config::validate(&cell_cfg)?;
        for &seed in &cfg.train.seeds {
            let report = train_and_eval(&cell_cfg, seed)?;
            log::info!(
                "eps {label} seed {seed}: rank1 {} map {}",
                report.rank(1),
                report.map
            );
            rows.push(SweepRow {
                label: label.clone(),
                epsilon: *epsilon,
                seed,
                rank1: report.rank(1),
                map: report.map,
            });
        }
    }

    let mut csv = String::from("epsilon,seed,rank1,map\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.label, r.seed, r.rank1, r.map));
    }
    fs::write(cfg.out_dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(rows)
}

/// One compare cell: a loss trained and evaluated under one seed.
pub struct CompareRow {
    pub loss: LossName,
    pub seed: u64,
    pub rank1: f64,
    pub map: f64,
}

/// Per-loss medians over seeds.
pub struct CompareSummary {
    pub loss: LossName,
    pub median_rank1: f64,
    pub median_map: f64,
}

/// Median of a non-empty slice of finite values: middle element, or the
/// mean of the two middles for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// `compare`: trains every requested loss under identical seeds, data and
/// mining, writing per-seed rows to `out/compare.csv` and per-loss medians
/// to `out/compare_summary.txt`.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    losses: &[String],
) -> Result<(Vec<CompareRow>, Vec<CompareSummary>), CliError> {
    if losses.len() < 2 {
        return Err(CliError::Usage(
            "compare needs at least two losses (e.g. --losses softplus,ate)".into(),
        ));
    }
    let mut names = Vec::with_capacity(losses.len());
    for raw in losses {
        names.push(LossName::parse(raw).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown loss {raw:?} (expected hinge, softplus, ate or gaussian-map)"
            ))
        })?);
    }
    write_resolved_config(cfg)?;

    let mut rows = Vec::new();
    for &loss in &names {
        let mut cell_cfg = cfg.clone();
        cell_cfg.loss.name = loss;
        crate::config::validate(&cell_cfg)?;
        for &seed in &cfg.train.seeds {
            let report = train_and_eval(&cell_cfg, seed)?;
            log::info!(
                "{} seed {seed}: rank1 {} map {}",
                loss.as_str(),
                report.rank(1),
                report.map
            );
            rows.push(CompareRow {
                loss,
                seed,
                rank1: report.rank(1),
                map: report.map,
            });
        }
    }

    let mut csv = String::from("loss,seed,rank1,map\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.loss.as_str(),
            r.seed,
            r.rank1,
            r.map
        ));
    }
    fs::write(cfg.out_dir.join("compare.csv"), &csv)?;

    let mut summaries = Vec::new();
    let mut table = String::from("loss,median_rank1,median_map\n");
    for &loss in &names {
        let r1: Vec<f64> = rows
            .iter()
            .filter(|r| r.loss == loss)
            .map(|r| r.rank1)
            .collect();
        let maps: Vec<f64> = rows
            .iter()
            .filter(|r| r.loss == loss)
            .map(|r| r.map)
            .collect();
        let s = CompareSummary {
            loss,
            median_rank1: median(&r1),
            median_map: median(&maps),
        };
        table.push_str(&format!(
            "{},{},{}\n",
            loss.as_str(),
            s.median_rank1,
            s.median_map
        ));
        summaries.push(s);
    }
    fs::write(cfg.out_dir.join("compare_summary.txt"), &table)?;
    print!("{csv}\n{table}");
    Ok((rows, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use ate_core::dataset::load_features;

    fn tiny_config(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.data.n_identities = 6;
        cfg.data.samples_per_identity = 6;
        cfg.data.dim = 4;
        cfg.model.hidden = vec![8];
        cfg.model.embed_dim = 4;
        cfg.batch.p = 3;
        cfg.batch.k = 2;
        cfg.train.epochs = 2;
        cfg.train.seeds = vec![1];
        cfg.out_dir = out.to_path_buf();
        cfg
    }

    #[test]
    fn median_handles_odd_and_even_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn default_grid_is_the_published_seven_values() {
        assert_eq!(DEFAULT_EPS_GRID.len(), 7);
        let values: Vec<f64> = DEFAULT_EPS_GRID.iter().map(|(v, _)| *v).collect();
        assert_eq!(values, vec![1e-4, 5e-3, 1e-3, 5e-2, 1e-2, 5e-1, 1e-1]);
        for (v, label) in DEFAULT_EPS_GRID {
            assert_eq!(label.parse::<f64>().unwrap(), v, "label {label} matches");
        }
    }

    #[test]
    fn train_writes_config_metrics_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let trained = cmd_train(&cfg).unwrap();
        assert_eq!(trained.len(), 1);
        assert!(cfg.out_dir.join("config.txt").exists());
        let metrics = fs::read_to_string(trained[0].dir.join("metrics.jsonl")).unwrap();
        assert_eq!(metrics.lines().count(), 2);
        assert!(load_checkpoint(&trained[0].checkpoint).is_ok());
        // The resolved config parses back to the run's exact settings.
        let text = fs::read_to_string(cfg.out_dir.join("config.txt")).unwrap();
        assert_eq!(crate::config::parse_config_text(&text).unwrap(), cfg);
    }

    #[test]
    fn numeric_abort_leaves_a_diagnostic_and_no_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.optim.alpha0 = 1e300;
        let err = cmd_train(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let metrics =
            fs::read_to_string(cfg.out_dir.join("seed-1").join("metrics.jsonl")).unwrap();
        assert!(metrics.lines().last().unwrap().contains("error"));
        assert!(!cfg.out_dir.join("seed-1").join("checkpoint.bin").exists());
    }

    #[test]
    fn sweep_echoes_labels_and_fills_every_cell() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.train.seeds = vec![1, 2];
        let grid = vec![(2e-2, "2e-2".to_string()), (0.1, "0.1".to_string())];
        let rows = cmd_sweep_eps(&cfg, &grid).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = fs::read_to_string(cfg.out_dir.join("sweep.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epsilon,seed,rank1,map");
        assert!(lines[1].starts_with("2e-2,1,"), "{}", lines[1]);
        assert!(lines[3].starts_with("0.1,1,"), "{}", lines[3]);
        assert!(matches!(
            cmd_sweep_eps(&cfg, &[]),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn sweep_single_cell_equals_train_plus_eval() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.loss.name = LossName::Ate;
        cfg.loss.epsilon = 0.05;
        let rows =
            cmd_sweep_eps(&cfg, &[(0.05, "0.05".to_string())]).unwrap();
        let direct = train_and_eval(&cfg, 1).unwrap();
        assert_eq!(rows[0].rank1, direct.rank(1));
        assert_eq!(rows[0].map, direct.map);
    }

    #[test]
    fn compare_zero_epsilon_ate_ties_softplus_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.loss.epsilon = 0.0;
        cfg.train.seeds = vec![1, 2, 3];
        let (rows, summaries) =
            cmd_compare(&cfg, &["softplus".to_string(), "ate".to_string()]).unwrap();
        assert_eq!(rows.len(), 6, "losses x seeds");
        for seed in [1u64, 2, 3] {
            let sp = rows
                .iter()
                .find(|r| r.loss == LossName::Softplus && r.seed == seed)
                .unwrap();
            let ate = rows
                .iter()
                .find(|r| r.loss == LossName::Ate && r.seed == seed)
                .unwrap();
            assert_eq!(sp.rank1.to_bits(), ate.rank1.to_bits());
            assert_eq!(sp.map.to_bits(), ate.map.to_bits());
        }
        // Medians recompute from the rows.
        for s in &summaries {
            let r1: Vec<f64> = rows
                .iter()
                .filter(|r| r.loss == s.loss)
                .map(|r| r.rank1)
                .collect();
            assert_eq!(s.median_rank1, median(&r1));
        }
        assert!(matches!(
            cmd_compare(&cfg, &["softplus".to_string()]),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            cmd_compare(&cfg, &["softplus".to_string(), "bogus".to_string()]),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn gen_data_round_trips_through_the_configured_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.data.path = Some(dir.path().join("custom/data.txt.gz"));
        let dest = cmd_gen_data(&cfg).unwrap();
        assert_eq!(dest, dir.path().join("custom/data.txt.gz"));
        let ds = load_features::<f64>(&dest).unwrap();
        assert_eq!(ds.len(), 36);
        assert_eq!(ds.dim(), 4);

        cfg.data.path = None;
        let dest = cmd_gen_data(&cfg).unwrap();
        assert_eq!(dest, cfg.out_dir.join("dataset.txt"));
    }
}
