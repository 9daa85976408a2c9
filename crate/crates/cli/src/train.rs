//! The deterministic training loop: dataset preparation, PK-batch epochs,
//! backpropagation, Adam updates, and per-epoch metrics records.
//!
//! Every random draw comes from one of four streams derived from the run
//! seed, so a (config, seed) pair fully determines the trained parameters
//! and every metrics field except wall time.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ate_core::dataset::{generate_synthetic, load_features, split_identities, Dataset};
use ate_core::dataset::{make_query_gallery, DatasetError};
use ate_core::embedder::{
    adam_step, learning_rate, AdamState, EmbedderError, EmbedderParams, GradientBuffer,
};
use ate_core::losses::{batch_loss, LossError};
use ate_core::metrics::{evaluate, EvalError, EvalReport, QueryGallerySplit};
use ate_core::mining::{epoch_batches, mine_triplets, Batch};
use ate_core::rng::Rng;

use crate::config::{ConfigError, DataSource, ExperimentConfig};

/// Stream tags for [`Rng::derive`]: one independent generator per concern,
/// so e.g. changing the epoch count never perturbs the train/test split.
pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_PROTOCOL: u64 = 4;

/// One line of the metrics log. Optional fields are omitted from the JSON
/// so a log line is exactly what was measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Why a training run stopped early.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} in epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl TrainError {
    /// Whether this is a numeric failure (as opposed to bad configuration
    /// or IO), for exit-code mapping.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. }
                | TrainError::Loss(LossError::InnerDiverged(_))
                | TrainError::Embedder(EmbedderError::NonFiniteGradient)
                | TrainError::Eval(EvalError::NonFiniteEmbedding { .. })
        )
    }
}

/// A failed run, carrying the records completed before the failure so the
/// caller can persist a diagnostic log.
#[derive(Debug)]
pub struct TrainFailure {
    pub records: Vec<MetricsRecord>,
    pub error: TrainError,
}

/// A finished run: trained parameters, the per-epoch log, and the held-out
/// side with its retrieval protocol (for evaluation).
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: EmbedderParams<f64>,
    pub records: Vec<MetricsRecord>,
    pub test: Dataset<f64>,
    pub protocol: QueryGallerySplit,
}

/// Loads or generates the configured dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset<f64>, TrainError> {
    match cfg.data.source {
        DataSource::Synthetic => Ok(generate_synthetic(&cfg.synthetic_spec())),
        DataSource::File => {
            let path = cfg.data.path.as_ref().ok_or_else(|| {
                ConfigError::Value {
                    key: "data.path".into(),
                    msg: "required when data.source = file".into(),
                }
            })?;
            Ok(load_features(path)?)
        }
    }
}

/// Splits the dataset and builds the test-side protocol for one run seed.
pub fn prepare_splits(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset<f64>, Dataset<f64>, QueryGallerySplit), TrainError> {
    let dataset = load_dataset(cfg)?;
    let (train, test) = split_identities(
        &dataset,
        cfg.data.train_fraction,
        &mut Rng::derive(seed, STREAM_SPLIT),
    )?;
    let protocol = make_query_gallery(
        &test,
        cfg.protocol_flags(),
        &mut Rng::derive(seed, STREAM_PROTOCOL),
    )?;
    Ok((train, test, protocol))
}

/// Trains one run to completion. On failure the records accumulated so far
/// come back inside [`TrainFailure`].
pub fn run_train(cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutcome, TrainFailure> {
    let mut records = Vec::new();
    match train_inner(cfg, seed, &mut records) {
        Ok((params, test, protocol)) => Ok(TrainOutcome {
            params,
            records,
            test,
            protocol,
        }),
        Err(error) => Err(TrainFailure { records, error }),
    }
}

fn train_inner(
    cfg: &ExperimentConfig,
    seed: u64,
    records: &mut Vec<MetricsRecord>,
) -> Result<(EmbedderParams<f64>, Dataset<f64>, QueryGallerySplit), TrainError> {
    let (train_set, test_set, protocol) = prepare_splits(cfg, seed)?;
    let by_identity = train_set.by_identity();
    let loss = cfg.loss_kind()?;
    let strategy = cfg.mining_strategy();

    let widths = cfg.layer_widths(train_set.dim());
    let mut params = EmbedderParams::<f64>::new(
        &widths,
        cfg.model.activation,
        &mut Rng::derive(seed, STREAM_INIT),
    );
    let mut adam = AdamState::new(&params);
    let mut grads = GradientBuffer::new(&params);
    let mut train_rng = Rng::derive(seed, STREAM_TRAIN);

    log::info!(
        "training {} ({} params) on {} samples / {} identities, seed {seed}",
        loss.name(),
        params.param_count(),
        train_set.len(),
        by_identity.len(),
    );

    for epoch in 1..=cfg.train.epochs {
        let started = Instant::now();
        let t = epoch as f64;
        let lr = learning_rate(&cfg.optim, t);

        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (batch_no, plan) in epoch_batches(&by_identity, cfg.batch.p, cfg.batch.k, &mut train_rng)
            .into_iter()
            .enumerate()
        {
            let indices = plan.sample_indices();
            let labels = plan.labels();
            let mut embeddings = Vec::with_capacity(indices.len());
            let mut tapes = Vec::with_capacity(indices.len());
            for &i in &indices {
                let (e, tape) = params.forward(&train_set.sample(i).features)?;
                if !e.is_finite() {
                    return Err(TrainError::NonFinite {
                        what: "embedding",
                        epoch,
                        batch: batch_no,
                    });
                }
                embeddings.push(e);
                tapes.push(tape);
            }
            let batch = Batch::new(indices, labels, embeddings);
            let triplets = mine_triplets(&batch, &strategy, &mut train_rng);
            if triplets.is_empty() {
                log::warn!("epoch {epoch} batch {batch_no}: no triplets mined, skipping");
                continue;
            }
            let bl = batch_loss(batch.embeddings(), &triplets, &loss)?;
            if !bl.mean_value.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss",
                    epoch,
                    batch: batch_no,
                });
            }
            grads.zero();
            for (tape, g) in tapes.iter().zip(&bl.embedding_grads) {
                params.backward(tape, g, &mut grads)?;
            }
            adam_step(&mut params, &grads, &mut adam, &cfg.optim, t).map_err(|e| match e {
                EmbedderError::NonFiniteGradient => TrainError::NonFinite {
                    what: "gradient",
                    epoch,
                    batch: batch_no,
                },
                other => TrainError::Embedder(other),
            })?;
            loss_sum += bl.mean_value;
            n_batches += 1;
        }

        let mean_loss = loss_sum / n_batches as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::NonFinite {
                what: "epoch mean loss",
                epoch,
                batch: n_batches,
            });
        }

        let snapshot: Option<EvalReport<f64>> =
            if cfg.train.eval_every > 0 && epoch % cfg.train.eval_every == 0 {
                Some(evaluate(&params, &test_set, &protocol)?)
            } else {
                None
            };
        records.push(MetricsRecord {
            epoch,
            mean_loss,
            learning_rate: lr,
            wall_time_s: started.elapsed().as_secs_f64(),
            rank1: snapshot.as_ref().map(|r| r.rank(1)),
            map: snapshot.as_ref().map(|r| r.map),
            error: None,
        });
    }

    Ok((params, test_set, protocol))
}
