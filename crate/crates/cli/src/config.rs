//! Experiment configuration: a flat `key = value` text format with dotted
//! section prefixes, two built-in profiles, and override plumbing.
//!
//! Resolution order: the `profile` key (from the file or an override, later
//! wins) picks the base profile, every other file key applies in file order,
//! then `--override` pairs, then the `--seed` and `--out` flags. The
//! serialized form contains every key, so `parse(serialize(c)) == c`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use ate_core::dataset::SyntheticSpec;
use ate_core::embedder::{Activation, OptimizerSchedule};
use ate_core::losses::{GaussianMapConfig, LossKind, PerturbationConfig};
use ate_core::metrics::ProtocolFlags;
use ate_core::mining::MiningStrategy;

/// Errors from parsing, validating, or resolving a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("invalid value for {key}: {msg}")]
    Value { key: String, msg: String },
    #[error("bad override {pair:?}: expected key=value")]
    BadOverride { pair: String },
    #[error("unknown profile {name:?} (expected \"paper\" or \"desk\")")]
    UnknownProfile { name: String },
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Where the feature data comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    File,
}

impl DataSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DataSource::Synthetic => "synthetic",
            DataSource::File => "file",
        }
    }
}

/// Loss selector; parameters live alongside in [`LossConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossName {
    Hinge,
    Softplus,
    Ate,
    GaussianMap,
}

impl LossName {
    pub fn as_str(self) -> &'static str {
        match self {
            LossName::Hinge => "hinge",
            LossName::Softplus => "softplus",
            LossName::Ate => "ate",
            LossName::GaussianMap => "gaussian-map",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hinge" => Some(LossName::Hinge),
            "softplus" => Some(LossName::Softplus),
            "ate" => Some(LossName::Ate),
            "gaussian-map" => Some(LossName::GaussianMap),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiningName {
    BatchHard,
    StochasticSoft,
}

impl MiningName {
    pub fn as_str(self) -> &'static str {
        match self {
            MiningName::BatchHard => "batch-hard",
            MiningName::StochasticSoft => "stochastic-soft",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "batch-hard" => Some(MiningName::BatchHard),
            "stochastic-soft" => Some(MiningName::StochasticSoft),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Feature file to read (`source = file`) or the destination of
    /// `gen-data`; unused when training on in-memory synthetic data.
    pub path: Option<PathBuf>,
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub cluster_std: f64,
    pub center_scale: f64,
    pub n_cameras: usize,
    /// Seed of the dataset itself, deliberately separate from the run seed
    /// so different runs can train on identical data.
    pub seed: u64,
    pub train_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Hidden layer widths; empty means a single linear map.
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub name: LossName,
    /// Anchor perturbation radius (`ate`).
    pub epsilon: f64,
    /// Margin (`hinge`).
    pub margin: f64,
    /// Prior width (`gaussian-map`).
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchConfig {
    /// Identities per batch.
    pub p: usize,
    /// Samples per identity.
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiningConfig {
    pub strategy: MiningName,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seeds: Vec<u64>,
    /// Evaluate on the test split every this many epochs (0 = never).
    pub eval_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub exclude_same_camera_same_id: bool,
    pub drop_empty_queries: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub batch: BatchConfig,
    pub mining: MiningConfig,
    pub optim: OptimizerSchedule,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ExperimentConfig {
    /// Full-scale profile: the published training recipe (64x4 batches, 65
    /// epochs, learning rate 3e-4 decaying from epoch 35) over a synthetic
    /// stand-in sized like a real re-identification training set.
    pub fn paper() -> Self {
        Self {
            data: DataConfig {
                source: DataSource::Synthetic,
                path: None,
                n_identities: 751,
                samples_per_identity: 8,
                dim: 32,
                cluster_std: 0.6,
                center_scale: 1.0,
                n_cameras: 6,
                seed: 20240,
                train_fraction: 0.5,
            },
            model: ModelConfig {
                hidden: vec![64, 32],
                embed_dim: 16,
                activation: Activation::Relu,
            },
            loss: LossConfig {
                name: LossName::Ate,
                epsilon: 0.01,
                margin: 0.2,
                sigma: 1.0,
            },
            batch: BatchConfig { p: 64, k: 4 },
            mining: MiningConfig {
                strategy: MiningName::BatchHard,
                temperature: 1.0,
            },
            optim: OptimizerSchedule::default(),
            train: TrainConfig {
                epochs: 65,
                seeds: vec![1, 2, 3, 4, 5],
                eval_every: 0,
            },
            eval: EvalConfig {
                exclude_same_camera_same_id: true,
                drop_empty_queries: true,
            },
            out_dir: PathBuf::from("runs/ate"),
        }
    }

    /// Desk-scale profile for quick iteration and CI: 8x4 batches, 30
    /// epochs, 20 overlapping identities.
    pub fn desk() -> Self {
        let mut cfg = Self::paper();
        cfg.data.n_identities = 20;
        cfg.data.samples_per_identity = 10;
        cfg.data.dim = 8;
        cfg.data.n_cameras = 2;
        cfg.model.hidden = vec![16];
        cfg.model.embed_dim = 8;
        cfg.batch = BatchConfig { p: 8, k: 4 };
        cfg.train.epochs = 30;
        cfg
    }

    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            _ => Err(ConfigError::UnknownProfile { name: name.into() }),
        }
    }

    /// The synthetic recipe described by the data section.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_identities: self.data.n_identities,
            samples_per_identity: self.data.samples_per_identity,
            dim: self.data.dim,
            cluster_std: self.data.cluster_std,
            center_scale: self.data.center_scale,
            n_cameras: self.data.n_cameras,
            seed: self.data.seed,
        }
    }

    /// The configured loss, with its parameter validated.
    pub fn loss_kind(&self) -> Result<LossKind<f64>, ConfigError> {
        match self.loss.name {
            LossName::Hinge => Ok(LossKind::Hinge {
                margin: self.loss.margin,
            }),
            LossName::Softplus => Ok(LossKind::Softplus),
            LossName::Ate => PerturbationConfig::new(self.loss.epsilon)
                .map(LossKind::Ate)
                .map_err(|e| value_err("loss.epsilon", e)),
            LossName::GaussianMap => GaussianMapConfig::new(self.loss.sigma)
                .map(LossKind::GaussianMap)
                .map_err(|e| value_err("loss.sigma", e)),
        }
    }

    pub fn mining_strategy(&self) -> MiningStrategy<f64> {
        match self.mining.strategy {
            MiningName::BatchHard => MiningStrategy::BatchHard,
            MiningName::StochasticSoft => MiningStrategy::StochasticSoft {
                temperature: self.mining.temperature,
            },
        }
    }

    pub fn protocol_flags(&self) -> ProtocolFlags {
        ProtocolFlags {
            exclude_same_camera_same_id: self.eval.exclude_same_camera_same_id,
            drop_empty_queries: self.eval.drop_empty_queries,
        }
    }

    /// MLP widths from the feature dimension through the hidden stack to
    /// the embedding dimension.
    pub fn layer_widths(&self, input_dim: usize) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.model.hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(&self.model.hidden);
        widths.push(self.model.embed_dim);
        widths
    }
}

fn value_err(key: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        msg: msg.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| value_err(key, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(value_err(key, format!("expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| item.trim().parse().map_err(|e| value_err(key, e)))
        .collect()
}

fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Applies one dotted key. Unknown keys are errors so typos cannot pass
/// silently.
pub fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "data.source" => {
            cfg.data.source = match value {
                "synthetic" => DataSource::Synthetic,
                "file" => DataSource::File,
                _ => return Err(value_err(key, format!("expected synthetic or file, got {value:?}"))),
            }
        }
        "data.path" => {
            cfg.data.path = if value.is_empty() {
                None
            } else {
                Some(PathBuf::from(value))
            }
        }
        "data.n_identities" => cfg.data.n_identities = parse_num(key, value)?,
        "data.samples_per_identity" => cfg.data.samples_per_identity = parse_num(key, value)?,
        "data.dim" => cfg.data.dim = parse_num(key, value)?,
        "data.cluster_std" => cfg.data.cluster_std = parse_num(key, value)?,
        "data.center_scale" => cfg.data.center_scale = parse_num(key, value)?,
        "data.n_cameras" => cfg.data.n_cameras = parse_num(key, value)?,
        "data.seed" => cfg.data.seed = parse_num(key, value)?,
        "data.train_fraction" => cfg.data.train_fraction = parse_num(key, value)?,
        "model.hidden" => cfg.model.hidden = parse_list(key, value)?,
        "model.embed_dim" => cfg.model.embed_dim = parse_num(key, value)?,
        "model.activation" => {
            cfg.model.activation = match value {
                "relu" => Activation::Relu,
                "tanh" => Activation::Tanh,
                _ => return Err(value_err(key, format!("expected relu or tanh, got {value:?}"))),
            }
        }
        "loss.name" => {
            cfg.loss.name = LossName::parse(value).ok_or_else(|| {
                value_err(
                    key,
                    format!("expected hinge, softplus, ate or gaussian-map, got {value:?}"),
                )
            })?
        }
        "loss.epsilon" => cfg.loss.epsilon = parse_num(key, value)?,
        "loss.margin" => cfg.loss.margin = parse_num(key, value)?,
        "loss.sigma" => cfg.loss.sigma = parse_num(key, value)?,
        "batch.p" => cfg.batch.p = parse_num(key, value)?,
        "batch.k" => cfg.batch.k = parse_num(key, value)?,
        "mining.strategy" => {
            cfg.mining.strategy = MiningName::parse(value).ok_or_else(|| {
                value_err(
                    key,
                    format!("expected batch-hard or stochastic-soft, got {value:?}"),
                )
            })?
        }
        "mining.temperature" => cfg.mining.temperature = parse_num(key, value)?,
        "optim.alpha0" => cfg.optim.alpha0 = parse_num(key, value)?,
        "optim.t0" => cfg.optim.t0 = parse_num(key, value)?,
        "optim.t1" => cfg.optim.t1 = parse_num(key, value)?,
        "optim.beta1_hi" => cfg.optim.beta1_hi = parse_num(key, value)?,
        "optim.beta1_lo" => cfg.optim.beta1_lo = parse_num(key, value)?,
        "optim.beta2" => cfg.optim.beta2 = parse_num(key, value)?,
        "optim.epsilon" => cfg.optim.epsilon = parse_num(key, value)?,
        "train.epochs" => cfg.train.epochs = parse_num(key, value)?,
        "train.seeds" => cfg.train.seeds = parse_list(key, value)?,
        "train.eval_every" => cfg.train.eval_every = parse_num(key, value)?,
        "eval.exclude_same_camera_same_id" => {
            cfg.eval.exclude_same_camera_same_id = parse_bool(key, value)?
        }
        "eval.drop_empty_queries" => cfg.eval.drop_empty_queries = parse_bool(key, value)?,
        "out.dir" => cfg.out_dir = PathBuf::from(value),
        _ => return Err(ConfigError::UnknownKey { key: key.into() }),
    }
    Ok(())
}

/// Splits config text into `(line number, key, value)` triples. Blank lines
/// and `#` comment lines are skipped; values run to the end of the line.
fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: i + 1,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        pairs.push((i + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a config document: the `profile` key (if any, later wins) picks
/// the base, then every other key applies in order.
pub fn parse_config_text(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let pairs = parse_pairs(text)?;
    let mut cfg = ExperimentConfig::default();
    for (_, key, value) in &pairs {
        if key == "profile" {
            cfg = ExperimentConfig::profile(value)?;
        }
    }
    for (_, key, value) in &pairs {
        if key != "profile" {
            apply_key(&mut cfg, key, value)?;
        }
    }
    Ok(cfg)
}

/// Serializes every key in canonical order; the result parses back to an
/// equal config.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let mut kv = |key: &str, value: String| {
        s.push_str(key);
        s.push_str(" = ");
        s.push_str(&value);
        s.push('\n');
    };
    kv("data.source", cfg.data.source.as_str().into());
    kv(
        "data.path",
        cfg.data
            .path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
    );
    kv("data.n_identities", cfg.data.n_identities.to_string());
    kv(
        "data.samples_per_identity",
        cfg.data.samples_per_identity.to_string(),
    );
    kv("data.dim", cfg.data.dim.to_string());
    kv("data.cluster_std", cfg.data.cluster_std.to_string());
    kv("data.center_scale", cfg.data.center_scale.to_string());
    kv("data.n_cameras", cfg.data.n_cameras.to_string());
    kv("data.seed", cfg.data.seed.to_string());
    kv("data.train_fraction", cfg.data.train_fraction.to_string());
    kv("model.hidden", join_list(&cfg.model.hidden));
    kv("model.embed_dim", cfg.model.embed_dim.to_string());
    kv("model.activation", cfg.model.activation.to_string());
    kv("loss.name", cfg.loss.name.as_str().into());
    kv("loss.epsilon", cfg.loss.epsilon.to_string());
    kv("loss.margin", cfg.loss.margin.to_string());
    kv("loss.sigma", cfg.loss.sigma.to_string());
    kv("batch.p", cfg.batch.p.to_string());
    kv("batch.k", cfg.batch.k.to_string());
    kv("mining.strategy", cfg.mining.strategy.as_str().into());
    kv("mining.temperature", cfg.mining.temperature.to_string());
    kv("optim.alpha0", cfg.optim.alpha0.to_string());
    kv("optim.t0", cfg.optim.t0.to_string());
    kv("optim.t1", cfg.optim.t1.to_string());
    kv("optim.beta1_hi", cfg.optim.beta1_hi.to_string());
    kv("optim.beta1_lo", cfg.optim.beta1_lo.to_string());
    kv("optim.beta2", cfg.optim.beta2.to_string());
    kv("optim.epsilon", cfg.optim.epsilon.to_string());
    kv("train.epochs", cfg.train.epochs.to_string());
    kv("train.seeds", join_list(&cfg.train.seeds));
    kv("train.eval_every", cfg.train.eval_every.to_string());
    kv(
        "eval.exclude_same_camera_same_id",
        cfg.eval.exclude_same_camera_same_id.to_string(),
    );
    kv(
        "eval.drop_empty_queries",
        cfg.eval.drop_empty_queries.to_string(),
    );
    kv("out.dir", cfg.out_dir.display().to_string());
    s
}

/// Checks every invariant a runnable experiment needs, naming the offending
/// key.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    let check = |ok: bool, key: &str, msg: &str| {
        if ok {
            Ok(())
        } else {
            Err(value_err(key, msg))
        }
    };
    match cfg.data.source {
        DataSource::Synthetic => {
            check(cfg.data.n_identities >= 1, "data.n_identities", "must be >= 1")?;
            check(
                cfg.data.samples_per_identity >= 1,
                "data.samples_per_identity",
                "must be >= 1",
            )?;
            check(cfg.data.dim >= 1, "data.dim", "must be >= 1")?;
            check(cfg.data.n_cameras >= 1, "data.n_cameras", "must be >= 1")?;
            check(
                cfg.data.cluster_std.is_finite() && cfg.data.cluster_std >= 0.0,
                "data.cluster_std",
                "must be finite and >= 0",
            )?;
            check(
                cfg.data.center_scale.is_finite() && cfg.data.center_scale >= 0.0,
                "data.center_scale",
                "must be finite and >= 0",
            )?;
        }
        DataSource::File => {
            check(cfg.data.path.is_some(), "data.path", "required when data.source = file")?;
        }
    }
    check(
        cfg.data.train_fraction > 0.0 && cfg.data.train_fraction < 1.0,
        "data.train_fraction",
        "must lie strictly between 0 and 1",
    )?;
    check(cfg.model.embed_dim >= 1, "model.embed_dim", "must be >= 1")?;
    check(
        cfg.model.hidden.iter().all(|&w| w >= 1),
        "model.hidden",
        "widths must be >= 1",
    )?;
    check(
        cfg.loss.epsilon.is_finite() && cfg.loss.epsilon >= 0.0,
        "loss.epsilon",
        "must be finite and >= 0",
    )?;
    check(
        cfg.loss.margin.is_finite() && cfg.loss.margin >= 0.0,
        "loss.margin",
        "must be finite and >= 0",
    )?;
    check(
        cfg.loss.sigma.is_finite() && cfg.loss.sigma > 0.0,
        "loss.sigma",
        "must be finite and > 0",
    )?;
    check(cfg.batch.p >= 2, "batch.p", "must be >= 2")?;
    check(cfg.batch.k >= 2, "batch.k", "must be >= 2")?;
    check(
        cfg.mining.temperature.is_finite() && cfg.mining.temperature > 0.0,
        "mining.temperature",
        "must be finite and > 0",
    )?;
    check(
        cfg.optim.alpha0.is_finite() && cfg.optim.alpha0 > 0.0,
        "optim.alpha0",
        "must be finite and > 0",
    )?;
    check(
        cfg.optim.t0 >= 0.0 && cfg.optim.t1 > cfg.optim.t0,
        "optim.t1",
        "need 0 <= t0 < t1",
    )?;
    for (key, b) in [
        ("optim.beta1_hi", cfg.optim.beta1_hi),
        ("optim.beta1_lo", cfg.optim.beta1_lo),
        ("optim.beta2", cfg.optim.beta2),
    ] {
        check((0.0..1.0).contains(&b), key, "must lie in [0, 1)")?;
    }
    check(
        cfg.optim.epsilon.is_finite() && cfg.optim.epsilon > 0.0,
        "optim.epsilon",
        "must be finite and > 0",
    )?;
    check(cfg.train.epochs >= 1, "train.epochs", "must be >= 1")?;
    check(!cfg.train.seeds.is_empty(), "train.seeds", "must not be empty")?;
    cfg.loss_kind()?;
    Ok(())
}

/// Loads, overrides, and validates the effective config for a CLI
/// invocation.
pub fn resolve_config(
    config_path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut pairs: Vec<(usize, String, String)> = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    for pair in overrides {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride { pair: pair.clone() })?;
        pairs.push((0, key.trim().to_string(), value.trim().to_string()));
    }

    let mut cfg = ExperimentConfig::default();
    for (_, key, value) in &pairs {
        if key == "profile" {
            cfg = ExperimentConfig::profile(value)?;
        }
    }
    for (_, key, value) in &pairs {
        if key != "profile" {
            apply_key(&mut cfg, key, value)?;
        }
    }
    if let Some(s) = seed {
        cfg.train.seeds = vec![s];
    }
    if let Some(dir) = out {
        cfg.out_dir = dir.to_path_buf();
    }
    validate(&cfg)?;
    Ok(cfg)
}
