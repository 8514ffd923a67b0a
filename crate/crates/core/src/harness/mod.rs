//! Experiment orchestration: configs, pool training, sweeps and file outputs.
//!
//! A config file is a flat TOML-syntax table. Synthetic data keys are read
//! by [`SyntheticConfig::read_keys`]; setting `csv` switches to a CSV source
//! described by `features`, `group`, `label`, `positive` and `negative`.
//! Any key left unread is an error.

mod experiment;
mod sweep;

use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::audit::{AuditError, RuleVariant};
use crate::dataset::{generate_synthetic, load_csv, CsvSchema, Dataset, DatasetError, SyntheticConfig};
use crate::fair_reduction::EgConfig;
use crate::kv::{invalid, KvError, KvReader};
use crate::learners::{LearnerSpec, NetworkOptions, TreeOptions};
use crate::seed;

pub use experiment::{run_experiment, run_experiment_with, train_pools, PoolOutputs, TrainedPools};
pub use sweep::{compare_attacks, run_sweep, sweep_seed, SweepOutcome, SweepParameter, SweepSpec, SweepValue};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<KvError> for HarnessError {
    fn from(e: KvError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<DatasetError> for HarnessError {
    fn from(e: DatasetError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

pub(crate) fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        message: e.to_string(),
    }
}

impl From<AuditError> for HarnessError {
    fn from(e: AuditError) -> Self {
        stage("audit")(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub pool_size: usize,
    pub train_fraction: f64,
    /// Base learner of the unconstrained pool; the fair pool uses `eg.learner`.
    pub learner: LearnerSpec,
    pub eg: EgConfig,
    pub attacks: Vec<RuleVariant>,
    /// Fit thresholds on one half of each pool and evaluate on the other.
    pub held_out_thresholds: bool,
    pub seed: u64,
    /// Directory of trained models keyed by everything that determines them.
    pub model_cache: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The four-Gaussian benchmark with the default network and `delta`.
    pub fn standard(delta: f64, seed: u64) -> Self {
        let learner = LearnerSpec::Network(NetworkOptions::default());
        Self {
            source: DataSource::Synthetic(SyntheticConfig::standard()),
            pool_size: 30,
            train_fraction: 0.5,
            eg: EgConfig::new(delta, learner.clone()),
            learner,
            attacks: vec![RuleVariant::Single, RuleVariant::PerSubgroup],
            held_out_thresholds: false,
            seed,
            model_cache: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.pool_size < 2 {
            return Err(HarnessError::Config("pool_size must be at least 2".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(HarnessError::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self.attacks.is_empty() {
            return Err(HarnessError::Config("attacks must name at least one variant".into()));
        }
        self.learner.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.eg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let DataSource::Synthetic(s) = &self.source {
            s.validate()?;
        }
        Ok(())
    }

    /// Parse a config; relative CSV paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut kv = KvReader::parse(text)?;
        let cfg = Self::read_keys(&mut kv, base_dir)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn read_keys(kv: &mut KvReader, base_dir: &Path) -> Result<Self, HarnessError> {
        let source = match kv.take::<String>("csv")? {
            Some(path) => {
                let schema = CsvSchema {
                    features: kv.require("features")?,
                    group: kv.take_or("group", "g".to_string())?,
                    label: kv.take_or("label", "y".to_string())?,
                    positive: kv.take_or("positive", "1".to_string())?,
                    negative: kv.take_or("negative", "0".to_string())?,
                };
                DataSource::Csv {
                    path: base_dir.join(path),
                    schema,
                }
            }
            None => DataSource::Synthetic(SyntheticConfig::read_keys(kv)?),
        };
        let pool_size = non_negative(kv, "pool_size", 30)?;
        let train_fraction = kv.take_or("train_fraction", 0.5)?;

        let base: String = kv.take_or("base", "network".to_string())?;
        let defaults = NetworkOptions::default();
        let net = NetworkOptions {
            hidden: kv.take_or("hidden", defaults.hidden.clone())?,
            learning_rate: kv.take_or("learning_rate", defaults.learning_rate)?,
            epochs: non_negative(kv, "epochs", defaults.epochs)?,
            batch_size: non_negative(kv, "batch_size", defaults.batch_size)?,
            tol: kv.take_or("tol", defaults.tol)?,
            patience: non_negative(kv, "patience", defaults.patience)?,
        };
        let tree_defaults = TreeOptions::default();
        let tree = TreeOptions {
            max_depth: non_negative(kv, "max_depth", tree_defaults.max_depth)?,
            min_samples_leaf: non_negative(kv, "min_samples_leaf", tree_defaults.min_samples_leaf)?,
        };
        let learner = match base.as_str() {
            "network" => LearnerSpec::Network(net),
            "tree" => LearnerSpec::Tree(tree),
            other => return Err(invalid("base", format!("expected network or tree, got {other:?}")).into()),
        };

        let mut eg = EgConfig::new(kv.take_or("delta", 0.001)?, learner.clone());
        eg.iterations = non_negative(kv, "eg_iters", eg.iterations)?;
        eg.bound = kv.take_or("eg_bound", eg.bound)?;
        eg.eta = kv.take_or("eg_eta", eg.eta)?;
        eg.hard_decisions = kv.take_or("hard_decisions", false)?;

        let attack_names: Vec<String> =
            kv.take_or("attacks", vec!["single".to_string(), "per_subgroup".to_string()])?;
        let mut attacks = Vec::new();
        for name in &attack_names {
            let variant = match name.as_str() {
                "single" => RuleVariant::Single,
                "per_subgroup" => RuleVariant::PerSubgroup,
                other => return Err(invalid("attacks", format!("unknown variant {other:?}")).into()),
            };
            if !attacks.contains(&variant) {
                attacks.push(variant);
            }
        }
        attacks.sort();

        let seed: i64 = kv.take_or("seed", 0)?;
        let model_cache = kv.take::<String>("model_cache")?.map(|p| base_dir.join(p));
        Ok(Self {
            source,
            pool_size,
            train_fraction,
            learner,
            eg,
            attacks,
            held_out_thresholds: kv.take_or("held_out_thresholds", false)?,
            seed: seed as u64,
            model_cache,
        })
    }

    /// Load or generate the dataset. Synthetic data uses the `data` stream.
    pub fn load_data(&self) -> Result<Dataset, HarnessError> {
        match &self.source {
            DataSource::Synthetic(s) => Ok(generate_synthetic(s, seed::derive(self.seed, "data", 0))?),
            DataSource::Csv { path, schema } => Ok(load_csv(path, schema)?),
        }
    }

    pub fn train_size(&self, n: usize) -> usize {
        ((self.train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    }

    /// Canonical echo of every setting, recorded in the report.
    pub fn echo(&self) -> serde_json::Value {
        let source = match &self.source {
            DataSource::Synthetic(s) => json!({
                "kind": "synthetic",
                "n": s.n,
                "p_group0": s.p_group0,
                "p_neg_given_g": s.p_neg_given_g,
                "gaussians": s.gaussians.iter().map(|(k, g)| (k.to_string(), json!({
                    "mean": g.mean(),
                    "cov": g.cov(),
                }))).collect::<serde_json::Map<_, _>>(),
            }),
            DataSource::Csv { path, schema } => json!({
                "kind": "csv",
                "path": path.display().to_string(),
                "schema": schema,
            }),
        };
        json!({
            "source": source,
            "pool_size": self.pool_size,
            "train_fraction": self.train_fraction,
            "learner": self.learner,
            "eg": self.eg,
            "attacks": self.attacks,
            "held_out_thresholds": self.held_out_thresholds,
            "seed": self.seed,
        })
    }
}

fn non_negative(kv: &mut KvReader, key: &str, default: usize) -> Result<usize, KvError> {
    let v: i64 = kv.take_or(key, default as i64)?;
    usize::try_from(v).map_err(|_| invalid(key, "must be nonnegative"))
}
