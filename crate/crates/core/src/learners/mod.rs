//! Weighted-sample base learners and the loss/accuracy primitives.
//!
//! Both learners consume a [`DatasetView`] plus [`SampleWeights`]. Weights may
//! carry per-sample label overrides, which is how the fairness reduction
//! poses its cost-sensitive subproblems.

mod network;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataPoint, DatasetView};

pub use network::{Network, NetworkOptions};
pub use tree::{Tree, TreeOptions};

/// Probability clamp used by [`cross_entropy`].
pub const LOSS_EPSILON: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training view is empty")]
    EmptyView,
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("invalid sample weights: {0}")]
    InvalidWeights(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("input has dimension {got}, model expects {expected}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Which base learner to fit, with its options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Network(NetworkOptions),
    Tree(TreeOptions),
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        match self {
            LearnerSpec::Network(o) => o.validate(),
            LearnerSpec::Tree(o) => o.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Network(_) => "network",
            LearnerSpec::Tree(_) => "tree",
        }
    }
}

/// Nonnegative per-sample weights, optionally with target-label overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    weights: Vec<f64>,
    labels: Option<Vec<u8>>,
}

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            labels: None,
        }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self, TrainError> {
        Self::build(weights, None)
    }

    pub fn with_labels(weights: Vec<f64>, labels: Vec<u8>) -> Result<Self, TrainError> {
        if labels.len() != weights.len() {
            return Err(TrainError::InvalidWeights(format!(
                "{} labels for {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(TrainError::InvalidWeights("label override is not binary".into()));
        }
        Self::build(weights, Some(labels))
    }

    fn build(weights: Vec<f64>, labels: Option<Vec<u8>>) -> Result<Self, TrainError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(TrainError::InvalidWeights("weights must be finite and nonnegative".into()));
        }
        if !weights.is_empty() && weights.iter().all(|&w| w == 0.0) {
            return Err(TrainError::InvalidWeights("all weights are zero".into()));
        }
        Ok(Self { weights, labels })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn overrides(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Scale every weight by `factor`, keeping overrides.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Target label for view position `i`.
    pub fn target(&self, view: &DatasetView<'_>, i: usize) -> u8 {
        match &self.labels {
            Some(l) => l[i],
            None => view.point(i).y,
        }
    }
}

/// Flattened training inputs shared by both learners.
pub(crate) struct TrainingSet {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<u8>,
    pub w: Vec<f64>,
}

impl TrainingSet {
    fn build(view: &DatasetView<'_>, weights: &SampleWeights) -> Result<Self, TrainError> {
        if view.is_empty() {
            return Err(TrainError::EmptyView);
        }
        if weights.len() != view.len() {
            return Err(TrainError::InvalidWeights(format!(
                "{} weights for a view of {} points",
                weights.len(),
                view.len()
            )));
        }
        let dim = view.dim();
        let mut x = Vec::with_capacity(view.len() * dim);
        for p in view.iter() {
            x.extend_from_slice(&p.x);
        }
        let y = (0..view.len()).map(|i| weights.target(view, i)).collect();
        Ok(Self {
            dim,
            x,
            y,
            w: weights.weights().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Network(Network),
    Tree(Tree),
}

/// A trained probabilistic classifier with its training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub params: ModelParams,
    pub spec: LearnerSpec,
    pub seed: u64,
    pub dim: usize,
}

impl BaseModel {
    pub fn kind(&self) -> &'static str {
        self.spec.name()
    }

    pub fn predict_prob(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        if x.len() != self.dim {
            return Err(DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Network(n) => n.predict(x),
            ModelParams::Tree(t) => t.predict(x),
        }
    }

    /// Predictions for every point of a view, in view order.
    pub fn predict_view(&self, view: &DatasetView<'_>) -> Vec<f64> {
        assert_eq!(view.dim(), self.dim, "view dimension");
        view.iter().map(|p| self.predict_unchecked(&p.x)).collect()
    }

    pub fn loss(&self, z: &DataPoint) -> Result<f64, DimensionMismatch> {
        Ok(cross_entropy(self.predict_prob(&z.x)?, z.y))
    }

    /// Versioned JSON blob.
    pub fn to_blob(&self) -> String {
        serde_json::to_string(&ModelBlob {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })
        .expect("models serialize")
    }

    pub fn from_blob(blob: &str) -> Result<Self, String> {
        let parsed: ModelBlob = serde_json::from_str(blob).map_err(|e| e.to_string())?;
        if parsed.format != MODEL_FORMAT || parsed.version != MODEL_VERSION {
            return Err(format!(
                "unsupported model blob {} v{}",
                parsed.format, parsed.version
            ));
        }
        Ok(parsed.model)
    }
}

const MODEL_FORMAT: &str = "fairleak-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelBlob {
    format: String,
    version: u32,
    model: BaseModel,
}

pub fn train(
    view: &DatasetView<'_>,
    weights: &SampleWeights,
    spec: &LearnerSpec,
    seed: u64,
) -> Result<BaseModel, TrainError> {
    match spec {
        LearnerSpec::Network(opts) => train_network(view, weights, opts, seed),
        LearnerSpec::Tree(opts) => train_tree(view, weights, opts, seed),
    }
}

pub fn train_network(
    view: &DatasetView<'_>,
    weights: &SampleWeights,
    opts: &NetworkOptions,
    seed: u64,
) -> Result<BaseModel, TrainError> {
    opts.validate()?;
    let set = TrainingSet::build(view, weights)?;
    let net = Network::fit(&set, opts, seed)?;
    Ok(BaseModel {
        params: ModelParams::Network(net),
        spec: LearnerSpec::Network(opts.clone()),
        seed,
        dim: view.dim(),
    })
}

/// Trees are deterministic; `seed` is recorded only.
pub fn train_tree(
    view: &DatasetView<'_>,
    weights: &SampleWeights,
    opts: &TreeOptions,
    seed: u64,
) -> Result<BaseModel, TrainError> {
    opts.validate()?;
    let set = TrainingSet::build(view, weights)?;
    let tree = Tree::fit(&set, opts);
    Ok(BaseModel {
        params: ModelParams::Tree(tree),
        spec: LearnerSpec::Tree(opts.clone()),
        seed,
        dim: view.dim(),
    })
}

/// Binary cross-entropy with the probability clamped to `[ε, 1-ε]`.
pub fn cross_entropy(p: f64, y: u8) -> f64 {
    let p = p.clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Expected accuracy `1 - |p - y|`.
pub fn point_accuracy(p_expected: f64, y: u8) -> f64 {
    1.0 - (p_expected - y as f64).abs()
}
