//! Equalized-odds constrained training via the exponentiated-gradient
//! reduction to cost-sensitive classification, plus fairness and accuracy
//! metrics for randomized classifiers.
//!
//! Error rates of a (randomized, probabilistic) classifier default to the
//! expected misclassification `E|p(x) - y|`. With `hard_decisions` each base
//! model's output is first thresholded at 0.5. Both forms are linear in the
//! mixture weights, which is what makes the final mixture selection an LP.
//!
//! Constraint moments are per `(group, label)` cell: the cell's error rate
//! minus the pooled error rate of its label, in both signs. With two groups
//! the pairwise gap for label `y` equals the difference of the two cell
//! moments for `y`; the reported [`fairness_gap`] always uses the pairwise form.

use std::collections::{BTreeMap, BTreeSet};

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataPoint, DatasetView, SubgroupKey};
use crate::learners::{self, cross_entropy, BaseModel, DimensionMismatch, LearnerSpec, SampleWeights, TrainError};
use crate::seed;

/// Numeric slack accepted when checking a mixture against `delta`.
pub const GAP_TOLERANCE: f64 = 1e-3;
const MIN_ITERATIONS: usize = 5;
const CONVERGENCE_WINDOW: usize = 5;
const CHECK_GROWTH: f64 = 1.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("subgroup {0} has no points")]
    EmptyCell(SubgroupKey),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FairError {
    #[error("invalid reduction config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// How a probabilistic output counts as an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ErrorMode {
    /// `|p - y|`.
    #[default]
    Expected,
    /// `|1[p >= 0.5] - y|`.
    Hard,
}

impl ErrorMode {
    pub fn from_hard(hard_decisions: bool) -> Self {
        if hard_decisions {
            ErrorMode::Hard
        } else {
            ErrorMode::Expected
        }
    }

    pub fn error(self, p: f64, y: u8) -> f64 {
        match self {
            ErrorMode::Expected => (p - y as f64).abs(),
            ErrorMode::Hard => ((p >= 0.5) as u8 != y) as u8 as f64,
        }
    }
}

/// Probability-weighted mixture of base models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedClassifier {
    members: Vec<(BaseModel, f64)>,
}

impl RandomizedClassifier {
    /// Weights must be nonnegative with a positive sum; they are normalized.
    pub fn new(members: Vec<(BaseModel, f64)>) -> Result<Self, String> {
        if members.is_empty() {
            return Err("a randomized classifier needs at least one member".into());
        }
        if members.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err("member weights must be finite and nonnegative".into());
        }
        let dim = members[0].0.dim;
        if members.iter().any(|(m, _)| m.dim != dim) {
            return Err("members disagree on input dimension".into());
        }
        let total: f64 = members.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err("member weights sum to zero".into());
        }
        let members = members.into_iter().map(|(m, w)| (m, w / total)).collect();
        Ok(Self { members })
    }

    pub fn singleton(model: BaseModel) -> Self {
        Self {
            members: vec![(model, 1.0)],
        }
    }

    pub fn members(&self) -> &[(BaseModel, f64)] {
        &self.members
    }

    pub fn weight_sum(&self) -> f64 {
        self.members.iter().map(|(_, w)| w).sum()
    }

    pub fn dim(&self) -> usize {
        self.members[0].0.dim
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DimensionMismatch> {
        if x.len() != self.dim() {
            return Err(DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `sum_i w_i * p_i(x)`.
    pub fn expected_prediction(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        self.check_dim(x)?;
        Ok(self.members.iter().map(|(m, w)| w * m.predict_unchecked(x)).sum())
    }

    /// Mixture-expected cross-entropy `sum_i w_i * CE(p_i(x), y)`.
    pub fn expected_loss(&self, z: &DataPoint) -> Result<f64, DimensionMismatch> {
        self.check_dim(&z.x)?;
        Ok(self
            .members
            .iter()
            .map(|(m, w)| w * cross_entropy(m.predict_unchecked(&z.x), z.y))
            .sum())
    }

    /// Expected error of each point of the view under `mode`.
    pub fn errors(&self, view: &DatasetView<'_>, mode: ErrorMode) -> Vec<f64> {
        let mut out = vec![0.0; view.len()];
        for (model, w) in &self.members {
            for (slot, p) in out.iter_mut().zip(view.iter()) {
                *slot += w * mode.error(model.predict_unchecked(&p.x), p.y);
            }
        }
        out
    }

    /// Mean expected accuracy `1 - |E[p] - y|` over the view.
    pub fn accuracy(&self, view: &DatasetView<'_>) -> f64 {
        let errors = self.errors(view, ErrorMode::Expected);
        1.0 - errors.iter().sum::<f64>() / errors.len() as f64
    }
}

/// Per-cell error rates, checking that every `(group, label)` combination
/// over the present groups and labels is populated.
fn cell_rates(errors: &[f64], keys: &[SubgroupKey]) -> Result<BTreeMap<SubgroupKey, f64>, MetricError> {
    let groups: BTreeSet<u32> = keys.iter().map(|k| k.g).collect();
    let labels: BTreeSet<u8> = keys.iter().map(|k| k.y).collect();
    let mut sums: BTreeMap<SubgroupKey, (f64, usize)> = BTreeMap::new();
    for (&e, &k) in errors.iter().zip(keys) {
        let s = sums.entry(k).or_insert((0.0, 0));
        s.0 += e;
        s.1 += 1;
    }
    for &g in &groups {
        for &y in &labels {
            let key = SubgroupKey::new(g, y);
            if !sums.contains_key(&key) {
                return Err(MetricError::EmptyCell(key));
            }
        }
    }
    Ok(sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect())
}

/// Largest pairwise error-rate difference within a label.
fn gap_from_rates(rates: &BTreeMap<SubgroupKey, f64>) -> f64 {
    let mut gap: f64 = 0.0;
    for (a, ra) in rates {
        for (b, rb) in rates.range(*a..) {
            if a.y == b.y {
                gap = gap.max((ra - rb).abs());
            }
        }
    }
    gap
}

pub fn gap_from_errors(errors: &[f64], keys: &[SubgroupKey]) -> Result<f64, MetricError> {
    Ok(gap_from_rates(&cell_rates(errors, keys)?))
}

fn view_keys(view: &DatasetView<'_>) -> Vec<SubgroupKey> {
    view.iter().map(DataPoint::key).collect()
}

/// Equalized-odds fairness gap: max over labels and group pairs of the
/// absolute error-rate difference.
pub fn fairness_gap(clf: &RandomizedClassifier, data: &DatasetView<'_>, mode: ErrorMode) -> Result<f64, MetricError> {
    if data.dim() != clf.dim() {
        return Err(DimensionMismatch {
            expected: clf.dim(),
            got: data.dim(),
        }
        .into());
    }
    gap_from_errors(&clf.errors(data, mode), &view_keys(data))
}

/// Signed per-cell moments: cell error rate minus the pooled rate of its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationVector {
    cells: Vec<(SubgroupKey, f64)>,
}

impl ViolationVector {
    fn from_errors(errors: &[f64], keys: &[SubgroupKey]) -> Result<Self, MetricError> {
        let rates = cell_rates(errors, keys)?;
        let mut pooled: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
        for (&e, k) in errors.iter().zip(keys) {
            let s = pooled.entry(k.y).or_insert((0.0, 0));
            s.0 += e;
            s.1 += 1;
        }
        let cells = rates
            .into_iter()
            .map(|(k, r)| {
                let (s, c) = pooled[&k.y];
                (k, r - s / c as f64)
            })
            .collect();
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[(SubgroupKey, f64)] {
        &self.cells
    }

    pub fn get(&self, key: SubgroupKey) -> Option<f64> {
        self.cells.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    /// Moment values in `(+v, -v)` pairs per cell, in cell order.
    pub fn moments(&self) -> Vec<f64> {
        self.cells.iter().flat_map(|&(_, v)| [v, -v]).collect()
    }
}

pub fn eo_violations(
    clf: &RandomizedClassifier,
    train_view: &DatasetView<'_>,
    mode: ErrorMode,
) -> Result<ViolationVector, MetricError> {
    ViolationVector::from_errors(&clf.errors(train_view, mode), &view_keys(train_view))
}

/// Nonnegative Lagrange multipliers, one `(plus, minus)` pair per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub cells: Vec<SubgroupKey>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(cells: Vec<SubgroupKey>) -> Self {
        let n = cells.len();
        Self {
            cells,
            plus: vec![0.0; n],
            minus: vec![0.0; n],
        }
    }

    /// `bound * exp(theta_k) / (1 + sum_j exp(theta_j))`, with `theta` in
    /// `(plus, minus)` pairs.
    fn from_theta(cells: Vec<SubgroupKey>, theta: &[f64], bound: f64) -> Self {
        let shift = theta.iter().copied().fold(0.0f64, f64::max);
        let exps: Vec<f64> = theta.iter().map(|t| (t - shift).exp()).collect();
        let denom = (-shift).exp() + exps.iter().sum::<f64>();
        let lambda: Vec<f64> = exps.iter().map(|e| bound * e / denom).collect();
        Self {
            cells,
            plus: lambda.iter().step_by(2).copied().collect(),
            minus: lambda.iter().skip(1).step_by(2).copied().collect(),
        }
    }

    fn net(&self, key: SubgroupKey) -> f64 {
        self.cells
            .iter()
            .position(|k| *k == key)
            .map_or(0.0, |i| self.plus[i] - self.minus[i])
    }
}

/// Cost-sensitive weights for the Lagrangian inner problem.
///
/// For point `i` in cell `c` with label `y`, the cost of predicting 1 rather
/// than 0 is `(1 - 2y)/n + s_y * (net_c / n_c - sum_{c' ~ y} net_c' / n_y)`,
/// where `s_y = +1` for `y = 0` and `-1` for `y = 1` and `net = plus - minus`.
/// The returned weight is `n * |cost|`, with the target label set to 1 when
/// predicting 1 is cheaper.
pub fn reweight_costs(multipliers: &Multipliers, train_view: &DatasetView<'_>) -> SampleWeights {
    let n = train_view.len() as f64;
    let cells = train_view.partition();
    let mut label_counts: BTreeMap<u8, f64> = BTreeMap::new();
    for (k, idx) in &cells {
        *label_counts.entry(k.y).or_insert(0.0) += idx.len() as f64;
    }
    let mut label_net: BTreeMap<u8, f64> = BTreeMap::new();
    for k in cells.keys() {
        *label_net.entry(k.y).or_insert(0.0) += multipliers.net(*k);
    }
    let mut cell_adjust: BTreeMap<SubgroupKey, f64> = BTreeMap::new();
    for (k, idx) in &cells {
        let s = if k.y == 0 { 1.0 } else { -1.0 };
        let per_cell = multipliers.net(*k) / idx.len() as f64 - label_net[&k.y] / label_counts[&k.y];
        cell_adjust.insert(*k, n * s * per_cell);
    }

    let mut weights = Vec::with_capacity(train_view.len());
    let mut labels = Vec::with_capacity(train_view.len());
    let mut overridden = false;
    for p in train_view.iter() {
        // signed weight = -n * cost
        let signed = (2.0 * p.y as f64 - 1.0) - cell_adjust[&p.key()];
        let target = if signed > 0.0 {
            1
        } else if signed < 0.0 {
            0
        } else {
            p.y
        };
        overridden |= target != p.y;
        weights.push(signed.abs());
        labels.push(target);
    }
    let built = if overridden {
        SampleWeights::with_labels(weights, labels)
    } else {
        SampleWeights::new(weights)
    };
    built.unwrap_or_else(|_| SampleWeights::uniform(train_view.len()))
}

/// Exponentiated-gradient settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgConfig {
    /// Enforced bound on the training fairness gap.
    pub delta: f64,
    pub iterations: usize,
    /// Multiplier bound `B`.
    pub bound: f64,
    /// Base step; the step on the multiplier logits is `eta / bound`.
    pub eta: f64,
    pub learner: LearnerSpec,
    pub hard_decisions: bool,
}

impl EgConfig {
    pub fn new(delta: f64, learner: LearnerSpec) -> Self {
        Self {
            delta,
            iterations: 100,
            bound: 100.0,
            eta: 2.0,
            learner,
            hard_decisions: false,
        }
    }

    pub fn validate(&self) -> Result<(), FairError> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(FairError::InvalidConfig("delta must be >= 0".into()));
        }
        if self.iterations == 0 {
            return Err(FairError::InvalidConfig("iterations must be positive".into()));
        }
        if !(self.bound > 0.0 && self.eta > 0.0) {
            return Err(FairError::InvalidConfig("bound and eta must be positive".into()));
        }
        self.learner.validate()?;
        Ok(())
    }

    pub fn error_mode(&self) -> ErrorMode {
        ErrorMode::from_hard(self.hard_decisions)
    }
}

/// Outcome of [`eg_fit`].
#[derive(Debug, Clone)]
pub struct EgFit {
    pub classifier: RandomizedClassifier,
    /// Training fairness gap of the returned mixture.
    pub achieved_gap: f64,
    /// False when no mixture met `delta + GAP_TOLERANCE`; the classifier is
    /// then the lowest-gap candidate.
    pub gap_met: bool,
    pub train_error: f64,
    pub iterations: usize,
}

impl EgFit {
    pub fn gap_unmet(&self) -> bool {
        !self.gap_met
    }
}

struct Hypothesis {
    model: BaseModel,
    mean_error: f64,
    rates: BTreeMap<SubgroupKey, f64>,
}

/// Mixture over the hypotheses found so far.
#[derive(Debug, Clone)]
struct Mixture {
    weights: Vec<f64>,
    error: f64,
    gap: f64,
}

fn mixture_of(hyps: &[Hypothesis], weights: Vec<f64>) -> Mixture {
    let error = hyps.iter().zip(&weights).map(|(h, w)| w * h.mean_error).sum();
    let mut rates: BTreeMap<SubgroupKey, f64> = BTreeMap::new();
    for (h, w) in hyps.iter().zip(&weights) {
        for (k, r) in &h.rates {
            *rates.entry(*k).or_insert(0.0) += w * r;
        }
    }
    Mixture {
        weights,
        error,
        gap: gap_from_rates(&rates),
    }
}

fn uniform_over(hyps: &[Hypothesis], pick: impl Fn(&Hypothesis) -> bool) -> Option<Mixture> {
    let chosen: Vec<bool> = hyps.iter().map(pick).collect();
    let count = chosen.iter().filter(|&&c| c).count();
    if count == 0 {
        return None;
    }
    let weights = chosen.iter().map(|&c| if c { 1.0 / count as f64 } else { 0.0 }).collect();
    Some(mixture_of(hyps, weights))
}

/// Lowest-error mixture whose pairwise gaps are all within `delta`.
fn best_feasible_mixture(hyps: &[Hypothesis], delta: f64) -> Option<Mixture> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = hyps.iter().map(|h| lp.add_var(h.mean_error, (0.0, f64::INFINITY))).collect();
    lp.add_constraint(vars.iter().map(|&v| (v, 1.0)), ComparisonOp::Eq, 1.0);
    let keys: Vec<SubgroupKey> = hyps[0].rates.keys().copied().collect();
    for (i, a) in keys.iter().enumerate() {
        for b in &keys[i + 1..] {
            if a.y != b.y {
                continue;
            }
            let terms: Vec<_> = vars
                .iter()
                .zip(hyps)
                .map(|(&v, h)| (v, h.rates[a] - h.rates[b]))
                .collect();
            lp.add_constraint(terms.iter().copied(), ComparisonOp::Le, delta);
            lp.add_constraint(terms, ComparisonOp::Ge, -delta);
        }
    }
    let solution = lp.solve().ok()?;
    let raw: Vec<f64> = vars.iter().map(|&v| solution[v].max(0.0)).collect();
    let cleaned: Vec<f64> = raw.iter().map(|&w| if w < 1e-12 { 0.0 } else { w }).collect();
    let total: f64 = cleaned.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mixture = mixture_of(hyps, cleaned.iter().map(|w| w / total).collect());
    (mixture.gap <= delta + 1e-9).then_some(mixture)
}

/// Best mixture among the candidates: lowest error among those within
/// `delta`, else lowest gap.
fn select(hyps: &[Hypothesis], delta: f64) -> (Mixture, bool) {
    let mut candidates: Vec<Mixture> = Vec::new();
    candidates.extend(best_feasible_mixture(hyps, delta));
    candidates.extend(uniform_over(hyps, |_| true));
    candidates.extend(uniform_over(hyps, |h| gap_from_rates(&h.rates) <= delta));
    for i in 0..hyps.len() {
        let mut w = vec![0.0; hyps.len()];
        w[i] = 1.0;
        candidates.push(mixture_of(hyps, w));
    }
    let feasible = candidates
        .iter()
        .filter(|m| m.gap <= delta + GAP_TOLERANCE)
        .min_by(|a, b| a.error.total_cmp(&b.error));
    match feasible {
        Some(m) => (m.clone(), true),
        None => {
            let m = candidates
                .iter()
                .min_by(|a, b| a.gap.total_cmp(&b.gap).then(a.error.total_cmp(&b.error)))
                .expect("at least one hypothesis");
            (m.clone(), false)
        }
    }
}

/// Saddle-point search for an equalized-odds constrained mixture.
///
/// Each iteration sets multipliers from the logits, fits one base model on
/// the induced cost-sensitive problem, and moves the logits along the new
/// model's moment violations. The loop stops at `iterations`, or once a
/// feasible mixture exists and its error has stopped improving.
pub fn eg_fit(train_view: &DatasetView<'_>, cfg: &EgConfig, seed: u64) -> Result<EgFit, FairError> {
    cfg.validate()?;
    let mode = cfg.error_mode();
    let keys = view_keys(train_view);
    // Validates that every cell is populated.
    cell_rates(&vec![0.0; keys.len()], &keys)?;
    let cells: Vec<SubgroupKey> = train_view.partition().into_keys().collect();
    let n = train_view.len() as f64;

    let mut theta = vec![0.0; 2 * cells.len()];
    let mut eta = cfg.eta / cfg.bound;
    let mut hyps: Vec<Hypothesis> = Vec::new();
    let mut best_errors: Vec<f64> = Vec::new();
    let mut tolerance = 0.0;
    let mut next_check = MIN_ITERATIONS as f64;
    let mut last_regret = f64::INFINITY;

    for t in 0..cfg.iterations {
        let lambda = Multipliers::from_theta(cells.clone(), &theta, cfg.bound);
        let weights = reweight_costs(&lambda, train_view);
        let model = learners::train(train_view, &weights, &cfg.learner, seed::derive(seed, "eg", t as u64))?;
        let errors: Vec<f64> = train_view.iter().map(|p| mode.error(model.predict_unchecked(&p.x), p.y)).collect();
        let mean_error = errors.iter().sum::<f64>() / n;
        let violations = ViolationVector::from_errors(&errors, &keys)?;
        let rates = cell_rates(&errors, &keys)?;
        if t == 0 {
            let var = errors.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / n;
            tolerance = 0.5 * var.sqrt() / n.sqrt();
        }
        hyps.push(Hypothesis {
            model,
            mean_error,
            rates,
        });

        let (current, feasible) = select(&hyps, cfg.delta);
        best_errors.push(if feasible { current.error } else { f64::INFINITY });
        if t + 1 >= MIN_ITERATIONS.max(CONVERGENCE_WINDOW + 1) && feasible {
            let earlier = best_errors[t - CONVERGENCE_WINDOW];
            if earlier - current.error < tolerance {
                break;
            }
        }

        // Halve the step when the averaged iterate's violation grows.
        if (t + 1) as f64 >= next_check {
            let regret = uniform_over(&hyps, |_| true).map_or(f64::INFINITY, |m| m.gap);
            if regret > last_regret {
                eta /= 2.0;
            }
            last_regret = regret;
            next_check *= CHECK_GROWTH;
        }

        for (th, g) in theta.iter_mut().zip(violations.moments()) {
            *th += eta * (g - cfg.delta);
        }
    }

    let (chosen, gap_met) = select(&hyps, cfg.delta);
    let iterations = hyps.len();
    let members: Vec<(BaseModel, f64)> = hyps
        .into_iter()
        .zip(&chosen.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(h, &w)| (h.model, w))
        .collect();
    let classifier = RandomizedClassifier::new(members).map_err(FairError::InvalidConfig)?;
    let achieved_gap = fairness_gap(&classifier, train_view, mode)?;
    let train_error = classifier.errors(train_view, mode).iter().sum::<f64>() / n;
    Ok(EgFit {
        classifier,
        achieved_gap,
        gap_met,
        train_error,
        iterations,
    })
}
