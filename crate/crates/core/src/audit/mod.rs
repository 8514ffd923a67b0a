//! Loss-threshold membership inference and the privacy metrics built on it.
//!
//! The adversary sees only the loss of a model on a point. Adversary
//! "single" uses one global threshold; adversary "per subgroup" uses one
//! threshold per `(group, label)` cell. A loss strictly below the threshold
//! is guessed "member".
//!
//! Risks are estimated from a pool of models trained on random halves of the
//! data: for a point, the models that trained on it play the `b = 1` side of
//! the attack game and the others the `b = 0` side. The point's risk is the
//! average of the adversary's true-positive and true-negative rates over its
//! realized in/out split.

mod game;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, MembershipMask, SubgroupKey};
use crate::fair_reduction::RandomizedClassifier;

pub use game::{simulate_attack_game, GameAdversary, GameLearner, GameOutcome};
pub use report::{
    top_vulnerable, AccuracyRow, Memorization, PoolName, PoolRisks, PrivacyReport, ReportMeta, VulnerablePoint,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("{pool} classifiers but {masks} masks")]
    LengthMismatch { pool: usize, masks: usize },
    #[error("profile shape: {0}")]
    Shape(String),
    #[error("loss at model {model}, point {point} is not a finite nonnegative value")]
    BadLoss { model: usize, point: usize },
    #[error("empty {0} loss list")]
    EmptyList(&'static str),
    #[error("threshold rule has no entry for {0}")]
    UncoveredCell(SubgroupKey),
    #[error("point {0} is out of range")]
    PointOutOfRange(usize),
    #[error("profiles disagree on {0}")]
    Incompatible(&'static str),
    #[error("learner failed: {0}")]
    Learner(String),
}

/// Precomputed losses of a model pool on every dataset point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    model_ids: Vec<String>,
    /// `losses[m][j]`: loss of model `m` on point `j`.
    losses: Vec<Vec<f64>>,
    masks: Vec<MembershipMask>,
    cells: Vec<SubgroupKey>,
}

impl LossProfile {
    pub fn from_parts(
        model_ids: Vec<String>,
        losses: Vec<Vec<f64>>,
        masks: Vec<MembershipMask>,
        cells: Vec<SubgroupKey>,
    ) -> Result<Self, AuditError> {
        if model_ids.len() != losses.len() || masks.len() != losses.len() {
            return Err(AuditError::Shape(format!(
                "{} ids, {} loss rows, {} masks",
                model_ids.len(),
                losses.len(),
                masks.len()
            )));
        }
        let n = cells.len();
        for (m, row) in losses.iter().enumerate() {
            if row.len() != n || masks[m].len() != n {
                return Err(AuditError::Shape(format!("model {m} does not cover {n} points")));
            }
            if let Some(j) = row.iter().position(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(AuditError::BadLoss { model: m, point: j });
            }
        }
        Ok(Self {
            model_ids,
            losses,
            masks,
            cells,
        })
    }

    pub fn n_models(&self) -> usize {
        self.losses.len()
    }

    pub fn n_points(&self) -> usize {
        self.cells.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn masks(&self) -> &[MembershipMask] {
        &self.masks
    }

    pub fn cells(&self) -> &[SubgroupKey] {
        &self.cells
    }

    pub fn loss(&self, model: usize, point: usize) -> f64 {
        self.losses[model][point]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        &self.losses[model]
    }

    pub fn is_member(&self, model: usize, point: usize) -> bool {
        self.masks[model].contains(point)
    }

    /// Losses of the models trained on `point`, then of those that were not.
    pub fn split_losses(&self, point: usize) -> (Vec<f64>, Vec<f64>) {
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for m in 0..self.n_models() {
            if self.is_member(m, point) {
                inside.push(self.losses[m][point]);
            } else {
                outside.push(self.losses[m][point]);
            }
        }
        (inside, outside)
    }

    /// Apply `f` to every loss.
    pub fn map_losses(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            losses: self.losses.iter().map(|r| r.iter().map(|&l| f(l)).collect()).collect(),
            ..self.clone()
        }
    }

    /// The sub-profile of the listed models, in the given order.
    pub fn select_models(&self, models: &[usize]) -> Self {
        Self {
            model_ids: models.iter().map(|&m| self.model_ids[m].clone()).collect(),
            losses: models.iter().map(|&m| self.losses[m].clone()).collect(),
            masks: models.iter().map(|&m| self.masks[m].clone()).collect(),
            cells: self.cells.clone(),
        }
    }

    /// Points grouped by cell.
    pub fn partition(&self) -> BTreeMap<SubgroupKey, Vec<usize>> {
        let mut out: BTreeMap<SubgroupKey, Vec<usize>> = BTreeMap::new();
        for (j, k) in self.cells.iter().enumerate() {
            out.entry(*k).or_default().push(j);
        }
        out
    }
}

/// `losses[i][j] = expected_loss(pool[i], data[j])`.
pub fn build_profile(
    pool: &[RandomizedClassifier],
    masks: &[MembershipMask],
    data: &Dataset,
) -> Result<LossProfile, AuditError> {
    if pool.len() != masks.len() {
        return Err(AuditError::LengthMismatch {
            pool: pool.len(),
            masks: masks.len(),
        });
    }
    let losses = pool
        .iter()
        .map(|clf| {
            data.points()
                .iter()
                .map(|z| clf.expected_loss(z).map_err(|e| AuditError::Shape(e.to_string())))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ids = (0..pool.len()).map(|i| format!("model-{i}")).collect();
    LossProfile::from_parts(ids, losses, masks.to_vec(), data.keys())
}

/// Threshold maximizing `(TPR + TNR) / 2` for the rule "member iff loss < τ".
///
/// Candidates are midpoints between adjacent distinct values plus one value
/// below the minimum and one above the maximum (finite stand-ins for ±∞).
/// Ties go to the smallest threshold. Returns `(τ, balanced accuracy)`.
pub fn best_threshold(member_losses: &[f64], nonmember_losses: &[f64]) -> Result<(f64, f64), AuditError> {
    if member_losses.is_empty() {
        return Err(AuditError::EmptyList("member"));
    }
    if nonmember_losses.is_empty() {
        return Err(AuditError::EmptyList("non-member"));
    }
    let mut all: Vec<(f64, bool)> = member_losses
        .iter()
        .map(|&l| (l, true))
        .chain(nonmember_losses.iter().map(|&l| (l, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = member_losses.len() as u64;
    let k = nonmember_losses.len() as u64;
    let lo = all[0].0;
    let hi = all[all.len() - 1].0;

    // Balanced accuracy scaled by 2mk, kept integral so ties are exact.
    let score = |tp: u64, fp: u64| tp * k + (k - fp) * m;
    // Below everything: nobody is called a member.
    let mut best = (lo - 1.0, score(0, 0));
    let mut tp = 0;
    let mut fp = 0;
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < all.len() {
            let next = all[i].0;
            let mid = value + (next - value) / 2.0;
            if mid > value {
                mid
            } else {
                next
            }
        } else {
            hi + 1.0
        };
        let s = score(tp, fp);
        if s > best.1 {
            best = (threshold, s);
        }
    }
    let (tau, s) = best;
    let acc = s as f64 / (2 * m * k) as f64;
    Ok((tau, acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleVariant {
    Single,
    PerSubgroup,
}

impl RuleVariant {
    pub fn name(self) -> &'static str {
        match self {
            RuleVariant::Single => "single",
            RuleVariant::PerSubgroup => "per_subgroup",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    Single(f64),
    PerSubgroup(BTreeMap<SubgroupKey, f64>),
}

impl ThresholdRule {
    pub fn threshold(&self, key: SubgroupKey) -> Option<f64> {
        match self {
            ThresholdRule::Single(t) => Some(*t),
            ThresholdRule::PerSubgroup(map) => map.get(&key).copied(),
        }
    }

    pub fn variant(&self) -> RuleVariant {
        match self {
            ThresholdRule::Single(_) => RuleVariant::Single,
            ThresholdRule::PerSubgroup(_) => RuleVariant::PerSubgroup,
        }
    }

    pub fn map_thresholds(&self, f: impl Fn(f64) -> f64) -> Self {
        match self {
            ThresholdRule::Single(t) => ThresholdRule::Single(f(*t)),
            ThresholdRule::PerSubgroup(map) => {
                ThresholdRule::PerSubgroup(map.iter().map(|(k, &t)| (*k, f(t))).collect())
            }
        }
    }
}

/// A fitted rule plus the cells that had to borrow the global threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRule {
    pub rule: ThresholdRule,
    pub fallback_cells: Vec<SubgroupKey>,
}

fn pooled_losses(profile: &LossProfile, models: &[usize], points: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut members = Vec::new();
    let mut others = Vec::new();
    for &m in models {
        for &j in points {
            if profile.is_member(m, j) {
                members.push(profile.loss(m, j));
            } else {
                others.push(profile.loss(m, j));
            }
        }
    }
    (members, others)
}

/// Fit thresholds on the pooled `(model, point)` observations.
pub fn fit_rule(profile: &LossProfile, variant: RuleVariant) -> Result<FittedRule, AuditError> {
    let models: Vec<usize> = (0..profile.n_models()).collect();
    fit_rule_on(profile, variant, &models)
}

/// Fit using only the listed models (e.g. a held-out half of the pool).
pub fn fit_rule_on(profile: &LossProfile, variant: RuleVariant, models: &[usize]) -> Result<FittedRule, AuditError> {
    let everyone: Vec<usize> = (0..profile.n_points()).collect();
    let (members, others) = pooled_losses(profile, models, &everyone);
    let (global, _) = best_threshold(&members, &others)?;
    match variant {
        RuleVariant::Single => Ok(FittedRule {
            rule: ThresholdRule::Single(global),
            fallback_cells: Vec::new(),
        }),
        RuleVariant::PerSubgroup => {
            let mut thresholds = BTreeMap::new();
            let mut fallback_cells = Vec::new();
            for (key, points) in profile.partition() {
                let (members, others) = pooled_losses(profile, models, &points);
                match best_threshold(&members, &others) {
                    Ok((t, _)) => {
                        thresholds.insert(key, t);
                    }
                    Err(_) => {
                        thresholds.insert(key, global);
                        fallback_cells.push(key);
                    }
                }
            }
            Ok(FittedRule {
                rule: ThresholdRule::PerSubgroup(thresholds),
                fallback_cells,
            })
        }
    }
}

/// Per-point and per-cell attack results for one profile and rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEvaluation {
    /// Balanced accuracy over the point's in/out models; `None` when one side is empty.
    pub point_risk: Vec<Option<f64>>,
    /// True-positive rate over the models trained on the point.
    pub point_tpr: Vec<Option<f64>>,
    /// Mean of defined point risks in each cell.
    pub cell_risk: BTreeMap<SubgroupKey, f64>,
    /// Balanced accuracy over all of a cell's pooled `(model, point)` pairs.
    pub cell_accuracy: BTreeMap<SubgroupKey, f64>,
    pub undefined_points: usize,
}

pub fn evaluate_attack(profile: &LossProfile, rule: &ThresholdRule) -> Result<AttackEvaluation, AuditError> {
    let n = profile.n_points();
    let mut point_risk = vec![None; n];
    let mut point_tpr = vec![None; n];
    // per cell: (tp, members, tn, non-members)
    let mut pooled: BTreeMap<SubgroupKey, [f64; 4]> = BTreeMap::new();
    for j in 0..n {
        let key = profile.cells[j];
        let tau = rule.threshold(key).ok_or(AuditError::UncoveredCell(key))?;
        let (mut tp, mut pos, mut tn, mut neg) = (0.0, 0.0, 0.0, 0.0);
        for m in 0..profile.n_models() {
            let guess = profile.loss(m, j) < tau;
            if profile.is_member(m, j) {
                pos += 1.0;
                tp += guess as u8 as f64;
            } else {
                neg += 1.0;
                tn += (!guess) as u8 as f64;
            }
        }
        let acc = pooled.entry(key).or_insert([0.0; 4]);
        acc[0] += tp;
        acc[1] += pos;
        acc[2] += tn;
        acc[3] += neg;
        if pos > 0.0 {
            point_tpr[j] = Some(tp / pos);
        }
        if pos > 0.0 && neg > 0.0 {
            point_risk[j] = Some(0.5 * (tp / pos + tn / neg));
        }
    }
    let cell_risk = cell_means(&point_risk, &profile.cells);
    let cell_accuracy = pooled
        .into_iter()
        .map(|(k, [tp, pos, tn, neg])| {
            let tpr = if pos > 0.0 { tp / pos } else { 0.5 };
            let tnr = if neg > 0.0 { tn / neg } else { 0.5 };
            (k, 0.5 * (tpr + tnr))
        })
        .collect();
    let undefined_points = point_risk.iter().filter(|r| r.is_none()).count();
    Ok(AttackEvaluation {
        point_risk,
        point_tpr,
        cell_risk,
        cell_accuracy,
        undefined_points,
    })
}

/// Mean of the defined values in each cell; cells with none are omitted.
pub fn cell_means(values: &[Option<f64>], cells: &[SubgroupKey]) -> BTreeMap<SubgroupKey, f64> {
    let mut sums: BTreeMap<SubgroupKey, (f64, usize)> = BTreeMap::new();
    for (v, k) in values.iter().zip(cells) {
        if let Some(v) = v {
            let s = sums.entry(*k).or_insert((0.0, 0));
            s.0 += v;
            s.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyCost {
    /// `fair - unconstrained`, undefined where either side is.
    pub point: Vec<Option<f64>>,
    pub cell: BTreeMap<SubgroupKey, f64>,
}

pub fn privacy_cost(
    risks_fair: &[Option<f64>],
    risks_unc: &[Option<f64>],
    cells: &[SubgroupKey],
) -> Result<PrivacyCost, AuditError> {
    if risks_fair.len() != risks_unc.len() || risks_fair.len() != cells.len() {
        return Err(AuditError::Incompatible("point indexing"));
    }
    let point: Vec<Option<f64>> = risks_fair
        .iter()
        .zip(risks_unc)
        .map(|(f, u)| Some((*f)? - (*u)?))
        .collect();
    let cell = cell_means(&point, cells);
    Ok(PrivacyCost { point, cell })
}

/// Mean out-loss minus mean in-loss; `None` without both kinds of model.
pub fn memorization(point: usize, profile: &LossProfile) -> Option<f64> {
    if point >= profile.n_points() {
        return None;
    }
    let (inside, outside) = profile.split_losses(point);
    if inside.is_empty() || outside.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some(mean(&outside) - mean(&inside))
}

pub fn memorization_all(profile: &LossProfile) -> Vec<Option<f64>> {
    (0..profile.n_points()).map(|j| memorization(j, profile)).collect()
}

fn in_model_tpr(profile: &LossProfile, rule: &ThresholdRule, point: usize) -> Result<Option<f64>, AuditError> {
    let key = profile.cells[point];
    let tau = rule.threshold(key).ok_or(AuditError::UncoveredCell(key))?;
    let (inside, _) = profile.split_losses(point);
    if inside.is_empty() {
        return Ok(None);
    }
    let hits = inside.iter().filter(|&&l| l < tau).count();
    Ok(Some(hits as f64 / inside.len() as f64))
}

/// TPR over in-models under the fair pool minus the same under the
/// unconstrained pool; `None` if either pool has no in-model for the point.
pub fn attack_tpr_gain(
    profile_fair: &LossProfile,
    profile_unc: &LossProfile,
    rule_fair: &ThresholdRule,
    rule_unc: &ThresholdRule,
    point: usize,
) -> Result<Option<f64>, AuditError> {
    if point >= profile_fair.n_points() || point >= profile_unc.n_points() {
        return Err(AuditError::PointOutOfRange(point));
    }
    let fair = in_model_tpr(profile_fair, rule_fair, point)?;
    let unc = in_model_tpr(profile_unc, rule_unc, point)?;
    Ok(match (fair, unc) {
        (Some(f), Some(u)) => Some(f - u),
        _ => None,
    })
}
