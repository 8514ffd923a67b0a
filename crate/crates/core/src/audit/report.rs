//! The per-experiment privacy report and its ranking helpers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AuditError, PrivacyCost, RuleVariant};
use crate::dataset::SubgroupKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolName {
    Unconstrained,
    Fair,
}

impl PoolName {
    pub const ALL: [PoolName; 2] = [PoolName::Unconstrained, PoolName::Fair];

    pub fn name(self) -> &'static str {
        match self {
            PoolName::Unconstrained => "unconstrained",
            PoolName::Fair => "fair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub master_seed: u64,
    pub n_points: usize,
    pub pool_size: usize,
    pub train_size: usize,
    /// Echo of the parsed configuration.
    pub config: serde_json::Value,
    /// Seed of every labeled stream derived from the master seed.
    pub seed_streams: BTreeMap<String, u64>,
    /// Digests of the membership masks each pool was trained on.
    pub mask_digests: BTreeMap<PoolName, Vec<String>>,
    /// Points whose risk is undefined (all-in or all-out across the pool).
    pub undefined_points: BTreeMap<PoolName, usize>,
    /// Cells that borrowed the global threshold, per pool.
    pub fallback_cells: BTreeMap<PoolName, Vec<SubgroupKey>>,
    /// Fair models whose training gap stayed above `delta`.
    pub fair_gap_unmet: usize,
    /// Rule behind the per-point risks.
    pub risk_rule: RuleVariant,
    /// Thresholds were fitted on half of each pool and evaluated on the other half.
    pub held_out_thresholds: bool,
}

/// Per-point and per-subgroup results for one pool under `meta.risk_rule`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRisks {
    pub point: Vec<Option<f64>>,
    pub subgroup: BTreeMap<SubgroupKey, f64>,
    /// True-positive rate of the attack over the models trained on the point.
    pub tpr: Vec<Option<f64>>,
    /// Mean expected accuracy of the models trained on the point.
    pub train_accuracy: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memorization {
    pub point: Vec<Option<f64>>,
    pub subgroup: BTreeMap<SubgroupKey, f64>,
}

/// One row of the accuracy/fairness table, averaged over the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub pool: PoolName,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// `None` when no model had every cell present in the split.
    pub train_gap: Option<f64>,
    pub test_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerablePoint {
    pub index: usize,
    pub subgroup: SubgroupKey,
    pub risk_fair: f64,
    pub risk_unconstrained: Option<f64>,
    pub memorization_fair: Option<f64>,
    pub memorization_unconstrained: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub meta: ReportMeta,
    pub point_subgroup: Vec<SubgroupKey>,
    pub risks_unconstrained: PoolRisks,
    pub risks_fair: PoolRisks,
    pub cost: PrivacyCost,
    pub memorization: BTreeMap<PoolName, Memorization>,
    /// `attack_accuracy[variant][pool][cell]`: pooled balanced accuracy.
    pub attack_accuracy: BTreeMap<RuleVariant, BTreeMap<PoolName, BTreeMap<SubgroupKey, f64>>>,
    pub accuracy: Vec<AccuracyRow>,
    pub vulnerable_points: Vec<VulnerablePoint>,
}

impl PrivacyReport {
    pub fn risks(&self, pool: PoolName) -> &PoolRisks {
        match pool {
            PoolName::Unconstrained => &self.risks_unconstrained,
            PoolName::Fair => &self.risks_fair,
        }
    }

    pub fn attack_cell(&self, variant: RuleVariant, pool: PoolName, key: SubgroupKey) -> Option<f64> {
        self.attack_accuracy.get(&variant)?.get(&pool)?.get(&key).copied()
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report is serializable");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, AuditError> {
        serde_json::from_str(text).map_err(|e| AuditError::Shape(format!("report: {e}")))
    }
}

/// The `k` points with the highest fair-pool risk; ties go to higher fair
/// memorization, then to the lower index. Undefined-risk points are skipped.
pub fn top_vulnerable(report: &PrivacyReport, k: usize) -> Vec<VulnerablePoint> {
    let fair_mem = report.memorization.get(&PoolName::Fair);
    let unc_mem = report.memorization.get(&PoolName::Unconstrained);
    let mem_at = |m: Option<&Memorization>, j: usize| m.and_then(|m| m.point.get(j).copied().flatten());
    let mut ranked: Vec<VulnerablePoint> = report
        .risks_fair
        .point
        .iter()
        .enumerate()
        .filter_map(|(j, r)| {
            Some(VulnerablePoint {
                index: j,
                subgroup: report.point_subgroup[j],
                risk_fair: (*r)?,
                risk_unconstrained: report.risks_unconstrained.point.get(j).copied().flatten(),
                memorization_fair: mem_at(fair_mem, j),
                memorization_unconstrained: mem_at(unc_mem, j),
            })
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.risk_fair
            .total_cmp(&a.risk_fair)
            .then_with(|| {
                let ma = a.memorization_fair.unwrap_or(f64::NEG_INFINITY);
                let mb = b.memorization_fair.unwrap_or(f64::NEG_INFINITY);
                mb.total_cmp(&ma)
            })
            .then(a.index.cmp(&b.index))
    });
    ranked.truncate(k);
    ranked
}
