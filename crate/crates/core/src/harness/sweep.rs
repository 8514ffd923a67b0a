//! Parameter sweeps and the attack comparison table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiment::{run_experiment, write_file};
use super::{DataSource, ExperimentConfig, HarnessError};
use crate::audit::{PoolName, PrivacyReport, RuleVariant};
use crate::dataset::{Gaussian, SubgroupKey};
use crate::kv::{invalid, KvReader};
use crate::learners::LearnerSpec;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Delta,
    PGroup0,
    PNegG0,
    /// Mean vector of one subgroup's Gaussian.
    Mean(SubgroupKey),
    MaxDepth,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "delta" => Some(Self::Delta),
            "p_group0" => Some(Self::PGroup0),
            "p_neg_g0" => Some(Self::PNegG0),
            "max_depth" => Some(Self::MaxDepth),
            _ => {
                let rest = name.strip_prefix("mean_g")?;
                let (g, y) = rest.split_once("_s")?;
                let y: u8 = y.parse().ok()?;
                (y <= 1).then_some(Self::Mean(SubgroupKey::new(g.parse().ok()?, y)))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Delta => "delta".into(),
            Self::PGroup0 => "p_group0".into(),
            Self::PNegG0 => "p_neg_g0".into(),
            Self::Mean(k) => format!("mean_g{}_s{}", k.g, k.y),
            Self::MaxDepth => "max_depth".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl SweepValue {
    fn label(&self) -> String {
        match self {
            Self::Scalar(v) => v.to_string(),
            Self::Vector(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<SweepValue>,
    pub repetitions: usize,
}

impl SweepSpec {
    /// Keys: `parameter`, `values` (numbers, or number lists for means), `repetitions`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut kv = KvReader::parse(text)?;
        let name: String = kv.require("parameter")?;
        let parameter =
            SweepParameter::parse(&name).ok_or_else(|| invalid("parameter", format!("cannot sweep {name:?}")))?;
        let values = match parameter {
            SweepParameter::Mean(_) => kv
                .require::<Vec<Vec<f64>>>("values")?
                .into_iter()
                .map(SweepValue::Vector)
                .collect(),
            _ => kv.require::<Vec<f64>>("values")?.into_iter().map(SweepValue::Scalar).collect(),
        };
        let repetitions: i64 = kv.take_or("repetitions", 1)?;
        kv.finish()?;
        let spec = Self {
            parameter,
            values,
            repetitions: usize::try_from(repetitions).unwrap_or(0),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.values.is_empty() {
            return Err(HarnessError::Config("sweep needs at least one value".into()));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be at least 1".into()));
        }
        Ok(())
    }

    /// `base` with the swept parameter set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: &SweepValue) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = base.clone();
        let wrong = |what: &str| HarnessError::Config(format!("{} needs {what}", self.parameter.name()));
        match (self.parameter, value) {
            (SweepParameter::Delta, SweepValue::Scalar(v)) => cfg.eg.delta = *v,
            (SweepParameter::MaxDepth, SweepValue::Scalar(v)) => {
                if *v < 0.0 || v.fract() != 0.0 {
                    return Err(wrong("a nonnegative integer"));
                }
                let set = |spec: &mut LearnerSpec| match spec {
                    LearnerSpec::Tree(t) => {
                        t.max_depth = *v as usize;
                        Ok(())
                    }
                    LearnerSpec::Network(_) => Err(wrong("a tree base learner")),
                };
                set(&mut cfg.learner)?;
                set(&mut cfg.eg.learner)?;
            }
            (param, value) => {
                let DataSource::Synthetic(s) = &mut cfg.source else {
                    return Err(wrong("a synthetic data source"));
                };
                match (param, value) {
                    (SweepParameter::PGroup0, SweepValue::Scalar(v)) => s.p_group0 = *v,
                    (SweepParameter::PNegG0, SweepValue::Scalar(v)) => s.p_neg_given_g[0] = *v,
                    (SweepParameter::Mean(key), SweepValue::Vector(mean)) => {
                        let cov = s.gaussians[&key].cov().to_vec();
                        let g = Gaussian::new(mean.clone(), cov).map_err(|e| HarnessError::Config(e.to_string()))?;
                        s.gaussians.insert(key, g);
                    }
                    _ => return Err(wrong("a value of matching shape")),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Master seed of repetition `rep` of value `value_index`.
pub fn sweep_seed(master: u64, value_index: usize, rep: usize) -> u64 {
    seed::derive(seed::derive(master, "sweep", value_index as u64), "rep", rep as u64)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// `reports[value][rep]`; an error marks a failed run.
    pub reports: Vec<Vec<Result<PrivacyReport, String>>>,
    pub summary_csv: String,
}

/// One experiment per (value, repetition). Each run's files go to
/// `out/value_{i}/rep_{r}`; the summary goes to `out/sweep_summary.csv`.
pub fn run_sweep(
    base: &ExperimentConfig,
    spec: &SweepSpec,
    out: Option<&Path>,
    jobs: usize,
) -> Result<SweepOutcome, HarnessError> {
    spec.validate()?;
    let mut reports = Vec::new();
    for (vi, value) in spec.values.iter().enumerate() {
        let mut runs = Vec::new();
        for rep in 0..spec.repetitions {
            let run = spec.apply(base, value).and_then(|mut cfg| {
                cfg.seed = sweep_seed(base.seed, vi, rep);
                let dir: Option<PathBuf> = out.map(|o| o.join(format!("value_{vi}")).join(format!("rep_{rep}")));
                run_experiment(&cfg, dir.as_deref(), jobs)
            });
            runs.push(run.map_err(|e| e.to_string()));
        }
        reports.push(runs);
    }
    let summary_csv = summary(spec, &reports);
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_file(&dir.join("sweep_summary.csv"), &summary_csv, &mut Vec::new())?;
    }
    Ok(SweepOutcome { reports, summary_csv })
}

fn summary(spec: &SweepSpec, reports: &[Vec<Result<PrivacyReport, String>>]) -> String {
    let cells: Vec<SubgroupKey> = reports
        .iter()
        .flatten()
        .filter_map(|r| r.as_ref().ok())
        .flat_map(|r| r.point_subgroup.iter().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec!["parameter".to_string(), "value".into(), "runs".into(), "failed".into()];
    for prefix in ["risk_unc", "risk_fair", "cost", "mem_unc", "mem_fair"] {
        header.extend(cells.iter().map(|k| format!("{prefix}_{k}")));
    }
    header.extend(["train_gap_unc", "train_gap_fair", "test_gap_fair", "gap_unmet", "status"].map(String::from));
    let mut out = header.join(",") + "\n";

    for (value, runs) in spec.values.iter().zip(reports) {
        let ok: Vec<&PrivacyReport> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let errors: Vec<&String> = runs.iter().filter_map(|r| r.as_ref().err()).collect();
        let avg = |f: &dyn Fn(&PrivacyReport) -> Option<f64>| -> String {
            let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
            if vals.is_empty() {
                String::new()
            } else {
                (vals.iter().sum::<f64>() / vals.len() as f64).to_string()
            }
        };
        let mut row = vec![
            spec.parameter.name(),
            value.label(),
            ok.len().to_string(),
            errors.len().to_string(),
        ];
        for k in &cells {
            row.push(avg(&|r| r.risks_unconstrained.subgroup.get(k).copied()));
        }
        for k in &cells {
            row.push(avg(&|r| r.risks_fair.subgroup.get(k).copied()));
        }
        for k in &cells {
            row.push(avg(&|r| r.cost.cell.get(k).copied()));
        }
        for pool in PoolName::ALL {
            for k in &cells {
                row.push(avg(&|r| r.memorization.get(&pool)?.subgroup.get(k).copied()));
            }
        }
        let acc = |pool: PoolName| move |r: &PrivacyReport| r.accuracy.iter().find(|a| a.pool == pool).cloned();
        row.push(avg(&|r| acc(PoolName::Unconstrained)(r)?.train_gap));
        row.push(avg(&|r| acc(PoolName::Fair)(r)?.train_gap));
        row.push(avg(&|r| acc(PoolName::Fair)(r)?.test_gap));
        row.push(avg(&|r| Some(r.meta.fair_gap_unmet as f64)));
        let status = if errors.is_empty() {
            "ok".to_string()
        } else {
            format!("failed: {}", errors[0].replace([',', '\n'], ";"))
        };
        row.push(status);
        out += &(row.join(",") + "\n");
    }
    out
}

/// Attack table: one row per (pool, rule variant), one column per subgroup.
pub(crate) fn attack_table(report: &PrivacyReport) -> Result<String, HarnessError> {
    for variant in [RuleVariant::Single, RuleVariant::PerSubgroup] {
        if !report.attack_accuracy.contains_key(&variant) {
            return Err(HarnessError::Stage {
                stage: "compare",
                message: format!("report has no {} attack results", variant.name()),
            });
        }
    }
    let cells: Vec<SubgroupKey> = report
        .point_subgroup
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = String::from("pool,variant");
    for k in &cells {
        out += &format!(",{k}");
    }
    out.push('\n');
    let empty = BTreeMap::new();
    for pool in PoolName::ALL {
        for variant in [RuleVariant::Single, RuleVariant::PerSubgroup] {
            let row = report.attack_accuracy[&variant].get(&pool).unwrap_or(&empty);
            out += &format!("{},{}", pool.name(), variant.name());
            for k in &cells {
                out += &format!(",{}", row.get(k).map(|v| v.to_string()).unwrap_or_default());
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Write the attack table of a report to `out`.
pub fn compare_attacks(report: &PrivacyReport, out: &Path) -> Result<String, HarnessError> {
    let table = attack_table(report)?;
    write_file(out, &table, &mut Vec::new())?;
    Ok(table)
}
