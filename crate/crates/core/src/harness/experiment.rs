//! One full experiment: masks, both pools, profiles, rules, report, files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stage, sweep::attack_table, ExperimentConfig, HarnessError};
use crate::audit::{
    cell_means, evaluate_attack, fit_rule_on, memorization_all, privacy_cost, top_vulnerable, AccuracyRow,
    AttackEvaluation, LossProfile, Memorization, PoolName, PoolRisks, PrivacyReport, ReportMeta, RuleVariant,
};
use crate::dataset::{draw_masks, Dataset, MembershipMask, SubgroupKey};
use crate::fair_reduction::{eg_fit, gap_from_errors, ErrorMode, RandomizedClassifier};
use crate::learners::{self, cross_entropy, BaseModel, SampleWeights};
use crate::seed;

const TOP_VULNERABLE: usize = 20;

#[derive(Debug, Clone)]
pub struct PoolOutputs {
    pub classifiers: Vec<RandomizedClassifier>,
    /// Whether each model met its fairness bound (always true for the unconstrained pool).
    pub gap_met: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct TrainedPools {
    pub masks: Vec<MembershipMask>,
    pub unconstrained: PoolOutputs,
    pub fair: PoolOutputs,
}

/// Run the experiment and, if `out_dir` is given, write every output file.
/// On failure, files written so far are removed.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, jobs: usize) -> Result<PrivacyReport, HarnessError> {
    cfg.validate()?;
    let data = cfg.load_data()?;
    let pools = with_jobs(jobs, || train_pools(cfg, &data))?;
    let report = run_experiment_with(cfg, &data, &pools)?;
    if let Some(dir) = out_dir {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

pub(crate) fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Train both pools on identical masks.
pub fn train_pools(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrainedPools, HarnessError> {
    let train_size = cfg.train_size(data.len());
    let masks = draw_masks(data, cfg.pool_size, train_size, seed::derive(cfg.seed, "masks", 0))
        .map_err(stage("masks"))?;
    let data_digest = seed::digest_hex(serde_json::to_string(data.points()).unwrap_or_default().as_bytes());
    let cache = cfg.model_cache.as_deref();

    let unconstrained = masks
        .par_iter()
        .enumerate()
        .map(|(i, mask)| {
            let train_seed = seed::derive(cfg.seed, "unconstrained", i as u64);
            let key = cache_key("unconstrained", &cfg.learner, train_seed, mask, &data_digest);
            if let Some(hit) = cache.and_then(|dir| load_cached(dir, &key)) {
                return Ok(hit);
            }
            let view = data.view(mask.members());
            let model = learners::train(&view, &SampleWeights::uniform(view.len()), &cfg.learner, train_seed)
                .map_err(stage("unconstrained training"))?;
            let entry = CachedClassifier {
                members: vec![(model, 1.0)],
                gap_met: true,
            };
            if let Some(dir) = cache {
                store_cached(dir, &key, &entry);
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let fair = masks
        .par_iter()
        .enumerate()
        .map(|(i, mask)| {
            let train_seed = seed::derive(cfg.seed, "fair", i as u64);
            let key = cache_key("fair", &cfg.eg, train_seed, mask, &data_digest);
            if let Some(hit) = cache.and_then(|dir| load_cached(dir, &key)) {
                return Ok(hit);
            }
            let view = data.view(mask.members());
            let fit = eg_fit(&view, &cfg.eg, train_seed).map_err(stage("fair training"))?;
            let entry = CachedClassifier {
                members: fit.classifier.members().to_vec(),
                gap_met: fit.gap_met,
            };
            if let Some(dir) = cache {
                store_cached(dir, &key, &entry);
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let finish = |entries: Vec<CachedClassifier>, name: &'static str| -> Result<PoolOutputs, HarnessError> {
        let gap_met = entries.iter().map(|e| e.gap_met).collect();
        let classifiers = entries
            .into_iter()
            .map(|e| RandomizedClassifier::new(e.members))
            .collect::<Result<Vec<_>, _>>()
            .map_err(stage(name))?;
        Ok(PoolOutputs { classifiers, gap_met })
    };
    Ok(TrainedPools {
        unconstrained: finish(unconstrained, "unconstrained training")?,
        fair: finish(fair, "fair training")?,
        masks,
    })
}

#[derive(Serialize, Deserialize)]
struct CachedClassifier {
    members: Vec<(BaseModel, f64)>,
    gap_met: bool,
}

fn cache_key<S: Serialize>(kind: &str, spec: &S, train_seed: u64, mask: &MembershipMask, data_digest: &str) -> String {
    let spec = serde_json::to_string(spec).unwrap_or_default();
    let text = format!("{kind}\n{spec}\n{train_seed}\n{}\n{data_digest}", mask.digest());
    format!("{kind}-{}", &seed::digest_hex(text.as_bytes())[..32])
}

fn load_cached(dir: &Path, key: &str) -> Option<CachedClassifier> {
    let text = fs::read_to_string(dir.join(format!("{key}.json"))).ok()?;
    serde_json::from_str(&text).ok()
}

/// Best effort: a cache that cannot be written only costs time.
fn store_cached(dir: &Path, key: &str, entry: &CachedClassifier) {
    if fs::create_dir_all(dir).is_err() {
        return;
    }
    let Ok(text) = serde_json::to_string(entry) else { return };
    let tmp = dir.join(format!("{key}.json.tmp"));
    if fs::write(&tmp, text).is_ok() {
        let _ = fs::rename(&tmp, dir.join(format!("{key}.json")));
    }
}

/// Losses, expected errors and mode errors of one classifier on every point.
struct ModelEval {
    loss: Vec<f64>,
    expected_error: Vec<f64>,
    mode_error: Vec<f64>,
}

fn evaluate_model(clf: &RandomizedClassifier, data: &Dataset, mode: ErrorMode) -> Result<ModelEval, HarnessError> {
    let n = data.len();
    let mut out = ModelEval {
        loss: vec![0.0; n],
        expected_error: vec![0.0; n],
        mode_error: vec![0.0; n],
    };
    for (model, w) in clf.members() {
        for (j, z) in data.points().iter().enumerate() {
            let p = model.predict_prob(&z.x).map_err(stage("evaluation"))?;
            out.loss[j] += w * cross_entropy(p, z.y);
            out.expected_error[j] += w * ErrorMode::Expected.error(p, z.y);
            out.mode_error[j] += w * mode.error(p, z.y);
        }
    }
    Ok(out)
}

struct PoolAudit {
    risks: PoolRisks,
    memorization: Memorization,
    attack: BTreeMap<RuleVariant, BTreeMap<SubgroupKey, f64>>,
    accuracy: AccuracyRow,
    undefined: usize,
    fallback: Vec<SubgroupKey>,
}

fn audit_pool(
    cfg: &ExperimentConfig,
    data: &Dataset,
    name: PoolName,
    pool: &PoolOutputs,
    masks: &[MembershipMask],
    risk_rule: RuleVariant,
) -> Result<PoolAudit, HarnessError> {
    let mode = cfg.eg.error_mode();
    let evals = pool
        .classifiers
        .par_iter()
        .map(|clf| evaluate_model(clf, data, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let keys = data.keys();
    let ids = (0..evals.len()).map(|i| format!("{}-{i}", name.name())).collect();
    let losses = evals.iter().map(|e| e.loss.clone()).collect();
    let profile = LossProfile::from_parts(ids, losses, masks.to_vec(), keys.clone())?;

    // Optionally fit on the first half of the pool and evaluate on the second.
    let all: Vec<usize> = (0..profile.n_models()).collect();
    let (fit_models, eval_profile) = if cfg.held_out_thresholds {
        let half = profile.n_models() / 2;
        (all[..half].to_vec(), profile.select_models(&all[half..]))
    } else {
        (all.clone(), profile.clone())
    };

    let mut attack = BTreeMap::new();
    let mut risk_eval: Option<AttackEvaluation> = None;
    let mut fallback = Vec::new();
    for &variant in &cfg.attacks {
        let fitted = fit_rule_on(&profile, variant, &fit_models)?;
        let eval = evaluate_attack(&eval_profile, &fitted.rule)?;
        attack.insert(variant, eval.cell_accuracy.clone());
        if variant == risk_rule {
            fallback = fitted.fallback_cells;
            risk_eval = Some(eval);
        }
    }
    let eval = risk_eval.expect("risk rule is one of the configured attacks");

    let mem_point = memorization_all(&profile);
    let memorization = Memorization {
        subgroup: cell_means(&mem_point, &keys),
        point: mem_point,
    };

    // Mean expected accuracy of the in-models on each point.
    let train_accuracy = (0..data.len())
        .map(|j| {
            let accs: Vec<f64> = (0..evals.len())
                .filter(|&m| masks[m].contains(j))
                .map(|m| 1.0 - evals[m].expected_error[j])
                .collect();
            (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
        })
        .collect();

    let mut acc = [Vec::new(), Vec::new()];
    let mut gaps = [Vec::new(), Vec::new()];
    for (m, e) in evals.iter().enumerate() {
        for (side, idx) in [masks[m].members(), masks[m].non_members()].into_iter().enumerate() {
            let err: f64 = idx.iter().map(|&j| e.expected_error[j]).sum::<f64>() / idx.len() as f64;
            acc[side].push(1.0 - err);
            let mode_err: Vec<f64> = idx.iter().map(|&j| e.mode_error[j]).collect();
            let cell_keys: Vec<SubgroupKey> = idx.iter().map(|&j| keys[j]).collect();
            if let Ok(g) = gap_from_errors(&mode_err, &cell_keys) {
                gaps[side].push(g);
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let accuracy = AccuracyRow {
        pool: name,
        train_accuracy: mean(&acc[0]).unwrap_or(0.0),
        test_accuracy: mean(&acc[1]).unwrap_or(0.0),
        train_gap: mean(&gaps[0]),
        test_gap: mean(&gaps[1]),
    };

    Ok(PoolAudit {
        undefined: eval.undefined_points,
        risks: PoolRisks {
            point: eval.point_risk,
            subgroup: eval.cell_risk,
            tpr: eval.point_tpr,
            train_accuracy,
        },
        memorization,
        attack,
        accuracy,
        fallback,
    })
}

/// Audit already-trained pools and assemble the report.
pub fn run_experiment_with(cfg: &ExperimentConfig, data: &Dataset, pools: &TrainedPools) -> Result<PrivacyReport, HarnessError> {
    let risk_rule = if cfg.attacks.contains(&RuleVariant::PerSubgroup) {
        RuleVariant::PerSubgroup
    } else {
        RuleVariant::Single
    };
    let unc = audit_pool(cfg, data, PoolName::Unconstrained, &pools.unconstrained, &pools.masks, risk_rule)?;
    let fair = audit_pool(cfg, data, PoolName::Fair, &pools.fair, &pools.masks, risk_rule)?;
    let keys = data.keys();
    let cost = privacy_cost(&fair.risks.point, &unc.risks.point, &keys)?;

    let mut attack_accuracy: BTreeMap<RuleVariant, BTreeMap<PoolName, BTreeMap<SubgroupKey, f64>>> = BTreeMap::new();
    for (pool, audit) in [(PoolName::Unconstrained, &unc), (PoolName::Fair, &fair)] {
        for (variant, cells) in &audit.attack {
            attack_accuracy.entry(*variant).or_default().insert(pool, cells.clone());
        }
    }
    let digests: Vec<String> = pools.masks.iter().map(MembershipMask::digest).collect();
    let mut seed_streams = BTreeMap::from([
        ("masks".to_string(), seed::derive(cfg.seed, "masks", 0)),
        ("data".to_string(), seed::derive(cfg.seed, "data", 0)),
    ]);
    for i in 0..cfg.pool_size as u64 {
        seed_streams.insert(format!("unconstrained/{i:03}"), seed::derive(cfg.seed, "unconstrained", i));
        seed_streams.insert(format!("fair/{i:03}"), seed::derive(cfg.seed, "fair", i));
    }
    let meta = ReportMeta {
        master_seed: cfg.seed,
        n_points: data.len(),
        pool_size: cfg.pool_size,
        train_size: cfg.train_size(data.len()),
        config: cfg.echo(),
        seed_streams,
        mask_digests: BTreeMap::from([(PoolName::Unconstrained, digests.clone()), (PoolName::Fair, digests)]),
        undefined_points: BTreeMap::from([(PoolName::Unconstrained, unc.undefined), (PoolName::Fair, fair.undefined)]),
        fallback_cells: BTreeMap::from([(PoolName::Unconstrained, unc.fallback), (PoolName::Fair, fair.fallback)]),
        fair_gap_unmet: pools.fair.gap_met.iter().filter(|m| !**m).count(),
        risk_rule,
        held_out_thresholds: cfg.held_out_thresholds,
    };
    let mut report = PrivacyReport {
        meta,
        point_subgroup: keys,
        risks_unconstrained: unc.risks,
        risks_fair: fair.risks,
        cost,
        memorization: BTreeMap::from([(PoolName::Unconstrained, unc.memorization), (PoolName::Fair, fair.memorization)]),
        attack_accuracy,
        accuracy: vec![unc.accuracy, fair.accuracy],
        vulnerable_points: Vec::new(),
    };
    report.vulnerable_points = top_vulnerable(&report, TOP_VULNERABLE);
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn points_csv(report: &PrivacyReport, pool: PoolName) -> String {
    let risks = report.risks(pool);
    let mem = report.memorization.get(&pool);
    let mut out = String::from("index,g,y,risk,memorization,tpr\n");
    for (j, key) in report.point_subgroup.iter().enumerate() {
        let m = mem.and_then(|m| m.point[j]);
        out.push_str(&format!(
            "{j},{},{},{},{},{}\n",
            key.g,
            key.y,
            fmt_opt(risks.point[j]),
            fmt_opt(m),
            fmt_opt(risks.tpr[j])
        ));
    }
    out
}

pub(crate) fn accuracy_csv(report: &PrivacyReport) -> String {
    let mut out = String::from("pool,train_accuracy,test_accuracy,train_gap,test_gap\n");
    for row in &report.accuracy {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.pool.name(),
            row.train_accuracy,
            row.test_accuracy,
            fmt_opt(row.train_gap),
            fmt_opt(row.test_gap)
        ));
    }
    out
}

pub(crate) fn write_file(path: &Path, text: &str, written: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Write `report.json` and the CSV tables into `dir`.
pub(crate) fn write_outputs(report: &PrivacyReport, dir: &Path) -> Result<(), HarnessError> {
    let mut written = Vec::new();
    let result = (|| {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_file(&dir.join("report.json"), &report.to_json(), &mut written)?;
        write_file(&dir.join("table_accuracy.csv"), &accuracy_csv(report), &mut written)?;
        if let Ok(table) = attack_table(report) {
            write_file(&dir.join("table_attack.csv"), &table, &mut written)?;
        }
        write_file(&dir.join("points_fair.csv"), &points_csv(report, PoolName::Fair), &mut written)?;
        write_file(&dir.join("points_unc.csv"), &points_csv(report, PoolName::Unconstrained), &mut written)?;
        Ok(())
    })();
    if result.is_err() {
        for path in written {
            let _ = fs::remove_file(path);
        }
    }
    result
}
