//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The benchmark criteria share one set of repetitions of the standard
//! experiment. Trained models are cached under the cargo target tmpdir, so
//! only the first run pays for training (a few hours on one core).
//! `FAIRLEAK_ACCEPTANCE_REPS` overrides the repetition count. Failed criteria
//! only fail the test target when `FAIRLEAK_ACCEPTANCE_STRICT` is set.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use fairleak::audit::{best_threshold, privacy_cost, PoolName, RuleVariant};
use fairleak::dataset::{generate_synthetic, load_csv, write_csv, CsvSchema, DataPoint, Dataset, SyntheticConfig};
use fairleak::fair_reduction::{fairness_gap, ErrorMode, RandomizedClassifier};
use fairleak::harness::{run_experiment, DataSource, ExperimentConfig};
use fairleak::learners::{train_tree, Network, SampleWeights, TreeOptions};
use fairleak::{seed, PrivacyReport, SubgroupKey};

const MASTER_SEED: u64 = 2024;
const DEFAULT_REPS: usize = 20;

const G0_NEG: SubgroupKey = SubgroupKey { g: 0, y: 0 };
const G1_NEG: SubgroupKey = SubgroupKey { g: 1, y: 0 };
const G0_POS: SubgroupKey = SubgroupKey { g: 0, y: 1 };
const G1_POS: SubgroupKey = SubgroupKey { g: 1, y: 1 };

// Pinned targets and tolerances.
const UNC_ACC: (f64, f64) = (0.859, 0.856);
const UNC_ACC_TOL: f64 = 0.02;
const FAIR_ACC: (f64, f64) = (0.830, 0.818);
const FAIR_ACC_TOL: f64 = 0.025;
const FAIR_TRAIN_GAP_MAX: f64 = 0.002;

const ATTACK_TOL: f64 = 0.03;
const UNC_SINGLE_G0_NEG: f64 = 0.529;
const UNC_MULTI_G0_NEG: f64 = 0.618;
const FAIR_MULTI_G0_NEG: f64 = 0.692;

const COSTS: [(SubgroupKey, f64); 4] = [(G0_NEG, 0.069), (G1_NEG, -0.020), (G0_POS, -0.015), (G1_POS, -0.020)];
const COST_TOL: f64 = 0.03;
const COST_LARGEST_MIN_FRACTION: f64 = 18.0 / 20.0;

const MEM_RATIO_MIN: f64 = 1.5;
const MEM_FAIR: f64 = 0.59;
const MEM_UNC: f64 = 0.29;
const MEM_TOL: f64 = 0.15;

const SWEEP: [(f64, f64); 3] = [(0.1, 0.633), (0.01, 0.656), (0.001, 0.660)];
const SWEEP_PLATEAU_DELTA: f64 = 0.0001;
const SWEEP_TOL: f64 = 0.03;
/// Allowed dip between consecutive deltas ("non-decreasing within noise").
const SWEEP_NOISE: f64 = 0.01;

const TOP_K: usize = 20;
const TOP_G0_NEG_MIN: f64 = 0.70;
const MAX_RISK_MIN: f64 = 0.90;

const SMALL_SUBGROUP_MASS: f64 = 0.05;
const REAL_RISK_SLACK: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-models")
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn standard(delta: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::standard(delta, seed);
    cfg.model_cache = Some(cache_dir());
    cfg
}

fn run(cfg: &ExperimentConfig, label: &str) -> PrivacyReport {
    let start = Instant::now();
    let report = run_experiment(cfg, None, jobs()).unwrap_or_else(|e| panic!("{label}: {e}"));
    eprintln!("  {label} done in {:.0?}", start.elapsed());
    report
}

fn rep_seed(r: usize) -> u64 {
    seed::derive(MASTER_SEED, "rep", r as u64)
}

// ---------------------------------------------------------------- criterion 1

fn table_one(reps: &[PrivacyReport]) -> Outcome {
    let row = |r: &PrivacyReport, pool| r.accuracy.iter().find(|a| a.pool == pool).cloned().expect("row");
    let avg = |pool, f: &dyn Fn(&fairleak::audit::AccuracyRow) -> f64| mean(reps.iter().map(|r| f(&row(r, pool))));
    let unc_train = avg(PoolName::Unconstrained, &|a| a.train_accuracy);
    let unc_test = avg(PoolName::Unconstrained, &|a| a.test_accuracy);
    let fair_train = avg(PoolName::Fair, &|a| a.train_accuracy);
    let fair_test = avg(PoolName::Fair, &|a| a.test_accuracy);
    let fair_gap = avg(PoolName::Fair, &|a| a.train_gap.unwrap_or(f64::INFINITY));
    let unmet: usize = reps.iter().map(|r| r.meta.fair_gap_unmet).sum();
    let pass = within(unc_train, UNC_ACC.0, UNC_ACC_TOL)
        && within(unc_test, UNC_ACC.1, UNC_ACC_TOL)
        && fair_gap <= FAIR_TRAIN_GAP_MAX
        && within(fair_train, FAIR_ACC.0, FAIR_ACC_TOL)
        && within(fair_test, FAIR_ACC.1, FAIR_ACC_TOL);
    outcome(
        pass,
        format!(
            "unc train/test {}/{} (target {}/{} ±{}), fair train/test {}/{} (target {}/{} ±{}), fair train gap {:.4} (max {}), {} of {} fair models flagged gap_unmet",
            pct(unc_train), pct(unc_test), pct(UNC_ACC.0), pct(UNC_ACC.1), pct(UNC_ACC_TOL),
            pct(fair_train), pct(fair_test), pct(FAIR_ACC.0), pct(FAIR_ACC.1), pct(FAIR_ACC_TOL),
            fair_gap, FAIR_TRAIN_GAP_MAX, unmet, reps.len() * reps[0].meta.pool_size,
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn table_four(reps: &[PrivacyReport]) -> Outcome {
    let cell = |v, p, k| mean(reps.iter().map(|r| r.attack_cell(v, p, k).expect("attack cell")));
    let unc_single = cell(RuleVariant::Single, PoolName::Unconstrained, G0_NEG);
    let unc_multi = cell(RuleVariant::PerSubgroup, PoolName::Unconstrained, G0_NEG);
    let fair_multi = cell(RuleVariant::PerSubgroup, PoolName::Fair, G0_NEG);
    let mut dominance_violations = 0;
    for r in reps {
        for pool in PoolName::ALL {
            for k in [G0_NEG, G1_NEG, G0_POS, G1_POS] {
                let s = r.attack_cell(RuleVariant::Single, pool, k).unwrap();
                let m = r.attack_cell(RuleVariant::PerSubgroup, pool, k).unwrap();
                if m < s - 1e-12 {
                    dominance_violations += 1;
                }
            }
        }
    }
    let pass = within(unc_single, UNC_SINGLE_G0_NEG, ATTACK_TOL)
        && within(unc_multi, UNC_MULTI_G0_NEG, ATTACK_TOL)
        && within(fair_multi, FAIR_MULTI_G0_NEG, ATTACK_TOL)
        && dominance_violations == 0;
    let mut table = String::new();
    for pool in PoolName::ALL {
        for v in [RuleVariant::Single, RuleVariant::PerSubgroup] {
            let cells: Vec<String> = [G0_NEG, G1_NEG, G0_POS, G1_POS].iter().map(|&k| pct(cell(v, pool, k))).collect();
            table += &format!(" [{} {}: {}]", pool.name(), v.name(), cells.join(" "));
        }
    }
    outcome(
        pass,
        format!(
            "G0- unc single {} (target {}), unc multiple {} (target {}), fair multiple {} (target {}), tol ±{}; multiple<single in {} of {} cells;{}",
            pct(unc_single), pct(UNC_SINGLE_G0_NEG), pct(unc_multi), pct(UNC_MULTI_G0_NEG),
            pct(fair_multi), pct(FAIR_MULTI_G0_NEG), pct(ATTACK_TOL), dominance_violations, 8 * reps.len(), table,
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn cost_signature(reps: &[PrivacyReport]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, target) in COSTS {
        let c = mean(reps.iter().map(|r| r.cost.cell[&k]));
        pass &= within(c, target, COST_TOL);
        parts.push(format!("{k} {:+.2}pp (target {:+.1})", 100.0 * c, 100.0 * target));
    }
    let largest = reps
        .iter()
        .filter(|r| {
            let g = r.cost.cell[&G0_NEG];
            g > 0.0 && r.cost.cell.iter().all(|(k, &c)| *k == G0_NEG || c < g)
        })
        .count();
    let needed = (COST_LARGEST_MIN_FRACTION * reps.len() as f64).ceil() as usize;
    pass &= largest >= needed;
    outcome(
        pass,
        format!(
            "mean cell cost {} (tol ±{}pp); G0- largest and positive in {} of {} repetitions (need {})",
            parts.join(", "),
            100.0 * COST_TOL,
            largest,
            reps.len(),
            needed
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn memorization_doubling(reps: &[PrivacyReport]) -> Outcome {
    let m = |pool| mean(reps.iter().map(|r| r.memorization[&pool].subgroup[&G0_NEG]));
    let (fair, unc) = (m(PoolName::Fair), m(PoolName::Unconstrained));
    let pass = fair >= MEM_RATIO_MIN * unc && within(fair, MEM_FAIR, MEM_TOL) && within(unc, MEM_UNC, MEM_TOL);
    outcome(
        pass,
        format!(
            "G0- memorization fair {fair:.3} vs unconstrained {unc:.3} (ratio {:.2}, min {MEM_RATIO_MIN}); targets {MEM_FAIR}/{MEM_UNC} ±{MEM_TOL}",
            fair / unc
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn delta_sweep(base: &PrivacyReport) -> Outcome {
    let mut risks = Vec::new();
    let mut pass = true;
    let mut parts = Vec::new();
    for (delta, target) in SWEEP {
        let risk = if delta == 0.001 {
            base.risks_fair.subgroup[&G0_NEG]
        } else {
            run(&standard(delta, rep_seed(0)), &format!("delta {delta}")).risks_fair.subgroup[&G0_NEG]
        };
        pass &= within(risk, target, SWEEP_TOL);
        parts.push(format!("δ={delta}: {} (target {})", pct(risk), pct(target)));
        risks.push(risk);
    }
    let monotone = risks.windows(2).all(|w| w[1] >= w[0] - SWEEP_NOISE);
    pass &= monotone;
    let plateau = run(&standard(SWEEP_PLATEAU_DELTA, rep_seed(0)), "delta 0.0001").risks_fair.subgroup[&G0_NEG];
    outcome(
        pass,
        format!(
            "G0- fair risk {} (tol ±{}); non-decreasing within {}: {monotone}; δ=0.0001: {} (unconstrained {})",
            parts.join(", "),
            pct(SWEEP_TOL),
            pct(SWEEP_NOISE),
            pct(plateau),
            pct(base.risks_unconstrained.subgroup[&G0_NEG]),
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn vulnerable_points(reps: &[PrivacyReport]) -> Outcome {
    let fractions: Vec<f64> = reps
        .iter()
        .map(|r| {
            let top = &r.vulnerable_points[..TOP_K.min(r.vulnerable_points.len())];
            top.iter().filter(|v| v.subgroup == G0_NEG).count() as f64 / top.len() as f64
        })
        .collect();
    let max_risk = reps
        .iter()
        .flat_map(|r| r.vulnerable_points.first().map(|v| v.risk_fair))
        .fold(0.0, f64::max);
    let frac = mean(fractions.iter().copied());
    let pass = frac >= TOP_G0_NEG_MIN && max_risk >= MAX_RISK_MIN;
    outcome(
        pass,
        format!(
            "top-{TOP_K} fair-risk points from G0-: {} on average (min {}); max individual fair risk {} (min {})",
            pct(frac),
            pct(TOP_G0_NEG_MIN),
            pct(max_risk),
            pct(MAX_RISK_MIN)
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn threshold_oracle(members: &[f64], others: &[f64]) -> (f64, f64) {
    let mut values: Vec<f64> = members.iter().chain(others).copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut candidates = vec![values[0] - 1.0];
    candidates.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(values[values.len() - 1] + 1.0);
    let (m, k) = (members.len(), others.len());
    let mut best = (f64::NAN, 0usize);
    for t in candidates {
        let tp = members.iter().filter(|&&l| l < t).count();
        let tn = others.iter().filter(|&&l| l >= t).count();
        let score = tp * k + tn * m;
        if score > best.1 || best.0.is_nan() {
            best = (t, score);
        }
    }
    (best.0, best.1 as f64 / (2 * m * k) as f64)
}

/// Error rates per cell by direct enumeration, then every same-label pair.
fn gap_oracle(clf: &RandomizedClassifier, data: &Dataset) -> f64 {
    let mut cells: BTreeMap<SubgroupKey, Vec<f64>> = BTreeMap::new();
    for p in data.points() {
        let err: f64 = clf
            .members()
            .iter()
            .map(|(m, w)| w * (m.predict_prob(&p.x).unwrap() - p.y as f64).abs())
            .sum();
        cells.entry(p.key()).or_default().push(err);
    }
    let rates: Vec<(SubgroupKey, f64)> = cells.iter().map(|(k, v)| (*k, mean(v.iter().copied()))).collect();
    let mut gap: f64 = 0.0;
    for (a, ra) in &rates {
        for (b, rb) in &rates {
            if a.y == b.y {
                gap = gap.max((ra - rb).abs());
            }
        }
    }
    gap
}

fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(
        "n = 240\npool_size = 6\nbase = \"tree\"\nmax_depth = 6\ndelta = 0.02\neg_iters = 8",
        std::path::Path::new("."),
    )
    .unwrap();
    cfg.seed = seed;
    cfg
}

fn property_suite() -> Outcome {
    let mut rng = seed::rng(seed::derive(MASTER_SEED, "properties", 0));
    let mut failures = Vec::new();

    // best_threshold vs exhaustive search, balanced accuracy >= 0.5
    let mut below_half = 0;
    for case in 0..2000 {
        let m = rng.gen_range(1..=50);
        let k = rng.gen_range(1..=50);
        let coarse = case % 2 == 0;
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            if coarse {
                rng.gen_range(0..12) as f64 / 4.0
            } else {
                rng.gen_range(0.0..5.0)
            }
        };
        let members: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        let others: Vec<f64> = (0..k).map(|_| draw(&mut rng)).collect();
        let (t, acc) = best_threshold(&members, &others).unwrap();
        let (t_ref, acc_ref) = threshold_oracle(&members, &others);
        if (acc - acc_ref).abs() > 1e-12 || (t - t_ref).abs() > 1e-12 {
            failures.push(format!("threshold case {case}: ({t}, {acc}) vs ({t_ref}, {acc_ref})"));
            break;
        }
        if acc < 0.5 {
            below_half += 1;
        }
    }
    if below_half > 0 {
        failures.push(format!("{below_half} threshold cases below 0.5"));
    }

    // fairness_gap vs enumeration on small datasets with random mixtures
    for case in 0..200 {
        let n = rng.gen_range(8..=50);
        let mut points: Vec<DataPoint> = (0..4).map(|c| DataPoint::new(vec![rng.gen(), rng.gen()], c / 2, (c % 2) as u8)).collect();
        points.extend((4..n).map(|_| DataPoint::new(vec![rng.gen(), rng.gen()], rng.gen_range(0..2), rng.gen_range(0..2))));
        let data = Dataset::new(points).unwrap();
        let members: Vec<_> = (0..rng.gen_range(1..4))
            .map(|_| {
                let w = SampleWeights::new((0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
                let model = train_tree(&data.full_view(), &w, &TreeOptions::with_depth(rng.gen_range(0..4)), 0).unwrap();
                (model, rng.gen_range(0.1..1.0))
            })
            .collect();
        let clf = RandomizedClassifier::new(members).unwrap();
        if (clf.weight_sum() - 1.0).abs() > 1e-12 {
            failures.push(format!("mixture weights sum to {}", clf.weight_sum()));
        }
        let gap = fairness_gap(&clf, &data.full_view(), ErrorMode::Expected).unwrap();
        let gap_ref = gap_oracle(&clf, &data);
        if (gap - gap_ref).abs() > 1e-12 {
            failures.push(format!("gap case {case}: {gap} vs {gap_ref}"));
            break;
        }
    }

    // analytic gradient vs central differences
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let mut net = Network::init(2, &[32, 16, 8], &mut rng);
        for v in net.params_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
        let xs: Vec<Vec<f64>> = (0..16).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let ys: Vec<u8> = (0..16).map(|_| rng.gen_range(0..2)).collect();
        let ws: Vec<f64> = (0..16).map(|_| rng.gen_range(0.1..2.0)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let (_, grad) = net.loss_and_gradient(&refs, &ys, &ws);
        let h = 1e-6;
        for j in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[j] += h;
            let mut minus = net.clone();
            minus.params_mut()[j] -= h;
            let fd = (plus.loss_and_gradient(&refs, &ys, &ws).0 - minus.loss_and_gradient(&refs, &ys, &ws).0) / (2.0 * h);
            worst = worst.max((grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-4));
        }
    }
    if worst >= 1e-4 {
        failures.push(format!("gradient relative error {worst:.2e}"));
    }

    // privacy-cost antisymmetry
    let cells: Vec<SubgroupKey> = (0..200).map(|j| SubgroupKey::new((j % 2) as u32, ((j / 2) % 2) as u8)).collect();
    let a: Vec<Option<f64>> = (0..200).map(|_| rng.gen_bool(0.9).then(|| rng.gen())).collect();
    let b: Vec<Option<f64>> = (0..200).map(|_| rng.gen_bool(0.9).then(|| rng.gen())).collect();
    let ab = privacy_cost(&a, &b, &cells).unwrap();
    let ba = privacy_cost(&b, &a, &cells).unwrap();
    let point_ok = ab.point.iter().zip(&ba.point).all(|(x, y)| match (x, y) {
        (Some(x), Some(y)) => *x == -*y,
        (None, None) => true,
        _ => false,
    });
    let cell_ok = ab.cell.iter().all(|(k, v)| (v + ba.cell[k]).abs() < 1e-15);
    if !(point_ok && cell_ok) {
        failures.push("privacy cost is not antisymmetric".into());
    }

    // full-run determinism across thread counts
    let cfg = small_config(seed::derive(MASTER_SEED, "determinism", 0));
    let one = run_experiment(&cfg, None, 1).unwrap().to_json();
    let eight = run_experiment(&cfg, None, 8).unwrap().to_json();
    if one != eight {
        failures.push("reports differ between --jobs 1 and --jobs 8".into());
    }

    let pass = failures.is_empty();
    outcome(
        pass,
        if pass {
            format!(
                "threshold oracle (2000 lists), gap oracle (200 datasets), weight normalization, gradient max rel err {worst:.1e}, cost antisymmetry, jobs 1 vs 8 byte-identical"
            )
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------- criterion 8

fn small_subgroup_csv() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-csv");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("small_subgroup.csv");
    // group 0 is 8% of the data and its negatives about 3%
    let mut synth = SyntheticConfig::standard();
    synth.n = 2000;
    synth.p_group0 = 0.08;
    synth.p_neg_given_g = [0.4, 0.5];
    let data = generate_synthetic(&synth, seed::derive(MASTER_SEED, "csv", 0)).unwrap();
    write_csv(&data, &path).unwrap();

    let schema = CsvSchema::for_written(2);
    let loaded = load_csv(&path, &schema).unwrap();
    let counts = fairleak::dataset::subgroup_partition(&loaded);
    let (small, small_n) = counts
        .iter()
        .map(|(k, v)| (*k, v.len()))
        .min_by_key(|(_, n)| *n)
        .unwrap();
    let mass = small_n as f64 / loaded.len() as f64;

    let mut cfg = ExperimentConfig::standard(0.01, seed::derive(MASTER_SEED, "csv", 1));
    cfg.source = DataSource::Csv { path, schema };
    cfg.model_cache = Some(cache_dir());
    let report = run(&cfg, "small-subgroup CSV");

    let mut pass = mass < SMALL_SUBGROUP_MASS;
    let mut details = vec![format!("smallest subgroup {small} at {} of the data", pct(mass))];
    for pool in PoolName::ALL {
        let s = report.attack_cell(RuleVariant::Single, pool, small).unwrap();
        let m = report.attack_cell(RuleVariant::PerSubgroup, pool, small).unwrap();
        pass &= m >= s;
        details.push(format!("{} {small} single {} / per-subgroup {}", pool.name(), pct(s), pct(m)));
    }

    // subgroup whose mean training accuracy improves most under the fair pool
    let cell_acc = |pool: PoolName| {
        let mut sums: BTreeMap<SubgroupKey, (f64, usize)> = BTreeMap::new();
        for (j, a) in report.risks(pool).train_accuracy.iter().enumerate() {
            if let Some(a) = a {
                let e = sums.entry(report.point_subgroup[j]).or_insert((0.0, 0));
                e.0 += a;
                e.1 += 1;
            }
        }
        sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect::<BTreeMap<_, _>>()
    };
    let (fair_acc, unc_acc) = (cell_acc(PoolName::Fair), cell_acc(PoolName::Unconstrained));
    let (gainer, gain) = fair_acc
        .iter()
        .map(|(k, a)| (*k, a - unc_acc[k]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let fair_risk = report.risks_fair.subgroup[&gainer];
    let unc_risk = report.risks_unconstrained.subgroup[&gainer];
    pass &= fair_risk >= unc_risk - REAL_RISK_SLACK;
    details.push(format!(
        "accuracy-gaining subgroup {gainer} (+{:.1}pp): fair risk {} vs unconstrained {} (slack {})",
        100.0 * gain,
        pct(fair_risk),
        pct(unc_risk),
        pct(REAL_RISK_SLACK)
    ));
    outcome(pass, details.join("; "))
}

fn main() -> ExitCode {
    let reps: usize = std::env::var("FAIRLEAK_ACCEPTANCE_REPS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_REPS)
        .max(1);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    eprintln!("criterion 7: property suite");
    results.push((7, "property suite", property_suite()));
    eprintln!("criterion 8: small-subgroup CSV");
    results.push((8, "small-subgroup CSV directional check", small_subgroup_csv()));

    eprintln!("running {reps} repetitions of the standard experiment (cache: {})", cache_dir().display());
    let reports: Vec<PrivacyReport> = (0..reps)
        .map(|r| run(&standard(0.001, rep_seed(r)), &format!("repetition {r}")))
        .collect();
    results.push((1, "accuracy and fairness table", table_one(&reports)));
    results.push((2, "single vs per-subgroup attack table", table_four(&reports)));
    results.push((3, "privacy-cost signature", cost_signature(&reports)));
    results.push((4, "memorization doubling", memorization_doubling(&reports)));
    eprintln!("criterion 5: delta sweep");
    results.push((5, "delta-sweep trend", delta_sweep(&reports[0])));
    results.push((6, "vulnerable points", vulnerable_points(&reports)));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    println!();
    for (id, name, o) in &results {
        println!("criterion {id} ({name}): {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 || std::env::var_os("FAIRLEAK_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
