//! Direct Monte-Carlo execution of the membership attack game.
//!
//! Every trial retrains a model, so this is only practical for cheap
//! learners (shallow trees, small networks) and small `n`. The pool-based
//! estimator in the parent module is the one used by full experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{best_threshold, AuditError};
use crate::dataset::{DataPoint, Dataset, SyntheticConfig};
use crate::fair_reduction::{eg_fit, EgConfig, RandomizedClassifier};
use crate::learners::{self, LearnerSpec, SampleWeights};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub enum GameLearner {
    Base(LearnerSpec),
    Fair(EgConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GameAdversary {
    /// Ignore the loss and always answer `b̂`.
    Constant(bool),
    /// Answer "member" iff the loss is below the threshold.
    Threshold(f64),
    /// Fit a threshold on `shadow_trials` extra games per side before playing.
    Calibrated { shadow_trials: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub trials: usize,
    pub wins: usize,
    pub win_rate: f64,
    /// Threshold used, when the adversary looked at losses.
    pub threshold: Option<f64>,
}

/// Train on `n - 1` fresh draws plus either `z` (b = 1) or one more fresh
/// draw (b = 0), and return the trained model's loss on `z`.
fn play_once(
    z: &DataPoint,
    learner: &GameLearner,
    n: usize,
    cfg: &SyntheticConfig,
    member: bool,
    trial_seed: u64,
) -> Result<f64, AuditError> {
    let mut rng = seed::rng(seed::derive(trial_seed, "sample", 0));
    let mut points: Vec<DataPoint> = (0..n.saturating_sub(1)).map(|_| cfg.sample_point(&mut rng)).collect();
    points.push(if member { z.clone() } else { cfg.sample_point(&mut rng) });
    let data = Dataset::new(points).map_err(|e| AuditError::Learner(e.to_string()))?;
    let view = data.full_view();
    let train_seed = seed::derive(trial_seed, "train", 0);
    let clf = match learner {
        GameLearner::Base(spec) => {
            let model = learners::train(&view, &SampleWeights::uniform(view.len()), spec, train_seed)
                .map_err(|e| AuditError::Learner(e.to_string()))?;
            RandomizedClassifier::singleton(model)
        }
        GameLearner::Fair(eg) => {
            eg_fit(&view, eg, train_seed)
                .map_err(|e| AuditError::Learner(e.to_string()))?
                .classifier
        }
    };
    clf.expected_loss(z).map_err(|e| AuditError::Shape(e.to_string()))
}

/// Estimate the probability that the adversary guesses `b` correctly.
///
/// Each trial flips a fair coin for `b`, so the win rate estimates the
/// balanced accuracy of the adversary on `z`.
pub fn simulate_attack_game(
    z: &DataPoint,
    learner: &GameLearner,
    n: usize,
    cfg: &SyntheticConfig,
    trials: usize,
    adversary: &GameAdversary,
    master_seed: u64,
) -> Result<GameOutcome, AuditError> {
    if trials == 0 || n == 0 {
        return Err(AuditError::Shape("trials and n must be positive".into()));
    }
    let threshold = match adversary {
        GameAdversary::Constant(_) => None,
        GameAdversary::Threshold(t) => Some(*t),
        GameAdversary::Calibrated { shadow_trials } => {
            let shadow = (*shadow_trials).max(1);
            let losses = (0..2 * shadow)
                .into_par_iter()
                .map(|t| {
                    let member = t % 2 == 0;
                    play_once(z, learner, n, cfg, member, seed::derive(master_seed, "shadow", t as u64))
                        .map(|l| (member, l))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let inside: Vec<f64> = losses.iter().filter(|(m, _)| *m).map(|(_, l)| *l).collect();
            let outside: Vec<f64> = losses.iter().filter(|(m, _)| !*m).map(|(_, l)| *l).collect();
            Some(best_threshold(&inside, &outside)?.0)
        }
    };
    let wins = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed::derive(master_seed, "game", t as u64);
            let member = seed::derive(trial_seed, "coin", 0) & 1 == 1;
            let guess = match (adversary, threshold) {
                (GameAdversary::Constant(b), _) => *b,
                (_, Some(tau)) => play_once(z, learner, n, cfg, member, trial_seed)? < tau,
                (_, None) => unreachable!("loss-based adversaries always carry a threshold"),
            };
            Ok((guess == member) as usize)
        })
        .collect::<Result<Vec<usize>, AuditError>>()?
        .into_iter()
        .sum::<usize>();
    Ok(GameOutcome {
        trials,
        wins,
        win_rate: wins as f64 / trials as f64,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::TreeOptions;

    fn tree(depth: usize) -> GameLearner {
        GameLearner::Base(LearnerSpec::Tree(TreeOptions::with_depth(depth)))
    }

    #[test]
    fn constant_adversary_wins_half_the_time() {
        let cfg = SyntheticConfig::standard();
        let z = DataPoint::new(vec![0.0, 0.0], 0, 0);
        let out = simulate_attack_game(&z, &tree(1), 5, &cfg, 4000, &GameAdversary::Constant(true), 3).unwrap();
        // 4 sigma of a fair coin over 4000 trials
        assert!((out.win_rate - 0.5).abs() < 4.0 * (0.25f64 / 4000.0).sqrt(), "{}", out.win_rate);
    }

    #[test]
    fn root_only_tree_leaks_almost_nothing() {
        let cfg = SyntheticConfig::standard();
        let z = DataPoint::new(vec![0.5, 1.0], 0, 1);
        let trials = 600;
        let out = simulate_attack_game(&z, &tree(0), 400, &cfg, trials, &GameAdversary::Calibrated { shadow_trials: 200 }, 11)
            .unwrap();
        let sigma = (0.25 / trials as f64).sqrt();
        assert!((out.win_rate - 0.5).abs() < 3.0 * sigma + 0.02, "{}", out.win_rate);
    }

    #[test]
    fn deep_tree_exposes_an_outlier() {
        let cfg = SyntheticConfig::standard();
        let z = DataPoint::new(vec![60.0, -60.0], 0, 0);
        let out = simulate_attack_game(&z, &tree(15), 50, &cfg, 400, &GameAdversary::Calibrated { shadow_trials: 100 }, 5)
            .unwrap();
        assert!(out.win_rate > 0.8, "{}", out.win_rate);
    }

    #[test]
    fn outcome_is_deterministic() {
        let cfg = SyntheticConfig::standard();
        let z = DataPoint::new(vec![1.0, 1.0], 1, 1);
        let adv = GameAdversary::Threshold(0.3);
        let a = simulate_attack_game(&z, &tree(4), 30, &cfg, 50, &adv, 9).unwrap();
        let b = simulate_attack_game(&z, &tree(4), 30, &cfg, 50, &adv, 9).unwrap();
        assert_eq!(a, b);
    }
}
