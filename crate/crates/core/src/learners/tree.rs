//! CART-style binary tree grown greedily on weighted Gini impurity.

use serde::{Deserialize, Serialize};

use super::{TrainError, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_depth: 10,
            min_samples_leaf: 1,
        }
    }
}

impl TreeOptions {
    pub fn with_depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.min_samples_leaf == 0 {
            return Err(TrainError::InvalidOptions("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// `x[feature] < threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub(crate) fn fit(set: &TrainingSet, opts: &TreeOptions) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        let all: Vec<usize> = (0..set.len()).collect();
        let (total, pos) = totals(set, &all);
        let root_value = if total > 0.0 {
            pos / total
        } else {
            unweighted_fraction(set, &all)
        };
        tree.grow(set, opts, all, 0, root_value);
        tree
    }

    fn grow(&mut self, set: &TrainingSet, opts: &TreeOptions, idx: Vec<usize>, depth: usize, fallback: f64) -> usize {
        let at = self.nodes.len();
        let (total, pos) = totals(set, &idx);
        let value = if total > 0.0 { pos / total } else { fallback };
        self.nodes.push(Node::Leaf { value });
        let pure = pos == 0.0 || pos == total;
        if depth >= opts.max_depth || pure || idx.len() < 2 * opts.min_samples_leaf {
            return at;
        }
        let Some(best) = best_split(set, &idx, opts.min_samples_leaf) else {
            return at;
        };
        debug_assert!(best.impurity.is_finite());
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| set.row(i)[best.feature] < best.threshold);
        let left = self.grow(set, opts, left_idx, depth + 1, value);
        let right = self.grow(set, opts, right_idx, depth + 1, value);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }
}

fn totals(set: &TrainingSet, idx: &[usize]) -> (f64, f64) {
    idx.iter().fold((0.0, 0.0), |(t, p), &i| {
        let w = set.w[i];
        (t + w, if set.y[i] == 1 { p + w } else { p })
    })
}

fn unweighted_fraction(set: &TrainingSet, idx: &[usize]) -> f64 {
    idx.iter().filter(|&&i| set.y[i] == 1).count() as f64 / idx.len() as f64
}

/// Weighted Gini mass `W * 2p(1-p)` with `p = pos / W`.
fn gini_mass(total: f64, pos: f64) -> f64 {
    if total > 0.0 {
        2.0 * pos * (total - pos) / total
    } else {
        0.0
    }
}

/// Lowest impurity split; ties keep the lowest feature, then the lowest threshold.
fn best_split(set: &TrainingSet, idx: &[usize], min_leaf: usize) -> Option<Candidate> {
    let (total, pos) = totals(set, idx);
    let mut best: Option<Candidate> = None;
    let mut order = idx.to_vec();
    for feature in 0..set.dim {
        order.sort_by(|&a, &b| set.row(a)[feature].total_cmp(&set.row(b)[feature]).then(a.cmp(&b)));
        let mut left_w = 0.0;
        let mut left_p = 0.0;
        for k in 0..order.len() - 1 {
            let i = order[k];
            left_w += set.w[i];
            if set.y[i] == 1 {
                left_p += set.w[i];
            }
            let here = set.row(i)[feature];
            let next = set.row(order[k + 1])[feature];
            if here == next {
                continue;
            }
            let n_left = k + 1;
            if n_left < min_leaf || order.len() - n_left < min_leaf {
                continue;
            }
            let impurity = gini_mass(left_w, left_p) + gini_mass(total - left_w, pos - left_p);
            let threshold = here + (next - here) / 2.0;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                best = Some(Candidate {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataPoint, Dataset};
    use crate::learners::{train_tree, BaseModel, ModelParams, SampleWeights};
    use crate::seed;
    use rand::Rng;

    fn accuracy(model: &BaseModel, data: &Dataset) -> f64 {
        data.points()
            .iter()
            .filter(|p| ((model.predict_prob(&p.x).unwrap() >= 0.5) as u8) == p.y)
            .count() as f64
            / data.len() as f64
    }

    #[test]
    fn root_only_tree_predicts_weighted_fraction() {
        let data = Dataset::new(vec![
            DataPoint::new(vec![0.0], 0, 1),
            DataPoint::new(vec![1.0], 0, 0),
            DataPoint::new(vec![2.0], 1, 1),
            DataPoint::new(vec![3.0], 1, 0),
        ])
        .unwrap();
        let view = data.full_view();
        let model = train_tree(&view, &SampleWeights::uniform(4), &TreeOptions::with_depth(0), 0).unwrap();
        assert_eq!(model.predict_prob(&[10.0]).unwrap(), 0.5);
        let w = SampleWeights::new(vec![3.0, 1.0, 0.0, 0.0]).unwrap();
        let model = train_tree(&view, &w, &TreeOptions::with_depth(0), 0).unwrap();
        assert_eq!(model.predict_prob(&[-7.0]).unwrap(), 0.75);

        let positives = Dataset::new(vec![DataPoint::new(vec![0.0], 0, 1), DataPoint::new(vec![5.0], 0, 1)]).unwrap();
        let model = train_tree(&positives.full_view(), &SampleWeights::uniform(2), &TreeOptions::with_depth(0), 0).unwrap();
        assert_eq!(model.predict_prob(&[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn single_split_separates_by_sign() {
        let points = (-5..5)
            .map(|i| DataPoint::new(vec![i as f64 + 0.5, (i * 7 % 3) as f64], 0, (i >= 0) as u8))
            .collect();
        let data = Dataset::new(points).unwrap();
        let model = train_tree(&data.full_view(), &SampleWeights::uniform(10), &TreeOptions::with_depth(1), 0).unwrap();
        assert_eq!(accuracy(&model, &data), 1.0);
        match &model.params {
            ModelParams::Tree(t) => match t.nodes()[0] {
                Node::Split { feature, threshold, .. } => {
                    assert_eq!(feature, 0);
                    assert_eq!(threshold, 0.0);
                }
                _ => panic!("root should split"),
            },
            _ => unreachable!(),
        }
    }

    fn noisy_data(seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let points = (0..300)
            .map(|_| {
                let x = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let signal = x[0] + 0.5 * x[1] > 0.0;
                let flip = rng.gen::<f64>() < 0.2;
                DataPoint::new(x, rng.gen_range(0..2), (signal ^ flip) as u8)
            })
            .collect();
        Dataset::new(points).unwrap()
    }

    #[test]
    fn deeper_trees_fit_training_data_at_least_as_well() {
        let data = noisy_data(1);
        let view = data.full_view();
        let w = SampleWeights::uniform(data.len());
        let acc = |d| accuracy(&train_tree(&view, &w, &TreeOptions::with_depth(d), 0).unwrap(), &data);
        let (a5, a10, a15) = (acc(5), acc(10), acc(15));
        assert!(a10 >= a5 && a15 >= a10, "{a5} {a10} {a15}");
    }

    #[test]
    fn depth_bound_and_weight_scaling_invariance() {
        let data = noisy_data(2);
        let view = data.full_view();
        let mut rng = seed::rng(9);
        let w = SampleWeights::new((0..data.len()).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap();
        let a = train_tree(&view, &w, &TreeOptions::with_depth(6), 0).unwrap();
        let b = train_tree(&view, &w.scaled(2.0), &TreeOptions::with_depth(6), 0).unwrap();
        assert_eq!(a.params, b.params);
        if let ModelParams::Tree(t) = &a.params {
            assert!(t.depth() <= 6);
        }
    }

    #[test]
    fn label_overrides_are_used() {
        let data = Dataset::new(vec![DataPoint::new(vec![0.0], 0, 1), DataPoint::new(vec![1.0], 0, 1)]).unwrap();
        let w = SampleWeights::with_labels(vec![1.0, 1.0], vec![0, 0]).unwrap();
        let model = train_tree(&data.full_view(), &w, &TreeOptions::with_depth(3), 0).unwrap();
        assert_eq!(model.predict_prob(&[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let data = noisy_data(3);
        let opts = TreeOptions {
            max_depth: 20,
            min_samples_leaf: 40,
        };
        let model = train_tree(&data.full_view(), &SampleWeights::uniform(data.len()), &opts, 0).unwrap();
        let ModelParams::Tree(t) = &model.params else { unreachable!() };
        let mut counts = std::collections::HashMap::new();
        for p in data.points() {
            let mut at = 0;
            while let Node::Split { feature, threshold, left, right } = t.nodes()[at] {
                at = if p.x[feature] < threshold { left } else { right };
            }
            *counts.entry(at).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c >= 40), "{counts:?}");
    }
}
