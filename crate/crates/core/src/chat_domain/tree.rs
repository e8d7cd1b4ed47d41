//! Weighted CART over a handful of dense features. Leaves hold the
//! weighted fraction of positive examples.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum DecisionTree {
    Leaf {
        probability: f64,
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<DecisionTree>,
        right: Box<DecisionTree>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf_weight: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_leaf_weight: 5.0,
        }
    }
}

struct Row<'a> {
    x: &'a [f64],
    positive: bool,
    weight: f64,
}

impl DecisionTree {
    pub fn fit(xs: &[Vec<f64>], labels: &[bool], weights: &[f64], config: &TreeConfig) -> Self {
        let rows: Vec<Row> = xs
            .iter()
            .zip(labels)
            .zip(weights)
            .map(|((x, &positive), &weight)| Row {
                x,
                positive,
                weight,
            })
            .collect();
        let refs: Vec<&Row> = rows.iter().collect();
        grow(&refs, 0, config)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                DecisionTree::Leaf { probability, .. } => return *probability,
                DecisionTree::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            DecisionTree::Leaf { .. } => 0,
            DecisionTree::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<f64> {
        match self {
            DecisionTree::Leaf { probability, .. } => vec![*probability],
            DecisionTree::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }
}

fn leaf(rows: &[&Row]) -> DecisionTree {
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    // An empty float sum is -0.0; start from +0.0 instead.
    let pos: f64 = rows.iter().filter(|r| r.positive).fold(0.0, |acc, r| acc + r.weight);
    DecisionTree::Leaf {
        probability: if total > 0.0 { (pos / total).clamp(0.0, 1.0) } else { 0.5 },
        weight: total,
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p) * total
}

fn grow(rows: &[&Row], depth: usize, config: &TreeConfig) -> DecisionTree {
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    // An empty float sum is -0.0; start from +0.0 instead.
    let pos: f64 = rows.iter().filter(|r| r.positive).fold(0.0, |acc, r| acc + r.weight);
    if depth >= config.max_depth || pos == 0.0 || pos == total || total < 2.0 * config.min_leaf_weight
    {
        return leaf(rows);
    }
    let parent = gini(pos, total);
    let n_features = rows.first().map_or(0, |r| r.x.len());

    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..n_features {
        let mut sorted: Vec<&Row> = rows.to_vec();
        sorted.sort_by(|a, b| a.x[f].total_cmp(&b.x[f]));
        let (mut lw, mut lp) = (0.0, 0.0);
        for i in 0..sorted.len() - 1 {
            lw += sorted[i].weight;
            if sorted[i].positive {
                lp += sorted[i].weight;
            }
            let (a, b) = (sorted[i].x[f], sorted[i + 1].x[f]);
            if a == b {
                continue;
            }
            let rw = total - lw;
            if lw < config.min_leaf_weight || rw < config.min_leaf_weight {
                continue;
            }
            let impurity = gini(lp, lw) + gini(pos - lp, rw);
            let gain = parent - impurity;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, a + (b - a) / 2.0));
            }
        }
    }

    match best {
        None => leaf(rows),
        Some((_, feature, threshold)) => {
            let (l, r): (Vec<&Row>, Vec<&Row>) = rows.iter().partition(|r| r.x[feature] <= threshold);
            DecisionTree::Split {
                feature,
                threshold,
                left: Box::new(grow(&l, depth + 1, config)),
                right: Box::new(grow(&r, depth + 1, config)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn learns_threshold() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 0.0]).collect();
        let labels: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let t = DecisionTree::fit(&xs, &labels, &[1.0; 20], &TreeConfig {
            max_depth: 5,
            min_leaf_weight: 1.0,
        });
        assert_eq!(t.predict(&[3.0, 0.0]), 0.0);
        assert_eq!(t.predict(&[15.0, 0.0]), 1.0);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn identical_points_give_label_ratio() {
        let xs = vec![vec![0.3, 0.7]; 10];
        let labels: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let t = DecisionTree::fit(&xs, &labels, &[1.0; 10], &TreeConfig::default());
        assert!((t.predict(&[0.3, 0.7]) - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn depth_and_probabilities_bounded(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>(), 0.1f64..5.0), 1..200)
        ) {
            let xs: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
            let labels: Vec<bool> = pts.iter().map(|p| p.2).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.3).collect();
            let t = DecisionTree::fit(&xs, &labels, &w, &TreeConfig { max_depth: 5, min_leaf_weight: 0.1 });
            prop_assert!(t.depth() <= 5);
            for p in t.leaves() {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
