//! Weighted L2-regularized linear SVM (hinge loss) trained by dual
//! coordinate descent.
//!
//! Minimizes `lambda/2 |w|^2 + sum_i s_i hinge(y_i (w.x_i + b)) / sum_i s_i`
//! where `s_i` are sample weights. The bias is learned as the weight of a
//! constant feature and is regularized with the rest.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::SparseFeatureVector;

const BIAS_FEATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub max_epochs: usize,
    /// Stop when the projected-gradient spread falls below this.
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            max_epochs: 200,
            tolerance: 1e-3,
        }
    }
}

impl LinearSvm {
    pub fn margin(&self, x: &SparseFeatureVector) -> f64 {
        self.bias
            + x.iter()
                .map(|(id, v)| self.weights.get(id).copied().unwrap_or(0.0) * v)
                .sum::<f64>()
    }

    pub fn weight(&self, feature: &str) -> f64 {
        self.weights.get(feature).copied().unwrap_or(0.0)
    }

    /// `labels` are +1/-1 encoded as booleans (true = positive).
    pub fn train(
        xs: &[SparseFeatureVector],
        labels: &[bool],
        sample_weights: &[f64],
        config: &SvmConfig,
        seed: u64,
    ) -> Self {
        let n = xs.len();
        let vocab: BTreeSet<&str> = xs.iter().flat_map(|x| x.iter().map(|(id, _)| id)).collect();
        let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let rows: Vec<Vec<(usize, f64)>> = xs
            .iter()
            .map(|x| x.iter().map(|(id, v)| (index[id], v)).collect())
            .collect();
        let dim = index.len();

        let total: f64 = sample_weights.iter().sum();
        let c = if total > 0.0 {
            1.0 / (config.lambda * total)
        } else {
            0.0
        };
        let upper: Vec<f64> = sample_weights.iter().map(|s| s * c).collect();
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let qii: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().map(|(_, v)| v * v).sum::<f64>() + BIAS_FEATURE * BIAS_FEATURE)
            .collect();

        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut alpha = vec![0.0; n];
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        for _ in 0..config.max_epochs {
            order.shuffle(&mut rng);
            let mut pg_max = f64::NEG_INFINITY;
            let mut pg_min = f64::INFINITY;
            for &i in &order {
                if upper[i] == 0.0 {
                    continue;
                }
                let wx: f64 = rows[i].iter().map(|&(j, v)| w[j] * v).sum::<f64>() + b * BIAS_FEATURE;
                let g = y[i] * wx - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] == upper[i] {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - g / qii[i]).clamp(0.0, upper[i]);
                    let d = (alpha[i] - old) * y[i];
                    for &(j, v) in &rows[i] {
                        w[j] += d * v;
                    }
                    b += d * BIAS_FEATURE;
                }
            }
            if pg_max - pg_min < config.tolerance {
                break;
            }
        }

        let weights = vocab
            .iter()
            .zip(&w)
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| ((*k).to_owned(), v))
            .collect();
        Self { weights, bias: b }
    }

    /// The primal objective the trainer minimizes.
    pub fn objective(
        &self,
        xs: &[SparseFeatureVector],
        labels: &[bool],
        sample_weights: &[f64],
        lambda: f64,
    ) -> f64 {
        let total: f64 = sample_weights.iter().sum();
        let reg = self.weights.values().map(|w| w * w).sum::<f64>() + self.bias * self.bias;
        let hinge: f64 = xs
            .iter()
            .zip(labels)
            .zip(sample_weights)
            .map(|((x, &l), s)| {
                let y = if l { 1.0 } else { -1.0 };
                s * (1.0 - y * self.margin(x)).max(0.0)
            })
            .sum();
        lambda / 2.0 * reg + if total > 0.0 { hinge / total } else { 0.0 }
    }
}
