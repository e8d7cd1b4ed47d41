//! Generic-intent classifier: a 453 -> 300 -> 300 -> K network with
//! sigmoid hidden layers and a softmax output.
//!
//! Input layout: `[semantic(300) | sentiment(150) | adult | offensive | chat]`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chat_domain::ChatDomainScore;
use crate::embeddings::{Embedding, SEMANTIC_DIM, SENTIMENT_DIM};
use crate::error::{Error, Result};
use crate::moderation::ModerationSignal;
use crate::nn::{Activation, Mlp, OutputHead, TrainConfig};

pub const GENERIC_FEATURE_DIM: usize = SEMANTIC_DIM + SENTIMENT_DIM + 3;
pub const ADULT_INDEX: usize = SEMANTIC_DIM + SENTIMENT_DIM;
pub const OFFENSIVE_INDEX: usize = ADULT_INDEX + 1;
pub const CHAT_INDEX: usize = ADULT_INDEX + 2;
const MODEL_FORMAT: &str = "chitchat-generic-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenericFeatureVector(Vec<f64>);

impl GenericFeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != GENERIC_FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: GENERIC_FEATURE_DIM,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature vector has non-finite values".into()));
        }
        if values[ADULT_INDEX..].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(
                "moderation and chat features must lie in [0, 1]".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn assemble_features(
    semantic: &Embedding,
    sentiment: &Embedding,
    moderation: &ModerationSignal,
    chat: &ChatDomainScore,
) -> Result<GenericFeatureVector> {
    semantic.expect_dim(SEMANTIC_DIM)?;
    sentiment.expect_dim(SENTIMENT_DIM)?;
    let mut v = Vec::with_capacity(GENERIC_FEATURE_DIM);
    v.extend_from_slice(semantic.values());
    v.extend_from_slice(sentiment.values());
    v.push(moderation.adult_score);
    v.push(moderation.offensive_score);
    v.push(chat.probability);
    GenericFeatureVector::new(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericConfig {
    pub hidden: [usize; 2],
    pub train: TrainConfig,
    /// Fewer examples than this in any class is an error.
    pub min_examples: usize,
    /// Fraction of each class held out for the reported accuracy.
    pub holdout_fraction: f64,
}

impl Default for GenericConfig {
    fn default() -> Self {
        Self::with_seed(42)
    }
}

impl GenericConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            hidden: [300, 300],
            train: TrainConfig {
                epochs: 30,
                batch_size: 16,
                learning_rate: 0.3,
                momentum: 0.9,
                seed,
            },
            min_examples: 10,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericIntentModel {
    pub format: String,
    pub format_version: u32,
    pub class_ids: Vec<String>,
    pub config: GenericConfig,
    pub training_examples: usize,
    pub heldout_examples: usize,
    pub heldout_accuracy: Option<f64>,
    pub scaler: InputScaler,
    pub mlp: Mlp,
}

/// Per-feature standardization fitted on the training rows. Hashed
/// embedding coordinates are tiny and sparse; centring and scaling them
/// keeps the sigmoid layers out of their flat region early in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Constant features keep scale 1.
    pub fn fit(rows: &[&[f64]], dim: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(r.iter()) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-9 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }
}

/// A probability per generic class, in model class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericDistribution {
    pub classes: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl GenericDistribution {
    /// Zero for a class the model does not know.
    pub fn probability(&self, class: &str) -> f64 {
        self.classes
            .iter()
            .position(|c| c == class)
            .map_or(0.0, |i| self.probabilities[i])
    }

    /// Most likely class; ties go to the earlier class.
    pub fn argmax(&self) -> Option<(&str, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((i, p));
            }
        }
        best.map(|(i, p)| (self.classes[i].as_str(), p))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.classes
            .iter()
            .map(String::as_str)
            .zip(self.probabilities.iter().copied())
    }

    pub fn empty() -> Self {
        Self {
            classes: Vec::new(),
            probabilities: Vec::new(),
        }
    }
}

fn network(classes: usize, config: &GenericConfig) -> Mlp {
    Mlp::new(
        &[GENERIC_FEATURE_DIM, config.hidden[0], config.hidden[1], classes],
        Activation::Sigmoid,
        OutputHead::Softmax,
        config.train.seed,
    )
}

/// Trains on `(features, class id)` pairs. The result does not depend on
/// the order of `examples`.
pub fn train_generic(
    examples: &[(GenericFeatureVector, String)],
    config: &GenericConfig,
) -> Result<GenericIntentModel> {
    let mut by_class: BTreeMap<&str, Vec<&GenericFeatureVector>> = BTreeMap::new();
    for (v, c) in examples {
        by_class.entry(c.as_str()).or_default().push(v);
    }
    if by_class.len() < 2 {
        return Err(Error::SingleClass);
    }
    for (class, vs) in &by_class {
        if vs.len() < config.min_examples.max(1) {
            return Err(Error::TooFewExamples {
                class: class.to_string(),
                count: vs.len(),
                required: config.min_examples.max(1),
            });
        }
    }
    let class_ids: Vec<String> = by_class.keys().map(|c| c.to_string()).collect();

    // Canonical order within each class, then a seeded stratified split.
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed ^ 0x6e7e_71c);
    let mut train: Vec<(&[f64], usize)> = Vec::new();
    let mut held: Vec<(&[f64], usize)> = Vec::new();
    for (label, vs) in by_class.values_mut().enumerate() {
        vs.sort_by(|a, b| {
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        vs.shuffle(&mut rng);
        let n_held = ((vs.len() as f64) * config.holdout_fraction).floor() as usize;
        let n_held = n_held.min(vs.len() - 1);
        for (i, v) in vs.iter().enumerate() {
            let row = (v.values(), label);
            if i < n_held {
                held.push(row);
            } else {
                train.push(row);
            }
        }
    }

    let mut mlp = network(class_ids.len(), config);
    let raw: Vec<&[f64]> = train.iter().map(|r| r.0).collect();
    let scaler = InputScaler::fit(&raw, GENERIC_FEATURE_DIM);
    let scaled: Vec<Vec<f64>> = raw.iter().map(|x| scaler.apply(x)).collect();
    let xs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
    let ys: Vec<usize> = train.iter().map(|r| r.1).collect();
    mlp.fit(&xs, &ys, &vec![1.0; xs.len()], &config.train);

    let heldout_accuracy = (!held.is_empty()).then(|| {
        let correct = held
            .iter()
            .filter(|(x, y)| argmax(&mlp.predict(&scaler.apply(x))) == *y)
            .count();
        correct as f64 / held.len() as f64
    });

    Ok(GenericIntentModel {
        format: MODEL_FORMAT.into(),
        format_version: MODEL_VERSION,
        class_ids,
        config: config.clone(),
        training_examples: train.len(),
        heldout_examples: held.len(),
        heldout_accuracy,
        scaler,
        mlp,
    })
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

impl GenericIntentModel {
    /// An untrained network with all-zero parameters; predicts uniformly.
    pub fn zeros(class_ids: Vec<String>, config: GenericConfig) -> Self {
        let mlp = Mlp::zeros(
            &[GENERIC_FEATURE_DIM, config.hidden[0], config.hidden[1], class_ids.len()],
            Activation::Sigmoid,
            OutputHead::Softmax,
        );
        Self {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_VERSION,
            class_ids,
            config,
            training_examples: 0,
            heldout_examples: 0,
            heldout_accuracy: None,
            scaler: InputScaler::identity(GENERIC_FEATURE_DIM),
            mlp,
        }
    }

    pub fn predict(&self, v: &GenericFeatureVector) -> GenericDistribution {
        GenericDistribution {
            classes: self.class_ids.clone(),
            probabilities: self.mlp.predict(&self.scaler.apply(v.values())),
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let m: Self = serde_json::from_reader(input)?;
        if m.format != MODEL_FORMAT {
            return Err(Error::parse("generic model", format!("unexpected format `{}`", m.format)));
        }
        if m.format_version != MODEL_VERSION {
            return Err(Error::FormatVersion {
                what: "generic model",
                found: m.format_version,
            });
        }
        let shape = m.mlp.shape();
        if shape.len() != 4
            || shape[0] != GENERIC_FEATURE_DIM
            || shape[3] != m.class_ids.len()
            || m.scaler.mean.len() != GENERIC_FEATURE_DIM
            || m.scaler.scale.len() != GENERIC_FEATURE_DIM
        {
            return Err(Error::parse("generic model", format!("unexpected network shape {shape:?}")));
        }
        Ok(m)
    }
}

pub fn predict_generic(v: &GenericFeatureVector, model: &GenericIntentModel) -> GenericDistribution {
    model.predict(v)
}
