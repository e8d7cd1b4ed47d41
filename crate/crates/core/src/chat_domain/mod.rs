//! Chat-vs-not-chat domain classifier.
//!
//! Lexical and semantic evidence are scored by separate models and combined
//! by a shallow decision tree:
//!
//! * a linear SVM over TF-IDF word grams and TF character trigrams, whose
//!   per-feature weights stay inspectable and overridable;
//! * a two-layer network (300 -> 64 -> 1) over the semantic embedding;
//! * a depth-limited tree over the pair `(svm margin, network output)`,
//!   fit on out-of-fold scores so it never sees a component's training fit.
//!
//! Training data combines human-judged queries (4 judges, consensus
//! labelled) with augmented examples; judged examples weigh 5x augmented
//! ones.

mod svm;
mod tree;

use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analyzer::{Analyzer, QueryFeatures};
use crate::embeddings::SEMANTIC_DIM;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, OutputHead, TrainConfig};
use crate::text::{self, IdfTable, NgramConfig, NormalizedQuery, RawQuery, SparseFeatureVector};

pub use svm::{LinearSvm, SvmConfig};
pub use tree::{DecisionTree, TreeConfig};

pub const JUDGES_PER_QUERY: usize = 4;
pub const JUDGED_WEIGHT: f64 = 5.0;
pub const AUGMENTED_WEIGHT: f64 = 1.0;
const MODEL_FORMAT: &str = "chitchat-domain-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Judgment {
    Chat,
    Task,
    Information,
    Junk,
}

impl FromStr for Judgment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CHAT" => Ok(Judgment::Chat),
            "TASK" => Ok(Judgment::Task),
            "INFORMATION" => Ok(Judgment::Information),
            "JUNK" => Ok(Judgment::Junk),
            other => Err(Error::InvalidInput(format!("unknown judgment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedQuery {
    pub query: RawQuery,
    judgments: Vec<Judgment>,
}

impl JudgedQuery {
    pub fn new(query: RawQuery, judgments: Vec<Judgment>) -> Result<Self> {
        if judgments.len() != JUDGES_PER_QUERY {
            return Err(Error::InvalidInput(format!(
                "expected {JUDGES_PER_QUERY} judgments, got {}",
                judgments.len()
            )));
        }
        Ok(Self { query, judgments })
    }

    pub fn judgments(&self) -> &[Judgment] {
        &self.judgments
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consensus {
    Positive,
    Negative,
    Ignored,
}

/// At least 3 of 4 CHAT votes is positive, at most 1 is negative, and an
/// even split is dropped.
pub fn consensus_label(judged: &JudgedQuery) -> Consensus {
    let chat = judged
        .judgments
        .iter()
        .filter(|&&j| j == Judgment::Chat)
        .count();
    match chat {
        3.. => Consensus::Positive,
        2 => Consensus::Ignored,
        _ => Consensus::Negative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleSource {
    Judged,
    AugmentedNegative,
    AugmentedPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: RawQuery,
    pub positive: bool,
    pub sample_weight: f64,
    pub source: ExampleSource,
}

pub fn build_training_set(
    judged: &[JudgedQuery],
    augmented_negatives: &[RawQuery],
    augmented_positives: &[RawQuery],
) -> Vec<TrainingExample> {
    let judged_examples = judged.iter().filter_map(|j| {
        let positive = match consensus_label(j) {
            Consensus::Positive => true,
            Consensus::Negative => false,
            Consensus::Ignored => return None,
        };
        Some(TrainingExample {
            query: j.query.clone(),
            positive,
            sample_weight: JUDGED_WEIGHT,
            source: ExampleSource::Judged,
        })
    });
    let augmented = |queries: &[RawQuery], positive: bool, source: ExampleSource| {
        queries
            .iter()
            .map(move |q| TrainingExample {
                query: q.clone(),
                positive,
                sample_weight: AUGMENTED_WEIGHT,
                source,
            })
            .collect::<Vec<_>>()
    };
    judged_examples
        .chain(augmented(augmented_negatives, false, ExampleSource::AugmentedNegative))
        .chain(augmented(augmented_positives, true, ExampleSource::AugmentedPositive))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatDomainConfig {
    pub seed: u64,
    pub ngrams: NgramConfig,
    pub svm: SvmConfig,
    pub mlp_hidden: usize,
    pub mlp: TrainConfig,
    pub tree: TreeConfig,
    pub folds: usize,
}

impl Default for ChatDomainConfig {
    fn default() -> Self {
        Self::with_seed(42)
    }
}

impl ChatDomainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ngrams: NgramConfig::default(),
            svm: SvmConfig::default(),
            mlp_hidden: 64,
            mlp: TrainConfig {
                epochs: 40,
                batch_size: 32,
                learning_rate: 0.05,
                momentum: 0.9,
                seed,
            },
            tree: TreeConfig::default(),
            folds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatDomainScore {
    /// SVM margin.
    pub lexical_score: f64,
    /// Network probability of chat.
    pub semantic_score: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub examples: usize,
    pub positives: usize,
    pub total_weight: f64,
    pub semantic_provider: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatDomainModel {
    pub format: String,
    pub format_version: u32,
    pub config: ChatDomainConfig,
    pub summary: TrainingSummary,
    pub idf: IdfTable,
    pub svm: LinearSvm,
    pub mlp: Mlp,
    pub tree: DecisionTree,
}

struct Prepared {
    normalized: Vec<NormalizedQuery>,
    semantic: Vec<Vec<f64>>,
    labels: Vec<bool>,
    weights: Vec<f64>,
}

struct Components {
    idf: IdfTable,
    svm: LinearSvm,
    mlp: Mlp,
}

impl Components {
    fn fit(data: &Prepared, idx: &[usize], config: &ChatDomainConfig, seed: u64) -> Result<Self> {
        let idf = IdfTable::fit(idx.iter().map(|&i| &data.normalized[i]), &config.ngrams)?;
        let lexical: Vec<SparseFeatureVector> = idx
            .iter()
            .map(|&i| lexical_features(&data.normalized[i], &idf, &config.ngrams))
            .collect();
        let labels: Vec<bool> = idx.iter().map(|&i| data.labels[i]).collect();
        let weights: Vec<f64> = idx.iter().map(|&i| data.weights[i]).collect();
        let svm = LinearSvm::train(&lexical, &labels, &weights, &config.svm, seed);

        let mut mlp = Mlp::new(
            &[SEMANTIC_DIM, config.mlp_hidden, 1],
            Activation::Tanh,
            OutputHead::Logistic,
            seed,
        );
        let xs: Vec<&[f64]> = idx.iter().map(|&i| data.semantic[i].as_slice()).collect();
        let ys: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let mlp_cfg = TrainConfig {
            seed,
            ..config.mlp.clone()
        };
        mlp.fit(&xs, &ys, &weights, &mlp_cfg);
        Ok(Self { idf, svm, mlp })
    }

    fn scores(&self, q: &NormalizedQuery, semantic: &[f64], ngrams: &NgramConfig) -> [f64; 2] {
        let lex = self.svm.margin(&lexical_features(q, &self.idf, ngrams));
        [lex, self.mlp.predict(semantic)[0]]
    }
}

fn lexical_features(q: &NormalizedQuery, idf: &IdfTable, ngrams: &NgramConfig) -> SparseFeatureVector {
    text::vectorize(&text::extract_ngrams(q, ngrams), idf)
}

/// Trains the full ensemble. Deterministic for a fixed `config.seed`.
pub fn train(
    examples: &[TrainingExample],
    analyzer: &Analyzer,
    config: &ChatDomainConfig,
) -> Result<ChatDomainModel> {
    config.ngrams.validate()?;
    let positives = examples.iter().filter(|e| e.positive).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::SingleClass);
    }

    let normalized: Vec<NormalizedQuery> = examples
        .iter()
        .map(|e| analyzer.normalize(&e.query.text))
        .collect();
    let semantic = normalized
        .iter()
        .map(|q| analyzer.semantic(q).into_values())
        .collect();
    let data = Prepared {
        normalized,
        semantic,
        labels: examples.iter().map(|e| e.positive).collect(),
        weights: examples.iter().map(|e| e.sample_weight).collect(),
    };

    // Out-of-fold component scores for the combiner.
    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0xf01d));
    let folds = config.folds.max(2);
    let mut oof = vec![[0.0; 2]; n];
    let mut have_oof = true;
    for f in 0..folds {
        let held: Vec<usize> = order.iter().copied().skip(f).step_by(folds).collect();
        let train_idx: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(k, _)| k % folds != f)
            .map(|(_, &i)| i)
            .collect();
        let pos = train_idx.iter().filter(|&&i| data.labels[i]).count();
        if pos == 0 || pos == train_idx.len() {
            have_oof = false;
            break;
        }
        let comp = Components::fit(&data, &train_idx, config, config.seed.wrapping_add(f as u64 + 1))?;
        for &i in &held {
            oof[i] = comp.scores(&data.normalized[i], &data.semantic[i], &config.ngrams);
        }
    }

    let all: Vec<usize> = (0..n).collect();
    let full = Components::fit(&data, &all, config, config.seed)?;
    if !have_oof {
        // Too few examples of one class to hold any out; fall back to
        // in-sample scores.
        for i in 0..n {
            oof[i] = full.scores(&data.normalized[i], &data.semantic[i], &config.ngrams);
        }
    }
    let tree_x: Vec<Vec<f64>> = oof.iter().map(|s| s.to_vec()).collect();
    let tree = DecisionTree::fit(&tree_x, &data.labels, &data.weights, &config.tree);

    Ok(ChatDomainModel {
        format: MODEL_FORMAT.into(),
        format_version: MODEL_VERSION,
        config: config.clone(),
        summary: TrainingSummary {
            examples: n,
            positives,
            total_weight: data.weights.iter().sum(),
            semantic_provider: analyzer.semantic_provider().name().to_owned(),
        },
        idf: full.idf,
        svm: full.svm,
        mlp: full.mlp,
        tree,
    })
}

impl ChatDomainModel {
    pub fn lexical_vector(&self, q: &NormalizedQuery) -> SparseFeatureVector {
        lexical_features(q, &self.idf, &self.config.ngrams)
    }

    pub fn score_features(&self, features: &QueryFeatures) -> ChatDomainScore {
        let lexical_score = self.svm.margin(&self.lexical_vector(&features.normalized));
        let semantic_score = self.mlp.predict(features.semantic.values())[0];
        let probability = self
            .tree
            .predict(&[lexical_score, semantic_score])
            .clamp(0.0, 1.0);
        ChatDomainScore {
            lexical_score,
            semantic_score,
            probability,
        }
    }

    pub fn score(&self, query: &RawQuery, analyzer: &Analyzer) -> ChatDomainScore {
        self.score_features(&analyzer.analyze(&query.text))
    }

    /// SVM weight of a lexical feature; 0 when absent.
    pub fn interpret(&self, feature_id: &str) -> f64 {
        self.svm.weight(feature_id)
    }

    /// A new model version with one lexical weight replaced.
    pub fn override_weight(&self, feature_id: &str, weight: f64) -> Self {
        let mut next = self.clone();
        if weight == 0.0 {
            next.svm.weights.remove(feature_id);
        } else {
            next.svm.weights.insert(feature_id.to_owned(), weight);
        }
        next
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let model: Self = serde_json::from_reader(input)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::parse("domain model", format!("unexpected format `{}`", model.format)));
        }
        if model.format_version != MODEL_VERSION {
            return Err(Error::FormatVersion {
                what: "domain model",
                found: model.format_version,
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Judgment::*;

    fn judged(text: &str, j: [Judgment; 4]) -> JudgedQuery {
        JudgedQuery::new(RawQuery::text(text).unwrap(), j.to_vec()).unwrap()
    }

    fn ex(text: &str, positive: bool) -> TrainingExample {
        TrainingExample {
            query: RawQuery::text(text).unwrap(),
            positive,
            sample_weight: 1.0,
            source: ExampleSource::AugmentedPositive,
        }
    }

    fn small_config() -> ChatDomainConfig {
        let mut c = ChatDomainConfig::with_seed(7);
        c.mlp.epochs = 30;
        c
    }

    fn toy_corpus() -> Vec<TrainingExample> {
        let chat_heads = ["hello", "hi", "good morning", "i love", "you are funny", "tell me a joke"];
        let chat_tails = ["buddy", "friend", "robot", "my pal", "sweetie", "dear bot", "mate"];
        let task_heads = ["weather in", "set an alarm for", "directions to", "stock price of", "traffic near", "book a table in"];
        let task_tails = ["paris", "7am", "the airport", "london", "downtown", "boston", "tomorrow"];
        let mut out = Vec::new();
        for h in chat_heads {
            for t in chat_tails {
                out.push(ex(&format!("{h} {t}"), true));
            }
        }
        for h in task_heads {
            for t in task_tails {
                out.push(ex(&format!("{h} {t}"), false));
            }
        }
        out
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(consensus_label(&judged("q", [Chat, Chat, Chat, Task])), Consensus::Positive);
        assert_eq!(
            consensus_label(&judged("q", [Task, Information, Junk, Task])),
            Consensus::Negative
        );
        assert_eq!(consensus_label(&judged("q", [Chat, Chat, Task, Junk])), Consensus::Ignored);
        assert_eq!(consensus_label(&judged("q", [Chat, Task, Task, Junk])), Consensus::Negative);
        assert_eq!(consensus_label(&judged("q", [Chat; 4])), Consensus::Positive);
    }

    #[test]
    fn judged_query_needs_four_votes() {
        let q = RawQuery::text("hi").unwrap();
        assert!(JudgedQuery::new(q.clone(), vec![Chat; 3]).is_err());
        assert!(JudgedQuery::new(q, vec![Chat; 5]).is_err());
    }

    #[test]
    fn judgment_parsing() {
        assert_eq!("chat".parse::<Judgment>().unwrap(), Chat);
        assert_eq!(" INFORMATION ".parse::<Judgment>().unwrap(), Information);
        assert!("maybe".parse::<Judgment>().is_err());
    }

    #[test]
    fn training_set_weights() {
        let set = build_training_set(
            &[judged("hi", [Chat, Chat, Chat, Chat])],
            &[RawQuery::text("weather").unwrap()],
            &[],
        );
        let w: Vec<f64> = set.iter().map(|e| e.sample_weight).collect();
        assert_eq!(w, [5.0, 1.0]);
        assert!(set[0].positive && !set[1].positive);

        let set = build_training_set(&[judged("meh", [Chat, Chat, Task, Junk])], &[], &[]);
        assert!(set.is_empty());
        assert!(build_training_set(&[], &[], &[]).is_empty());
    }

    #[test]
    fn single_class_is_error() {
        let all_pos = vec![ex("hello", true), ex("hi", true)];
        assert!(matches!(
            train(&all_pos, &Analyzer::default(), &small_config()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn trains_and_scores_toy_corpus() {
        let analyzer = Analyzer::default();
        let data = toy_corpus();
        let model = train(&data, &analyzer, &small_config()).unwrap();
        assert!(model.tree.depth() <= 5);
        let mut correct = 0;
        for e in &data {
            let s = model.score(&e.query, &analyzer);
            assert!((0.0..=1.0).contains(&s.probability));
            if (s.probability > 0.5) == e.positive {
                correct += 1;
            }
        }
        assert!(correct >= 80, "{correct}/84");

        let empty = model.score(&RawQuery::text("").unwrap(), &analyzer);
        assert!((0.0..=1.0).contains(&empty.probability));

        let q = RawQuery::text("good morning").unwrap();
        assert_eq!(model.score(&q, &analyzer), model.score(&q, &analyzer));
    }

    #[test]
    fn ambiguous_duplicates_score_half() {
        let analyzer = Analyzer::default();
        let mut data: Vec<TrainingExample> =
            (0..10).map(|i| ex("what a day", i % 2 == 0)).collect();
        data.extend(toy_corpus());
        let model = train(&data, &analyzer, &small_config()).unwrap();
        let p = model
            .score(&RawQuery::text("what a day").unwrap(), &analyzer)
            .probability;
        assert!((p - 0.5).abs() < 0.2, "p = {p}");
    }

    #[test]
    fn override_and_interpret() {
        let analyzer = Analyzer::default();
        let model = train(&toy_corpus(), &analyzer, &small_config()).unwrap();
        assert_eq!(model.interpret("w3:raining_in_paris"), 0.0);

        let q = RawQuery::text("tell me a joke").unwrap();
        let feature = "w1:joke";
        assert!(model.lexical_vector(&analyzer.normalize(&q.text)).get(feature) > 0.0);
        let before = model.score(&q, &analyzer).lexical_score;
        let patched = model.override_weight(feature, -10.0);
        assert_eq!(patched.interpret(feature), -10.0);
        assert!(patched.score(&q, &analyzer).lexical_score < before);
        // The original is untouched.
        assert_eq!(model.score(&q, &analyzer).lexical_score, before);
    }

    #[test]
    fn model_round_trips_byte_identically() {
        let analyzer = Analyzer::default();
        let a = train(&toy_corpus(), &analyzer, &small_config()).unwrap();
        let b = train(&toy_corpus(), &analyzer, &small_config()).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write(&mut ba).unwrap();
        b.write(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = ChatDomainModel::read(&ba[..]).unwrap();
        assert_eq!(back, a);
    }
}
