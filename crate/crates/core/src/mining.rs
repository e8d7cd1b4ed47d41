//! Offline intent discovery.
//!
//! Query embeddings are clustered with DBSCAN under cosine distance, each
//! cluster is scored for how much traffic it would absorb, and the top
//! clusters are exported for human review. Reviewers choose, reject or
//! merge clusters; applying their decisions yields intent definitions.
//!
//! Effectiveness:
//!
//! * specific: `sum_i (1 - D_i) W_i`
//! * generic: `DC_min^2 * sum_i (1 - D_i) W_i`
//!
//! where `D_i` is the cosine distance of member `i` to the cluster centroid,
//! `W_i` its impression count, and `DC_min` the cosine distance from the
//! centroid to the nearest other centroid.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embeddings::{cosine_with_norms, dot, l2_norm, Embedding, SEMANTIC_DIM};
use crate::error::{Error, Result};
use crate::intent::{CuratedQuery, IntentDefinition, IntentKind, Provenance};
use crate::text::{distinct_key, RawQuery};

const BATCH_FORMAT: &str = "chitchat-annotation-batch";
const DECISIONS_FORMAT: &str = "chitchat-annotation-decisions";
const FORMAT_VERSION: u32 = 1;
pub const SAMPLES_PER_CLUSTER: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    Specific,
    Generic,
}

impl MiningMode {
    pub fn intent_kind(self) -> IntentKind {
        match self {
            MiningMode::Specific => IntentKind::Specific,
            MiningMode::Generic => IntentKind::Generic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub mode: MiningMode,
    /// Cosine-distance radius.
    pub epsilon: f64,
    /// Distinct queries (by normalized text) needed within `epsilon`.
    pub min_points: usize,
    pub top_k: usize,
}

impl MiningConfig {
    pub fn specific() -> Self {
        Self {
            mode: MiningMode::Specific,
            epsilon: 0.2,
            min_points: 100,
            top_k: 300,
        }
    }

    pub fn generic() -> Self {
        Self {
            mode: MiningMode::Generic,
            epsilon: 0.4,
            min_points: 1000,
            top_k: 150,
        }
    }

    pub fn for_mode(mode: MiningMode) -> Self {
        match mode {
            MiningMode::Specific => Self::specific(),
            MiningMode::Generic => Self::generic(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.min_points == 0 || self.top_k == 0 {
            return Err(Error::InvalidInput(
                "min_points and top_k must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub query: RawQuery,
    pub distance_to_centroid: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    pub members: Vec<ClusterMember>,
    pub centroid: Embedding,
    /// Distance to the nearest other centroid; `None` for a lone cluster.
    pub dc_min: Option<f64>,
    pub effectiveness: f64,
}

impl Cluster {
    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|m| m.weight).sum()
    }

    pub fn distinct_queries(&self) -> usize {
        self.members
            .iter()
            .map(|m| distinct_key(&m.query.text))
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// `sum_i (1 - D_i) W_i`.
pub fn frequency_score(members: &[ClusterMember]) -> f64 {
    members
        .iter()
        .map(|m| (1.0 - m.distance_to_centroid) * m.weight)
        .sum()
}

pub fn effectiveness_specific(c: &Cluster) -> f64 {
    frequency_score(&c.members)
}

/// Nearest-neighbour centroid distance of `c` among `all` (which may
/// include `c` itself; it is skipped by id).
pub fn dc_min(c: &Cluster, all: &[Cluster]) -> Result<f64> {
    let cn = c.centroid.norm();
    all.iter()
        .filter(|o| o.id != c.id)
        .map(|o| 1.0 - cosine_with_norms(c.centroid.values(), cn, o.centroid.values(), o.centroid.norm()))
        .min_by(f64::total_cmp)
        .ok_or(Error::NeighbourUndefined)
}

pub fn effectiveness_generic(c: &Cluster, all: &[Cluster]) -> Result<f64> {
    let d = dc_min(c, all)?;
    Ok(d * d * frequency_score(&c.members))
}

/// DBSCAN label per point (`None` = noise) over unit-normalized rows.
/// Points are visited in the given order; clusters are numbered by their
/// first core point and a border point goes to the first cluster that
/// reaches it, i.e. the lowest id.
///
/// `keys[i]` identifies the distinct query behind point `i`; a point is
/// core when its neighbourhood (itself included) holds at least
/// `min_points` distinct keys.
pub fn dbscan(units: &[Vec<f64>], keys: &[usize], epsilon: f64, min_points: usize) -> Vec<Option<u32>> {
    let n = units.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| i == j || 1.0 - dot(&units[i], &units[j]) <= epsilon)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbours
        .iter()
        .map(|nb| {
            if nb.len() < min_points {
                return false;
            }
            nb.iter().map(|&j| keys[j]).collect::<BTreeSet<_>>().len() >= min_points
        })
        .collect();

    let mut labels = vec![None; n];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start].is_some() || !core[start] {
            continue;
        }
        labels[start] = Some(next);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

fn unit(values: &[f64]) -> Vec<f64> {
    let n = l2_norm(values);
    values.iter().map(|v| v / n).collect()
}

/// Clusters queries and scores each cluster for `config.mode`.
///
/// Input is put in canonical order (query text, then id) first, so the
/// result does not depend on the caller's ordering.
pub fn cluster(queries: &[(RawQuery, Embedding)], config: &MiningConfig) -> Result<Vec<Cluster>> {
    config.validate()?;
    for (q, e) in queries {
        e.expect_dim(SEMANTIC_DIM)?;
        if e.is_zero() {
            return Err(Error::InvalidInput(format!("query `{}` has a zero embedding", q.id)));
        }
    }
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.sort_by(|&a, &b| {
        let (qa, qb) = (&queries[a].0, &queries[b].0);
        qa.text.cmp(&qb.text).then_with(|| qa.id.cmp(&qb.id))
    });

    let mut key_ids: HashMap<String, usize> = HashMap::new();
    let keys: Vec<usize> = order
        .iter()
        .map(|&i| {
            let next = key_ids.len();
            *key_ids.entry(distinct_key(&queries[i].0.text)).or_insert(next)
        })
        .collect();
    let units: Vec<Vec<f64>> = order.iter().map(|&i| unit(queries[i].1.values())).collect();
    let labels = dbscan(&units, &keys, config.epsilon, config.min_points);

    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (pos, label) in labels.iter().enumerate() {
        if let Some(c) = label {
            groups.entry(*c).or_default().push(order[pos]);
        }
    }

    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|(id, idx)| build_cluster(id, &idx, queries))
        .collect();

    let scores: Vec<f64> = match config.mode {
        MiningMode::Specific => clusters.iter().map(effectiveness_specific).collect(),
        MiningMode::Generic if clusters.len() == 1 => return Err(Error::NeighbourUndefined),
        MiningMode::Generic => clusters
            .iter()
            .map(|c| effectiveness_generic(c, &clusters))
            .collect::<Result<_>>()?,
    };
    let dcs: Vec<Option<f64>> = clusters.iter().map(|c| dc_min(c, &clusters).ok()).collect();
    for ((c, s), d) in clusters.iter_mut().zip(scores).zip(dcs) {
        c.effectiveness = s;
        c.dc_min = d;
    }
    Ok(clusters)
}

fn build_cluster(id: u32, idx: &[usize], queries: &[(RawQuery, Embedding)]) -> Cluster {
    let mut mean = vec![0.0; SEMANTIC_DIM];
    for &i in idx {
        for (m, v) in mean.iter_mut().zip(queries[i].1.values()) {
            *m += v;
        }
    }
    let n = idx.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let centroid = Embedding::new(unit(&mean)).expect("finite centroid");
    let cn = centroid.norm();
    let members = idx
        .iter()
        .map(|&i| {
            let (q, e) = &queries[i];
            let cos = cosine_with_norms(e.values(), e.norm(), centroid.values(), cn);
            ClusterMember {
                query: q.clone(),
                distance_to_centroid: (1.0 - cos).clamp(0.0, 1.0),
                weight: q.weight,
            }
        })
        .collect();
    Cluster {
        id,
        members,
        centroid,
        dc_min: None,
        effectiveness: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleQuery {
    pub id: String,
    pub text: String,
    pub weight: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedCluster {
    pub cluster_id: u32,
    /// 1-based.
    pub rank: usize,
    pub effectiveness: f64,
    pub dc_min: Option<f64>,
    pub size: usize,
    pub distinct_queries: usize,
    pub total_weight: f64,
    /// Up to 25 members nearest the centroid.
    pub samples: Vec<SampleQuery>,
    /// Every member, nearest first.
    pub members: Vec<SampleQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBatch {
    pub format: String,
    pub format_version: u32,
    /// Content hash of the exported clusters.
    pub batch_id: String,
    pub mode: MiningMode,
    pub config: MiningConfig,
    /// Clusters found before truncation to `top_k`.
    pub total_clusters: usize,
    pub clusters: Vec<ExportedCluster>,
}

impl AnnotationBatch {
    pub fn cluster(&self, id: u32) -> Option<&ExportedCluster> {
        self.clusters.iter().find(|c| c.cluster_id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text)?;
        if b.format != BATCH_FORMAT {
            return Err(Error::parse("annotation batch", format!("unexpected format `{}`", b.format)));
        }
        if b.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "annotation batch",
                found: b.format_version,
            });
        }
        Ok(b)
    }
}

/// Orders clusters by effectiveness (descending, ties by id), keeps the top
/// `config.top_k` and packages them for review.
pub fn rank_and_export(clusters: &[Cluster], config: &MiningConfig) -> AnnotationBatch {
    let mut ranked: Vec<&Cluster> = clusters.iter().collect();
    ranked.sort_by(|a, b| {
        b.effectiveness
            .total_cmp(&a.effectiveness)
            .then_with(|| a.id.cmp(&b.id))
    });
    ranked.truncate(config.top_k);

    let exported: Vec<ExportedCluster> = ranked
        .iter()
        .enumerate()
        .map(|(rank, c)| {
            let mut members: Vec<SampleQuery> = c
                .members
                .iter()
                .map(|m| SampleQuery {
                    id: m.query.id.clone(),
                    text: m.query.text.clone(),
                    weight: m.weight,
                    distance: m.distance_to_centroid,
                })
                .collect();
            members.sort_by(|a, b| {
                a.distance
                    .total_cmp(&b.distance)
                    .then_with(|| a.text.cmp(&b.text))
                    .then_with(|| a.id.cmp(&b.id))
            });
            ExportedCluster {
                cluster_id: c.id,
                rank: rank + 1,
                effectiveness: c.effectiveness,
                dc_min: c.dc_min,
                size: c.members.len(),
                distinct_queries: c.distinct_queries(),
                total_weight: c.total_weight(),
                samples: members.iter().take(SAMPLES_PER_CLUSTER).cloned().collect(),
                members,
            }
        })
        .collect();

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&(config, &exported)).expect("serializable batch"));
    let batch_id = hex::encode(&hasher.finalize()[..8]);
    AnnotationBatch {
        format: BATCH_FORMAT.into(),
        format_version: FORMAT_VERSION,
        batch_id,
        mode: config.mode,
        config: config.clone(),
        total_clusters: clusters.len(),
        clusters: exported,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AnnotationAction {
    Choose { intent_name: String },
    Reject { reason: String },
    Merge { target: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDecision {
    pub cluster_id: u32,
    #[serde(flatten)]
    pub action: AnnotationAction,
}

impl AnnotationDecision {
    pub fn choose(cluster_id: u32, name: impl Into<String>) -> Self {
        Self {
            cluster_id,
            action: AnnotationAction::Choose {
                intent_name: name.into(),
            },
        }
    }

    pub fn reject(cluster_id: u32, reason: impl Into<String>) -> Self {
        Self {
            cluster_id,
            action: AnnotationAction::Reject {
                reason: reason.into(),
            },
        }
    }

    pub fn merge(cluster_id: u32, target: u32) -> Self {
        Self {
            cluster_id,
            action: AnnotationAction::Merge { target },
        }
    }
}

/// A decisions file: the reviewer's record for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSet {
    pub format: String,
    pub format_version: u32,
    pub batch_id: String,
    pub decisions: Vec<AnnotationDecision>,
}

impl DecisionSet {
    pub fn new(batch_id: impl Into<String>, decisions: Vec<AnnotationDecision>) -> Self {
        Self {
            format: DECISIONS_FORMAT.into(),
            format_version: FORMAT_VERSION,
            batch_id: batch_id.into(),
            decisions,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text)?;
        if d.format != DECISIONS_FORMAT {
            return Err(Error::parse("decisions", format!("unexpected format `{}`", d.format)));
        }
        if d.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "decisions",
                found: d.format_version,
            });
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("clusters without a decision: {0:?}")]
    Undecided(Vec<u32>),
    #[error("cluster {0} is not in the batch")]
    UnknownCluster(u32),
    #[error("cluster {0} has more than one decision")]
    Conflict(u32),
    #[error("cluster {cluster} merges into {target}, which is not chosen")]
    MergeTargetNotChosen { cluster: u32, target: u32 },
    #[error("cluster {0} is rejected without a reason")]
    MissingReason(u32),
    #[error("cluster {0} is chosen with an invalid intent name")]
    InvalidName(u32),
    #[error("intent name `{0}` is chosen for more than one cluster")]
    DuplicateName(String),
    #[error("decisions are for batch {found}, not {expected}")]
    BatchMismatch { expected: String, found: String },
}

/// Validates a single decision against the batch and the decisions recorded
/// so far. Used for incremental recording; [`apply_annotations`] re-checks
/// everything.
pub fn check_decision(
    batch: &AnnotationBatch,
    recorded: &[AnnotationDecision],
    decision: &AnnotationDecision,
) -> std::result::Result<(), AnnotationError> {
    let id = decision.cluster_id;
    if batch.cluster(id).is_none() {
        return Err(AnnotationError::UnknownCluster(id));
    }
    if let Some(prev) = recorded.iter().find(|d| d.cluster_id == id) {
        if prev != decision {
            return Err(AnnotationError::Conflict(id));
        }
    }
    if !matches!(decision.action, AnnotationAction::Choose { .. }) {
        let merger = recorded
            .iter()
            .find(|d| d.cluster_id != id && matches!(d.action, AnnotationAction::Merge { target } if target == id));
        if let Some(m) = merger {
            return Err(AnnotationError::MergeTargetNotChosen {
                cluster: m.cluster_id,
                target: id,
            });
        }
    }
    match &decision.action {
        AnnotationAction::Choose { intent_name } => {
            if !valid_name(intent_name) {
                return Err(AnnotationError::InvalidName(id));
            }
            let taken = recorded.iter().any(|d| {
                d.cluster_id != id
                    && matches!(&d.action, AnnotationAction::Choose { intent_name: n } if n == intent_name)
            });
            if taken {
                return Err(AnnotationError::DuplicateName(intent_name.clone()));
            }
        }
        AnnotationAction::Reject { reason } => {
            if reason.trim().is_empty() {
                return Err(AnnotationError::MissingReason(id));
            }
        }
        AnnotationAction::Merge { target } => {
            if batch.cluster(*target).is_none() {
                return Err(AnnotationError::UnknownCluster(*target));
            }
            // A merge target must be chosen. It may be decided later, but
            // if it already has a decision it has to be Choose.
            let target_decision = recorded.iter().find(|d| d.cluster_id == *target);
            let ok = *target != id
                && target_decision.is_none_or(|d| matches!(d.action, AnnotationAction::Choose { .. }));
            if !ok {
                return Err(AnnotationError::MergeTargetNotChosen {
                    cluster: id,
                    target: *target,
                });
            }
        }
    }
    Ok(())
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenRecord {
    pub cluster_id: u32,
    pub intent_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub cluster_id: u32,
    pub target: u32,
    pub intent_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub cluster_id: u32,
    pub reason: String,
}

/// What happened to every cluster of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAudit {
    pub batch_id: String,
    pub mode: MiningMode,
    pub chosen: Vec<ChosenRecord>,
    pub merged: Vec<MergedRecord>,
    pub rejected: Vec<RejectedRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationOutcome {
    pub intents: Vec<IntentDefinition>,
    pub audit: AnnotationAudit,
}

/// [`apply_annotations`] for a decisions file, checking it belongs to the
/// batch.
pub fn apply_decision_set(
    batch: &AnnotationBatch,
    set: &DecisionSet,
) -> std::result::Result<AnnotationOutcome, AnnotationError> {
    if set.batch_id != batch.batch_id {
        return Err(AnnotationError::BatchMismatch {
            expected: batch.batch_id.clone(),
            found: set.batch_id.clone(),
        });
    }
    apply_annotations(batch, &set.decisions)
}

/// Turns a fully decided batch into intents. Chosen clusters become
/// intents, merged clusters contribute their members to the target's
/// curated queries, rejected clusters only leave an audit entry.
pub fn apply_annotations(
    batch: &AnnotationBatch,
    decisions: &[AnnotationDecision],
) -> std::result::Result<AnnotationOutcome, AnnotationError> {
    let mut by_cluster: BTreeMap<u32, &AnnotationDecision> = BTreeMap::new();
    for d in decisions {
        if batch.cluster(d.cluster_id).is_none() {
            return Err(AnnotationError::UnknownCluster(d.cluster_id));
        }
        if by_cluster.insert(d.cluster_id, d).is_some() {
            return Err(AnnotationError::Conflict(d.cluster_id));
        }
    }
    let undecided: Vec<u32> = batch
        .clusters
        .iter()
        .map(|c| c.cluster_id)
        .filter(|id| !by_cluster.contains_key(id))
        .collect();
    if !undecided.is_empty() {
        return Err(AnnotationError::Undecided(undecided));
    }
    let all: Vec<AnnotationDecision> = by_cluster.values().map(|d| (*d).clone()).collect();
    for d in &all {
        let others: Vec<AnnotationDecision> =
            all.iter().filter(|o| o.cluster_id != d.cluster_id).cloned().collect();
        check_decision(batch, &others, d)?;
    }

    let kind = batch.mode.intent_kind();
    let mut intents: BTreeMap<u32, IntentDefinition> = BTreeMap::new();
    let mut audit = AnnotationAudit {
        batch_id: batch.batch_id.clone(),
        mode: batch.mode,
        chosen: Vec::new(),
        merged: Vec::new(),
        rejected: Vec::new(),
    };
    let members = |id: u32| -> Vec<CuratedQuery> {
        batch
            .cluster(id)
            .map(|c| {
                c.members
                    .iter()
                    .map(|m| CuratedQuery {
                        text: m.text.clone(),
                        weight: m.weight,
                    })
                    .collect()
            })
            .unwrap_or_default()
    };

    for (&id, d) in &by_cluster {
        match &d.action {
            AnnotationAction::Choose { intent_name } => {
                let mut intent = IntentDefinition::new(intent_name.clone(), kind);
                intent.curated_queries = members(id);
                intent.provenance = Provenance {
                    batch_id: Some(batch.batch_id.clone()),
                    clusters: vec![id],
                    note: None,
                };
                audit.chosen.push(ChosenRecord {
                    cluster_id: id,
                    intent_id: intent_name.clone(),
                });
                intents.insert(id, intent);
            }
            AnnotationAction::Reject { reason } => audit.rejected.push(RejectedRecord {
                cluster_id: id,
                reason: reason.clone(),
            }),
            AnnotationAction::Merge { .. } => {}
        }
    }
    for (&id, d) in &by_cluster {
        if let AnnotationAction::Merge { target } = d.action {
            let intent = intents
                .get_mut(&target)
                .ok_or(AnnotationError::MergeTargetNotChosen { cluster: id, target })?;
            intent.curated_queries.extend(members(id));
            intent.provenance.clusters.push(id);
            audit.merged.push(MergedRecord {
                cluster_id: id,
                target,
                intent_id: intent.id.clone(),
            });
        }
    }

    let mut intents: Vec<IntentDefinition> = intents.into_values().collect();
    intents.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(AnnotationOutcome { intents, audit })
}
