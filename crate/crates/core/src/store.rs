//! Versioned on-disk intent store.
//!
//! ```text
//! <root>/
//!   latest                  version number of the newest snapshot
//!   <version>/intents.doc   intents, word lists and content hash (JSON)
//!   <version>/embeddings.bin curated-query embedding cache
//!   <version>/audit.doc     annotation audit records (JSON)
//!   batches/<id>.batch.doc  exported annotation batches
//!   batches/<id>.decisions.doc
//! ```
//!
//! Snapshot directories are written under a temporary name and renamed into
//! place, and `latest` is replaced by rename, so readers only ever see
//! complete snapshots. One writer at a time is assumed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analyzer::Analyzer;
use crate::embeddings::Embedding;
use crate::error::{Error, Result};
use crate::intent::{IntentDefinition, IntentKind};
use crate::mining::{AnnotationAudit, AnnotationBatch, AnnotationOutcome, DecisionSet};
use crate::specific::{compile_pattern, WordLists, DEFAULT_FUZZY_THRESHOLD};

const INTENTS_FORMAT: &str = "chitchat-intent-store";
const FORMAT_VERSION: u32 = 1;
const EMBEDDINGS_MAGIC: &[u8; 8] = b"CCEMB\x00\x01\x00";
const INTENTS_FILE: &str = "intents.doc";
const EMBEDDINGS_FILE: &str = "embeddings.bin";
const AUDIT_FILE: &str = "audit.doc";
const LATEST_FILE: &str = "latest";
const BATCHES_DIR: &str = "batches";

/// The content of a snapshot before it gets a version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreContent {
    pub intents: Vec<IntentDefinition>,
    #[serde(default)]
    pub lists: WordLists,
    #[serde(default = "default_threshold")]
    pub fuzzy_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_FUZZY_THRESHOLD
}

impl Default for StoreContent {
    fn default() -> Self {
        Self {
            intents: Vec::new(),
            lists: WordLists::new(),
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
        }
    }
}

impl StoreContent {
    /// Sorts intents by id so equal content serializes identically.
    pub fn canonicalize(&mut self) {
        self.intents.sort_by(|a, b| a.id.cmp(&b.id));
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for i in &self.intents {
            if i.id.trim().is_empty() {
                return Err(Error::InvalidInput("intent with empty id".into()));
            }
            if !seen.insert(&i.id) {
                return Err(Error::InvalidInput(format!("duplicate intent id `{}`", i.id)));
            }
            if i.kind == IntentKind::Specific && i.curated_queries.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "specific intent `{}` has no curated queries",
                    i.id
                )));
            }
            for p in &i.patterns {
                compile_pattern(&i.id, p, &self.lists)?;
            }
        }
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(Error::InvalidInput(format!(
                "fuzzy threshold {} is outside [0, 1]",
                self.fuzzy_threshold
            )));
        }
        Ok(())
    }

    /// SHA-256 over the canonical serialization of intents, lists and
    /// threshold.
    pub fn content_hash(&self) -> String {
        let mut sorted: Vec<&IntentDefinition> = self.intents.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let bytes = serde_json::to_vec(&(&sorted, &self.lists, self.fuzzy_threshold))
            .expect("store content serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Adds annotated intents. An intent whose id already exists gains
    /// the new curated queries, patterns and responses it lacks; its kind
    /// must match.
    pub fn merge_intents(&mut self, incoming: Vec<IntentDefinition>) -> Result<()> {
        for new in incoming {
            let Some(old) = self.intents.iter_mut().find(|i| i.id == new.id) else {
                self.intents.push(new);
                continue;
            };
            if old.kind != new.kind {
                return Err(Error::InvalidInput(format!(
                    "intent `{}` is {:?} in the store but {:?} in the annotation",
                    new.id, old.kind, new.kind
                )));
            }
            for q in new.curated_queries {
                if !old.curated_queries.iter().any(|c| c.text == q.text) {
                    old.curated_queries.push(q);
                }
            }
            for p in new.patterns {
                if !old.patterns.contains(&p) {
                    old.patterns.push(p);
                }
            }
            for r in new.responses {
                if !old.responses.contains(&r) {
                    old.responses.push(r);
                }
            }
            if new.provenance.batch_id.is_some() {
                old.provenance.batch_id = new.provenance.batch_id;
            }
            old.provenance.clusters.extend(new.provenance.clusters);
        }
        self.canonicalize();
        Ok(())
    }

    pub fn intent(&self, id: &str) -> Option<&IntentDefinition> {
        self.intents.iter().find(|i| i.id == id)
    }

    pub fn count(&self, kind: IntentKind) -> usize {
        self.intents.iter().filter(|i| i.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub format: String,
    pub format_version: u32,
    pub version: u64,
    pub parent_version: Option<u64>,
    pub created_at: String,
    pub content_hash: String,
    #[serde(flatten)]
    pub content: StoreContent,
}

impl StoreSnapshot {
    pub fn intents(&self) -> &[IntentDefinition] {
        &self.content.intents
    }

    fn to_doc(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    fn from_doc(bytes: &[u8], path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_slice(bytes)?;
        if s.format != INTENTS_FORMAT {
            return Err(Error::parse(path.display().to_string(), format!("unexpected format `{}`", s.format)));
        }
        if s.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "intent store",
                found: s.format_version,
            });
        }
        let actual = s.content.content_hash();
        if actual != s.content_hash {
            return Err(Error::Corrupt {
                path: path.to_owned(),
                expected: s.content_hash,
                actual,
            });
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreDiff {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub changed: Vec<String>,
}

impl StoreDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Self {
            added: self.removed.clone(),
            removed: self.added.clone(),
            changed: self.changed.clone(),
        }
    }
}

/// Intent-level difference from `a` to `b`.
pub fn diff(a: &StoreContent, b: &StoreContent) -> StoreDiff {
    let index = |c: &StoreContent| -> BTreeMap<String, IntentDefinition> {
        c.intents.iter().map(|i| (i.id.clone(), i.clone())).collect()
    };
    let (ia, ib) = (index(a), index(b));
    StoreDiff {
        added: ib.keys().filter(|k| !ia.contains_key(*k)).cloned().collect(),
        removed: ia.keys().filter(|k| !ib.contains_key(*k)).cloned().collect(),
        changed: ia
            .iter()
            .filter(|(k, v)| ib.get(*k).is_some_and(|w| w != *v))
            .map(|(k, _)| k.clone())
            .collect(),
    }
}

/// Curated-query embeddings, one vector list per intent in snapshot order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    pub content_hash: String,
    pub provider: String,
    pub dim: usize,
    pub embeddings: Vec<Vec<Embedding>>,
}

impl EmbeddingCache {
    pub fn compute(content: &StoreContent, analyzer: &Analyzer) -> Self {
        let provider = analyzer.semantic_provider();
        Self {
            content_hash: content.content_hash(),
            provider: provider.name().to_owned(),
            dim: provider.dim(),
            embeddings: content
                .intents
                .iter()
                .map(|i| {
                    i.curated_queries
                        .iter()
                        .map(|c| analyzer.semantic(&analyzer.normalize(&c.text)))
                        .collect()
                })
                .collect(),
        }
    }

    /// Whether the cache was built for this content and provider.
    pub fn matches(&self, content: &StoreContent, analyzer: &Analyzer) -> bool {
        let p = analyzer.semantic_provider();
        self.provider == p.name()
            && self.dim == p.dim()
            && self.content_hash == content.content_hash()
            && self.embeddings.len() == content.intents.len()
            && self
                .embeddings
                .iter()
                .zip(&content.intents)
                .all(|(e, i)| e.len() == i.curated_queries.len())
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(EMBEDDINGS_MAGIC)?;
        for s in [&self.content_hash, &self.provider] {
            out.write_all(&(s.len() as u32).to_le_bytes())?;
            out.write_all(s.as_bytes())?;
        }
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.embeddings.len() as u32).to_le_bytes())?;
        for group in &self.embeddings {
            out.write_all(&(group.len() as u32).to_le_bytes())?;
            for e in group {
                for v in e.values() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::parse("embedding cache", m);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != EMBEDDINGS_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_ = |input: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u32::from_le_bytes(b))
        };
        let string = |input: &mut R, len: u32| -> Result<String> {
            let mut b = vec![0u8; len as usize];
            input.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            String::from_utf8(b).map_err(|_| bad("invalid utf-8"))
        };
        let n = u32_(&mut input)?;
        let content_hash = string(&mut input, n)?;
        let n = u32_(&mut input)?;
        let provider = string(&mut input, n)?;
        let dim = u32_(&mut input)? as usize;
        let groups = u32_(&mut input)?;
        let mut embeddings = Vec::with_capacity(groups as usize);
        let mut buf = vec![0u8; dim * 8];
        for _ in 0..groups {
            let count = u32_(&mut input)?;
            let mut group = Vec::with_capacity(count as usize);
            for _ in 0..count {
                input.read_exact(&mut buf).map_err(|_| bad("truncated"))?;
                let values = buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                group.push(Embedding::new(values)?);
            }
            embeddings.push(group);
        }
        Ok(Self {
            content_hash,
            provider,
            dim,
            embeddings,
        })
    }
}

#[derive(Debug, Clone)]
pub struct IntentStore {
    root: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` next to `path` and renames over it.
fn replace_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl IntentStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Snapshot versions present on disk, ascending.
    pub fn versions(&self) -> Result<Vec<u64>> {
        let mut out: Vec<u64> = fs::read_dir(&self.root)
            .map_err(|e| Error::io(&self.root, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(INTENTS_FILE).is_file())
            .filter_map(|e| e.file_name().to_str()?.parse().ok())
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    pub fn latest_version(&self) -> Result<Option<u64>> {
        let path = self.root.join(LATEST_FILE);
        match fs::read_to_string(&path) {
            Ok(s) => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(path.display().to_string(), "not a version number")),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn dir(&self, version: u64) -> PathBuf {
        self.root.join(version.to_string())
    }

    /// Writes a new snapshot and points `latest` at it. The embedding cache
    /// is written when an analyzer is given.
    pub fn save(
        &self,
        mut content: StoreContent,
        audit: &[AnnotationAudit],
        analyzer: Option<&Analyzer>,
    ) -> Result<StoreSnapshot> {
        content.validate()?;
        content.canonicalize();
        let parent_version = self.latest_version()?;
        let version = self.versions()?.last().copied().unwrap_or(0).max(parent_version.unwrap_or(0)) + 1;
        let snapshot = StoreSnapshot {
            format: INTENTS_FORMAT.into(),
            format_version: FORMAT_VERSION,
            version,
            parent_version,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            content_hash: content.content_hash(),
            content,
        };

        let tmp = self.root.join(format!(".tmp-{version}-{}", std::process::id()));
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        write_file(&tmp.join(INTENTS_FILE), &snapshot.to_doc()?)?;
        let mut audit_doc = serde_json::to_vec_pretty(audit)?;
        audit_doc.push(b'\n');
        write_file(&tmp.join(AUDIT_FILE), &audit_doc)?;
        if let Some(a) = analyzer {
            let mut buf = Vec::new();
            EmbeddingCache::compute(&snapshot.content, a)
                .write(&mut buf)
                .map_err(|e| Error::io(tmp.join(EMBEDDINGS_FILE), e))?;
            write_file(&tmp.join(EMBEDDINGS_FILE), &buf)?;
        }
        let dest = self.dir(version);
        fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        replace_file(&self.root.join(LATEST_FILE), format!("{version}\n").as_bytes())?;
        Ok(snapshot)
    }

    /// Merges annotated intents into the newest snapshot (or an empty
    /// store) and saves the result with its audit record.
    pub fn apply_outcome(
        &self,
        outcome: AnnotationOutcome,
        analyzer: Option<&Analyzer>,
    ) -> Result<(StoreSnapshot, StoreDiff)> {
        let base = match self.load_latest() {
            Ok(s) => s.content,
            Err(Error::EmptyStore) => StoreContent::default(),
            Err(e) => return Err(e),
        };
        let mut next = base.clone();
        next.merge_intents(outcome.intents)?;
        let snapshot = self.save(next, &[outcome.audit], analyzer)?;
        let d = diff(&base, &snapshot.content);
        Ok((snapshot, d))
    }

    pub fn load(&self, version: u64) -> Result<StoreSnapshot> {
        let path = self.dir(version).join(INTENTS_FILE);
        if !path.is_file() {
            return Err(Error::VersionNotFound(version));
        }
        StoreSnapshot::from_doc(&read_file(&path)?, &path)
    }

    pub fn load_latest(&self) -> Result<StoreSnapshot> {
        match self.latest_version()? {
            Some(v) => self.load(v),
            None => Err(Error::EmptyStore),
        }
    }

    pub fn audit(&self, version: u64) -> Result<Vec<AnnotationAudit>> {
        let path = self.dir(version).join(AUDIT_FILE);
        if !path.is_file() {
            return Err(Error::VersionNotFound(version));
        }
        Ok(serde_json::from_slice(&read_file(&path)?)?)
    }

    /// The cached embeddings for a snapshot if present and valid for
    /// `analyzer`; otherwise they are recomputed.
    pub fn embeddings(&self, snapshot: &StoreSnapshot, analyzer: &Analyzer) -> Vec<Vec<Embedding>> {
        let path = self.dir(snapshot.version).join(EMBEDDINGS_FILE);
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(cache) = EmbeddingCache::read(&bytes[..]) {
                if cache.matches(&snapshot.content, analyzer) {
                    return cache.embeddings;
                }
            }
            tracing::warn!(path = %path.display(), "embedding cache is stale, recomputing");
        }
        EmbeddingCache::compute(&snapshot.content, analyzer).embeddings
    }

    pub fn diff(&self, v1: u64, v2: u64) -> Result<StoreDiff> {
        Ok(diff(&self.load(v1)?.content, &self.load(v2)?.content))
    }

    fn batch_path(&self, batch_id: &str, kind: &str) -> Result<PathBuf> {
        if batch_id.is_empty() || !batch_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(Error::InvalidInput(format!("invalid batch id `{batch_id}`")));
        }
        Ok(self.root.join(BATCHES_DIR).join(format!("{batch_id}.{kind}.doc")))
    }

    pub fn save_batch(&self, batch: &AnnotationBatch) -> Result<()> {
        let path = self.batch_path(&batch.batch_id, "batch")?;
        let dir = self.root.join(BATCHES_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        replace_file(&path, batch.to_json()?.as_bytes())
    }

    pub fn load_batch(&self, batch_id: &str) -> Result<Option<AnnotationBatch>> {
        let path = self.batch_path(batch_id, "batch")?;
        if !path.is_file() {
            return Ok(None);
        }
        let text = String::from_utf8(read_file(&path)?)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        AnnotationBatch::from_json(&text).map(Some)
    }

    pub fn batch_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join(BATCHES_DIR);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                e.file_name()
                    .to_str()?
                    .strip_suffix(".batch.doc")
                    .map(str::to_owned)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn save_decisions(&self, set: &DecisionSet) -> Result<()> {
        let path = self.batch_path(&set.batch_id, "decisions")?;
        replace_file(&path, set.to_json()?.as_bytes())
    }

    /// Recorded decisions, or an empty set when none were saved yet.
    pub fn load_decisions(&self, batch_id: &str) -> Result<DecisionSet> {
        let path = self.batch_path(batch_id, "decisions")?;
        if !path.is_file() {
            return Ok(DecisionSet::new(batch_id, Vec::new()));
        }
        let text = String::from_utf8(read_file(&path)?)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        DecisionSet::from_json(&text)
    }
}
