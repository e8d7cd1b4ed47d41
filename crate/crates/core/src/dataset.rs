//! Tab-separated data files exchanged between the CLI commands.
//!
//! | file            | columns                                        |
//! |-----------------|------------------------------------------------|
//! | domain training | `text source label`                            |
//! | query log       | `id text weight`                               |
//! | query labels    | `id family kind`                               |
//! | generic data    | `text class`                                   |
//! | test set        | `text weight chat intent intent_kind`          |
//!
//! Every file starts with a header row. In domain training files `label` is
//! `positive` / `negative` for augmented rows and four comma-separated
//! judgments (`CHAT,CHAT,TASK,JUNK`) for judged rows.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::chat_domain::{build_training_set, ExampleSource, JudgedQuery, Judgment, TrainingExample};
use crate::error::{Error, Result};
use crate::intent::IntentKind;
use crate::text::RawQuery;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(input)
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(out)
}

fn read_rows<T: DeserializeOwned, R: Read>(input: R, what: &str) -> Result<Vec<T>> {
    reader(input)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(format!("{what} row {}", i + 2), e)))
        .collect()
}

fn write_rows<T: Serialize, W: Write>(out: W, rows: &[T], what: &str) -> Result<()> {
    let mut w = writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse(what, e))?;
    }
    w.flush().map_err(|e| Error::parse(what, e))
}

fn check_text(text: &str, what: &str) -> Result<()> {
    if text.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidInput(format!("{what}: text may not contain tabs or newlines")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub text: String,
    pub source: ExampleSource,
    pub label: String,
}

impl DomainRecord {
    pub fn judged(text: impl Into<String>, judgments: &[Judgment]) -> Self {
        let label = judgments
            .iter()
            .map(|j| serde_json::to_value(j).expect("judgment").as_str().expect("string").to_owned())
            .collect::<Vec<_>>()
            .join(",");
        Self {
            text: text.into(),
            source: ExampleSource::Judged,
            label,
        }
    }

    pub fn augmented(text: impl Into<String>, positive: bool) -> Self {
        Self {
            text: text.into(),
            source: if positive {
                ExampleSource::AugmentedPositive
            } else {
                ExampleSource::AugmentedNegative
            },
            label: if positive { "positive" } else { "negative" }.into(),
        }
    }
}

pub fn read_domain_records<R: Read>(input: R) -> Result<Vec<DomainRecord>> {
    read_rows(input, "domain data")
}

pub fn write_domain_records<W: Write>(out: W, rows: &[DomainRecord]) -> Result<()> {
    for r in rows {
        check_text(&r.text, "domain data")?;
    }
    write_rows(out, rows, "domain data")
}

/// Consensus-labels judged rows and weights everything.
pub fn domain_training_set(records: &[DomainRecord]) -> Result<Vec<TrainingExample>> {
    let mut judged = Vec::new();
    let mut negatives = Vec::new();
    let mut positives = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let q = RawQuery::new(format!("d{i}"), r.text.clone(), 1.0)?;
        match (r.source, r.label.as_str()) {
            (ExampleSource::Judged, label) => {
                let js = label
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<Vec<Judgment>>>()?;
                judged.push(JudgedQuery::new(q, js)?);
            }
            (ExampleSource::AugmentedNegative, "negative") => negatives.push(q),
            (ExampleSource::AugmentedPositive, "positive") => positives.push(q),
            (source, label) => {
                return Err(Error::parse(
                    format!("domain data row {}", i + 2),
                    format!("label `{label}` does not fit source {source:?}"),
                ))
            }
        }
    }
    Ok(build_training_set(&judged, &negatives, &positives))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogRow {
    id: String,
    text: String,
    weight: f64,
}

pub fn read_query_log<R: Read>(input: R) -> Result<Vec<RawQuery>> {
    read_rows::<LogRow, _>(input, "query log")?
        .into_iter()
        .map(|r| RawQuery::new(r.id, r.text, r.weight))
        .collect()
}

pub fn write_query_log<W: Write>(out: W, queries: &[RawQuery]) -> Result<()> {
    let rows: Vec<LogRow> = queries
        .iter()
        .map(|q| {
            check_text(&q.text, "query log")?;
            Ok(LogRow {
                id: q.id.clone(),
                text: q.text.clone(),
                weight: q.weight,
            })
        })
        .collect::<Result<_>>()?;
    write_rows(out, &rows, "query log")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Specific,
    Generic,
    Task,
    Junk,
}

impl FamilyKind {
    pub fn is_chat(self) -> bool {
        matches!(self, FamilyKind::Specific | FamilyKind::Generic)
    }

    pub fn intent_kind(self) -> Option<IntentKind> {
        match self {
            FamilyKind::Specific => Some(IntentKind::Specific),
            FamilyKind::Generic => Some(IntentKind::Generic),
            _ => None,
        }
    }
}

/// Ground truth for a query-log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLabel {
    pub id: String,
    pub family: String,
    pub kind: FamilyKind,
}

pub fn read_query_labels<R: Read>(input: R) -> Result<Vec<QueryLabel>> {
    read_rows(input, "query labels")
}

pub fn write_query_labels<W: Write>(out: W, rows: &[QueryLabel]) -> Result<()> {
    write_rows(out, rows, "query labels")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericExample {
    pub text: String,
    pub class: String,
}

pub fn read_generic_examples<R: Read>(input: R) -> Result<Vec<GenericExample>> {
    read_rows(input, "generic data")
}

pub fn write_generic_examples<W: Write>(out: W, rows: &[GenericExample]) -> Result<()> {
    for r in rows {
        check_text(&r.text, "generic data")?;
    }
    write_rows(out, rows, "generic data")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub text: String,
    /// Impressions.
    pub weight: f64,
    /// 1 for chit-chat, 0 otherwise.
    pub chat: u8,
    /// Expected intent id; empty when none.
    pub intent: String,
    pub intent_kind: Option<IntentKind>,
}

impl TestRecord {
    pub fn is_chat(&self) -> bool {
        self.chat == 1
    }

    pub fn expected_intent(&self) -> Option<&str> {
        (!self.intent.is_empty()).then_some(self.intent.as_str())
    }
}

pub fn read_test_records<R: Read>(input: R) -> Result<Vec<TestRecord>> {
    let rows: Vec<TestRecord> = read_rows(input, "test set")?;
    for (i, r) in rows.iter().enumerate() {
        if r.chat > 1 || !(r.weight.is_finite() && r.weight >= 0.0) {
            return Err(Error::parse(format!("test set row {}", i + 2), "chat must be 0/1 and weight non-negative"));
        }
    }
    Ok(rows)
}

pub fn write_test_records<W: Write>(out: W, rows: &[TestRecord]) -> Result<()> {
    for r in rows {
        check_text(&r.text, "test set")?;
    }
    write_rows(out, rows, "test set")
}
