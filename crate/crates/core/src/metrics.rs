//! Evaluation metrics over a labelled test set, impression-weighted and
//! per distinct query.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::TestRecord;
use crate::intent::MatchType;
use crate::pipeline::UnderstandResponse;

/// Chat-domain probability at or above which a query counts as chit-chat.
pub const CHAT_THRESHOLD: f64 = 0.5;

/// Weighted confusion counts for one binary decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool, weight: f64) {
        match (predicted, actual) {
            (true, true) => self.tp += weight,
            (true, false) => self.fp += weight,
            (false, true) => self.fn_ += weight,
            (false, false) => self.tn += weight,
        }
    }

    pub fn scores(&self) -> Prf {
        prf(self.tp, self.tp + self.fp, self.tp + self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision `correct / predicted`, recall `correct / actual`; an empty
/// denominator gives 0.
pub fn prf(correct: f64, predicted: f64, actual: f64) -> Prf {
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let precision = ratio(correct, predicted);
    let recall = ratio(correct, actual);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf {
        precision,
        recall,
        f1,
    }
}

/// One row of the component table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub component: String,
    /// Queries whose top intent came from this component.
    pub queries: usize,
    pub weighted_precision: f64,
    pub unweighted_precision: f64,
    /// Share of chit-chat test traffic the component answered.
    pub weighted_coverage: f64,
    pub unweighted_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    pub chat_weighted: Prf,
    pub chat_unweighted: Prf,
    /// Top intent against the expected intent.
    pub intent_weighted: Prf,
    pub intent_unweighted: Prf,
    /// Argmax of the generic model on queries labelled with a generic
    /// intent; `None` without such queries or without traces.
    pub generic_accuracy: Option<f64>,
    pub generic_queries: usize,
    pub components: Vec<ComponentRow>,
}

const COMPONENTS: [(MatchType, &str); 4] = [
    (MatchType::Exact, "specific/exact"),
    (MatchType::Pattern, "specific/pattern"),
    (MatchType::Fuzzy, "specific/fuzzy"),
    (MatchType::GenericModel, "generic"),
];

/// Scores `responses[i]` against `records[i]`. Generic accuracy needs
/// responses produced with a trace.
pub fn evaluate(records: &[TestRecord], responses: &[UnderstandResponse]) -> EvalReport {
    assert_eq!(records.len(), responses.len(), "one response per test record");
    let mut chat_w = Confusion::default();
    let mut chat_u = Confusion::default();
    let (mut correct_w, mut predicted_w, mut actual_w) = (0.0, 0.0, 0.0);
    let (mut correct_u, mut predicted_u, mut actual_u) = (0.0, 0.0, 0.0);
    let (mut generic_ok, mut generic_n, mut generic_traced) = (0usize, 0usize, 0usize);
    // Per component: (queries, correct, weight, correct weight).
    let mut comp = [(0usize, 0usize, 0.0f64, 0.0f64); COMPONENTS.len()];
    let (mut chat_total_w, mut chat_total_u) = (0.0, 0usize);

    for (rec, resp) in records.iter().zip(responses) {
        let w = rec.weight;
        let predicted_chat = resp.chat_probability >= CHAT_THRESHOLD;
        chat_w.add(predicted_chat, rec.is_chat(), w);
        chat_u.add(predicted_chat, rec.is_chat(), 1.0);
        if rec.is_chat() {
            chat_total_w += w;
            chat_total_u += 1;
        }

        let expected = rec.expected_intent();
        // Intents only count once the domain classifier calls the query chat.
        let top = resp.top_intent().filter(|_| predicted_chat);
        let correct = matches!((top, expected), (Some(t), Some(e)) if t.id == e);
        if top.is_some() {
            predicted_w += w;
            predicted_u += 1.0;
        }
        if expected.is_some() {
            actual_w += w;
            actual_u += 1.0;
        }
        if correct {
            correct_w += w;
            correct_u += 1.0;
        }
        if let Some(t) = top {
            let k = COMPONENTS.iter().position(|(m, _)| *m == t.match_type).expect("known match type");
            comp[k].0 += 1;
            comp[k].2 += w;
            if correct {
                comp[k].1 += 1;
                comp[k].3 += w;
            }
        }

        if rec.intent_kind == Some(crate::intent::IntentKind::Generic) {
            generic_n += 1;
            if let Some(trace) = &resp.trace {
                generic_traced += 1;
                let best = trace
                    .generic
                    .iter()
                    .fold(None::<(&String, f64)>, |b, (c, &p)| match b {
                        Some((_, bp)) if bp >= p => b,
                        _ => Some((c, p)),
                    });
                if best.is_some_and(|(c, _)| Some(c.as_str()) == expected) {
                    generic_ok += 1;
                }
            }
        }
    }

    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let components = COMPONENTS
        .iter()
        .zip(comp)
        .map(|((_, name), (n, ok, w, ok_w))| ComponentRow {
            component: name.to_string(),
            queries: n,
            weighted_precision: ratio(ok_w, w),
            unweighted_precision: ratio(ok as f64, n as f64),
            weighted_coverage: ratio(w, chat_total_w),
            unweighted_coverage: ratio(n as f64, chat_total_u as f64),
        })
        .collect();

    EvalReport {
        queries: records.len(),
        chat_weighted: chat_w.scores(),
        chat_unweighted: chat_u.scores(),
        intent_weighted: prf(correct_w, predicted_w, actual_w),
        intent_unweighted: prf(correct_u, predicted_u, actual_u),
        generic_accuracy: (generic_n > 0 && generic_traced == generic_n)
            .then(|| generic_ok as f64 / generic_n as f64),
        generic_queries: generic_n,
        components,
    }
}

impl EvalReport {
    /// Plain-text tables for terminals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "queries: {}", self.queries);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<22} {:>10} {:>10} {:>10}", "measure", "precision", "recall", "f1");
        for (name, p) in [
            ("chat domain weighted", self.chat_weighted),
            ("chat domain unweighted", self.chat_unweighted),
            ("intent weighted", self.intent_weighted),
            ("intent unweighted", self.intent_unweighted),
        ] {
            let _ = writeln!(s, "{name:<22} {:>10.4} {:>10.4} {:>10.4}", p.precision, p.recall, p.f1);
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<18} {:>8} {:>12} {:>12} {:>12} {:>12}",
            "component", "queries", "w.precision", "u.precision", "w.coverage", "u.coverage"
        );
        for r in &self.components {
            let _ = writeln!(
                s,
                "{:<18} {:>8} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
                r.component,
                r.queries,
                r.weighted_precision,
                r.unweighted_precision,
                r.weighted_coverage,
                r.unweighted_coverage
            );
        }
        let _ = writeln!(s);
        match self.generic_accuracy {
            Some(a) => {
                let _ = writeln!(s, "generic accuracy: {a:.4} over {} queries", self.generic_queries);
            }
            None => {
                let _ = writeln!(s, "generic accuracy: n/a");
            }
        }
        s
    }
}
