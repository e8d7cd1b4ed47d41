//! Combines specific matches, the generic distribution and the safety
//! signals into one ranked answer plus the `safe_for_autogeneration` gate.
//!
//! Rules run in configured order:
//!
//! * `R1` — generic class probability above a threshold marks the query
//!   unsafe (default class `criticism_generic`, `> 0.5`);
//! * `R2` — fuzzy specific matches are dropped when a generic class is
//!   likely (default `criticism_response`, `>= 0.5`);
//! * `R3` — a moderation score at or above a threshold marks the query
//!   unsafe (`>= 0.8`).
//!
//! Ranking then keeps surviving specific predictions first and appends
//! generic classes above a floor, scaled linearly below the weakest
//! specific score. `R4` is recorded when that rescaling happens.

use serde::{Deserialize, Serialize};

use crate::chat_domain::ChatDomainScore;
use crate::error::{Error, Result};
use crate::generic::GenericDistribution;
use crate::intent::{sort_predictions, IntentPrediction, MatchType};
use crate::moderation::ModerationSignal;

pub const RESCALE_RULE: &str = "R4";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", deny_unknown_fields)]
pub enum Rule {
    /// Unsafe when `P(class) > threshold`.
    R1 { class: String, threshold: f64 },
    /// Drop fuzzy specific matches when `P(class) >= threshold`.
    R2 { class: String, threshold: f64 },
    /// Unsafe when `max(adult, offensive) >= threshold`.
    R3 { threshold: f64 },
}

impl Rule {
    pub fn id(&self) -> &'static str {
        match self {
            Rule::R1 { .. } => "R1",
            Rule::R2 { .. } => "R2",
            Rule::R3 { .. } => "R3",
        }
    }

    fn threshold(&self) -> f64 {
        match self {
            Rule::R1 { threshold, .. } | Rule::R2 { threshold, .. } | Rule::R3 { threshold } => {
                *threshold
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesConfig {
    pub rules: Vec<Rule>,
    /// Generic classes at or below this probability are not listed.
    pub generic_floor: f64,
    /// Generic scores are kept below `scale_gap * s_min`.
    pub scale_gap: f64,
}

impl Default for RulesConfig {
    fn default() -> Self {
        Self {
            rules: vec![
                Rule::R1 {
                    class: "criticism_generic".into(),
                    threshold: 0.5,
                },
                Rule::R2 {
                    class: "criticism_response".into(),
                    threshold: 0.5,
                },
                Rule::R3 { threshold: 0.8 },
            ],
            generic_floor: 0.2,
            scale_gap: 0.99,
        }
    }
}

impl RulesConfig {
    pub fn validate(&self) -> Result<()> {
        for r in &self.rules {
            if !(0.0..=1.0).contains(&r.threshold()) {
                return Err(Error::InvalidInput(format!(
                    "rule {} threshold {} is outside [0, 1]",
                    r.id(),
                    r.threshold()
                )));
            }
        }
        if !(0.0..1.0).contains(&self.generic_floor) {
            return Err(Error::InvalidInput(format!(
                "generic_floor {} is outside [0, 1)",
                self.generic_floor
            )));
        }
        if !(self.scale_gap > 0.0 && self.scale_gap < 1.0) {
            return Err(Error::InvalidInput(format!(
                "scale_gap {} is outside (0, 1)",
                self.scale_gap
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::parse("rules config", e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("rules config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedResult {
    pub intents: Vec<IntentPrediction>,
    pub safe_for_autogeneration: bool,
    pub chat_probability: f64,
    pub applied_rules: Vec<String>,
}

pub fn aggregate(
    specific: &[IntentPrediction],
    generic: &GenericDistribution,
    moderation: &ModerationSignal,
    chat: &ChatDomainScore,
    config: &RulesConfig,
) -> AggregatedResult {
    let mut safe = true;
    let mut applied: Vec<String> = Vec::new();
    let mut surviving: Vec<IntentPrediction> = specific.to_vec();

    for rule in &config.rules {
        let fired = match rule {
            Rule::R1 { class, threshold } => {
                let fired = generic.probability(class) > *threshold;
                if fired {
                    safe = false;
                }
                fired
            }
            Rule::R2 { class, threshold } => {
                let before = surviving.len();
                if generic.probability(class) >= *threshold {
                    surviving.retain(|p| p.match_type != MatchType::Fuzzy);
                }
                surviving.len() < before
            }
            Rule::R3 { threshold } => {
                let fired = moderation.max_score() >= *threshold;
                if fired {
                    safe = false;
                }
                fired
            }
        };
        if fired {
            applied.push(rule.id().to_owned());
        }
    }

    sort_predictions(&mut surviving);
    let s_min = surviving.iter().map(|p| p.score).reduce(f64::min);
    let mut generic_preds: Vec<IntentPrediction> = generic
        .iter()
        .filter(|(_, p)| *p > config.generic_floor)
        .map(|(c, p)| IntentPrediction::new(c, p, MatchType::GenericModel))
        .collect();
    sort_predictions(&mut generic_preds);
    if let Some(s_min) = s_min {
        if !generic_preds.is_empty() {
            for g in &mut generic_preds {
                g.score *= s_min * config.scale_gap;
            }
            applied.push(RESCALE_RULE.to_owned());
        }
    }

    surviving.extend(generic_preds);
    AggregatedResult {
        intents: surviving,
        safe_for_autogeneration: safe,
        chat_probability: chat.probability,
        applied_rules: applied,
    }
}
