//! Seeded synthetic corpus: template families of chit-chat, task,
//! information and junk queries, plus judged domain data, a labelled query
//! log for mining, generic training data, a held-out test set and a seed
//! intent store.
//!
//! Specific families are a few core phrases wrapped in stopword-only
//! prefixes and suffixes ("oh good morning to you"), so every variant
//! shares the core phrase's embedding while remaining a distinct query.
//! Generic families are templates with one slot; the fixed words hold a
//! family together. Every fourth slot value and every fifth wrapper pair is
//! reserved for the test set.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chat_domain::Judgment;
use crate::dataset::{
    self, DomainRecord, FamilyKind, GenericExample, QueryLabel, TestRecord,
};
use crate::error::{Error, Result};
use crate::intent::{CuratedQuery, IntentDefinition, IntentKind};
use crate::mining::{AnnotationBatch, AnnotationDecision, DecisionSet, MiningMode};
use crate::specific::{WordLists, DEFAULT_FUZZY_THRESHOLD};
use crate::store::StoreContent;
use crate::text::RawQuery;

pub const DOMAIN_FILE: &str = "domain_train.tsv";
pub const QUERIES_FILE: &str = "queries.tsv";
pub const LABELS_FILE: &str = "query_labels.tsv";
pub const GENERIC_FILE: &str = "generic_train.tsv";
pub const TESTSET_FILE: &str = "testset.tsv";
pub const SEED_STORE_FILE: &str = "seed_store.json";

const PREFIXES: &[&str] = &[
    "", "oh", "well", "hmm", "um", "uh", "ok", "okay", "so", "just", "oh well", "well um", "so um",
    "hmm well", "ok so",
];
const SUFFIXES: &[&str] = &[
    "", "too", "again", "then", "now", "to you", "please", "there", "to you too", "again please",
];
const ENDINGS: &[&str] = &["", "", "", "!", "?", "."];

struct SpecificFamily {
    id: &'static str,
    phrases: &'static [&'static str],
    patterns: &'static [&'static str],
}

const SPECIFIC: &[SpecificFamily] = &[
    SpecificFamily {
        id: "Greetings_GoodMorning",
        phrases: &["good morning", "morning"],
        patterns: &["good morning {bot_names}", "(?:a )?very good morning"],
    },
    SpecificFamily {
        id: "Greetings_GoodNight",
        phrases: &["good night", "night night"],
        patterns: &["good night {bot_names}"],
    },
    SpecificFamily {
        id: "Greetings_Hello",
        phrases: &["hello", "hi", "hey"],
        patterns: &["(?:hello|hi|hey) {bot_names}"],
    },
    SpecificFamily {
        id: "Farewell_Bye",
        phrases: &["bye", "goodbye", "see you later"],
        patterns: &["(?:bye|goodbye) {bot_names}"],
    },
    SpecificFamily {
        id: "Thanks",
        phrases: &["thank you", "thanks", "many thanks"],
        patterns: &["thanks? (?:you )?{bot_names}"],
    },
    SpecificFamily {
        id: "command_joke",
        phrases: &["tell me a joke", "make me laugh"],
        patterns: &["tell me (?:a|another) (?:funny )?joke"],
    },
    SpecificFamily {
        id: "Bot_Name",
        phrases: &["what is your name", "tell me your name"],
        patterns: &[],
    },
    SpecificFamily {
        id: "Bot_Age",
        phrases: &["how old are you", "what is your age"],
        patterns: &[],
    },
    SpecificFamily {
        id: "Love_You",
        phrases: &["i love you", "i adore you"],
        patterns: &["i (?:really )?love you {bot_names}"],
    },
    SpecificFamily {
        id: "Bot_Favorite_Color",
        phrases: &["what is your favorite color", "what's your favourite colour"],
        patterns: &[],
    },
];

const BOT_NAMES: &[&str] = &["cortana", "bot", "buddy", "assistant"];

/// A family of one-slot templates.
struct TemplateFamily {
    id: &'static str,
    kind: FamilyKind,
    templates: &'static [&'static str],
    values: &'static [&'static str],
}

const ACTS: &[&str] = &[
    "die", "quit", "give up", "disappear", "end it all", "stop trying", "run away", "drop out",
    "hurt myself", "vanish", "stop eating", "leave forever",
];
const THINGS: &[&str] = &[
    "joke", "answer", "reply", "response", "story", "pun", "riddle", "comeback", "poem", "fact",
    "song", "limerick",
];
const PRAISE: &[&str] = &[
    "best", "smartest", "nicest", "coolest", "funniest", "sweetest", "greatest", "kindest",
    "cutest", "brightest", "wisest", "loveliest",
];
const MOODS: &[&str] = &[
    "sad", "lonely", "gloomy", "tired", "bored", "anxious", "stressed", "upset", "blue", "low",
    "empty", "exhausted",
];
const ENTITIES: &[&str] = &[
    "human", "robot", "person", "machine", "computer", "program", "girl", "boy", "android",
    "alien", "ghost", "spy",
];
const TOPICS: &[&str] = &[
    "cats", "dogs", "pizza", "music", "football", "winter", "summer", "coffee", "movies", "books",
    "politics", "math",
];
const CITIES: &[&str] = &[
    "paris", "london", "seattle", "tokyo", "berlin", "madrid", "chicago", "boston", "delhi",
    "sydney", "toronto", "rome",
];
const TIMES: &[&str] = &[
    "6 am", "7 am", "7 30", "8 am", "noon", "5 pm", "6 pm", "9 pm", "10 pm", "midnight", "6 45",
    "8 15",
];
const GENRES: &[&str] = &[
    "jazz", "rock", "pop", "classical", "country", "hip hop", "blues", "metal", "reggae", "techno",
    "folk", "soul",
];
const PLACES: &[&str] = &[
    "the airport", "the station", "the nearest pharmacy", "walmart", "the library", "the mall",
    "the hospital", "the beach", "the stadium", "city hall", "the zoo", "the museum",
];
const CONTACTS: &[&str] = &[
    "mom", "dad", "john", "sarah", "the office", "alex", "grandma", "mike", "emma", "the doctor",
    "david", "lisa",
];
const CHORES: &[&str] = &[
    "buy milk", "call the bank", "pay rent", "water the plants", "feed the cat", "pick up laundry",
    "renew passport", "book a dentist", "send the report", "charge the car", "take vitamins",
    "return books",
];
const COUNTRIES: &[&str] = &[
    "france", "japan", "brazil", "canada", "egypt", "india", "mexico", "kenya", "norway", "peru",
    "chile", "spain",
];
const WORDS: &[&str] = &[
    "serendipity", "ephemeral", "ubiquitous", "quixotic", "paradigm", "entropy", "algorithm",
    "metaphor", "photosynthesis", "inflation", "gravity", "democracy",
];
const COMPANIES: &[&str] = &[
    "microsoft", "apple", "amazon", "tesla", "google", "netflix", "intel", "nike", "boeing",
    "ford", "sony", "ibm",
];

const TEMPLATE_FAMILIES: &[TemplateFamily] = &[
    TemplateFamily {
        id: "criticism_generic",
        kind: FamilyKind::Generic,
        templates: &[
            "do you think i should {}",
            "nobody would care if i {}",
            "tell me honestly if i should {}",
        ],
        values: ACTS,
    },
    TemplateFamily {
        id: "criticism_response",
        kind: FamilyKind::Generic,
        templates: &[
            "that {} was not funny",
            "your {} made no sense",
            "worst {} i have ever heard",
        ],
        values: THINGS,
    },
    TemplateFamily {
        id: "compliment_generic",
        kind: FamilyKind::Generic,
        templates: &[
            "you are the {} assistant ever",
            "you are such a {} little bot",
            "honestly you are the {} friend i have",
        ],
        values: PRAISE,
    },
    TemplateFamily {
        id: "sad_generic",
        kind: FamilyKind::Generic,
        templates: &[
            "i feel so {} today",
            "i am feeling really {} right now",
            "why am i always so {} lately",
        ],
        values: MOODS,
    },
    TemplateFamily {
        id: "bot_identity_generic",
        kind: FamilyKind::Generic,
        templates: &[
            "are you a real {} or not",
            "are you secretly a {} pretending",
            "be honest are you a {} underneath",
        ],
        values: ENTITIES,
    },
    TemplateFamily {
        id: "opinion_generic",
        kind: FamilyKind::Generic,
        templates: &[
            "what is your opinion on {}",
            "tell me your honest view on {}",
            "do you personally like {} or not",
        ],
        values: TOPICS,
    },
    TemplateFamily {
        id: "task_weather",
        kind: FamilyKind::Task,
        templates: &["what is the weather in {}", "weather forecast for {} tomorrow"],
        values: CITIES,
    },
    TemplateFamily {
        id: "task_alarm",
        kind: FamilyKind::Task,
        templates: &["set an alarm for {}", "wake me up at {} tomorrow"],
        values: TIMES,
    },
    TemplateFamily {
        id: "task_music",
        kind: FamilyKind::Task,
        templates: &["play some {} music", "start a {} playlist"],
        values: GENRES,
    },
    TemplateFamily {
        id: "task_directions",
        kind: FamilyKind::Task,
        templates: &["directions to {}", "how long does it take to drive to {}"],
        values: PLACES,
    },
    TemplateFamily {
        id: "task_call",
        kind: FamilyKind::Task,
        templates: &["call {} on speaker", "send a text message to {}"],
        values: CONTACTS,
    },
    TemplateFamily {
        id: "task_reminder",
        kind: FamilyKind::Task,
        templates: &["remind me to {} tomorrow", "add {} to my todo list"],
        values: CHORES,
    },
    TemplateFamily {
        id: "info_capital",
        kind: FamilyKind::Task,
        templates: &["what is the capital of {}", "population of {} in 2020"],
        values: COUNTRIES,
    },
    TemplateFamily {
        id: "info_define",
        kind: FamilyKind::Task,
        templates: &["define {}", "meaning of the word {} in english"],
        values: WORDS,
    },
    TemplateFamily {
        id: "info_stock",
        kind: FamilyKind::Task,
        templates: &["stock price of {}", "latest news about {} earnings"],
        values: COMPANIES,
    },
];

pub const JUNK_FAMILY: &str = "junk";

fn is_test_value(index: usize) -> bool {
    index % 4 == 3
}

fn is_test_wrapper(prefix: usize, suffix: usize) -> bool {
    (prefix + suffix) % 5 == 4
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    /// Wrapped log variants per specific core phrase.
    pub specific_variants: usize,
    /// Wrapped log variants per (template, slot value) pair.
    pub template_variants: usize,
    pub junk_queries: usize,
    /// Judged domain rows drawn from the log distribution.
    pub judged: usize,
    pub augmented_negatives: usize,
    pub augmented_positives: usize,
    /// Generic training rows per generic family.
    pub generic_per_family: usize,
    pub test_per_specific: usize,
    pub test_per_template_family: usize,
    pub test_junk: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            specific_variants: 30,
            template_variants: 4,
            junk_queries: 120,
            judged: 1200,
            augmented_negatives: 900,
            augmented_positives: 500,
            generic_per_family: 60,
            test_per_specific: 16,
            test_per_template_family: 40,
            test_junk: 60,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub domain: Vec<DomainRecord>,
    pub log: Vec<RawQuery>,
    pub labels: Vec<QueryLabel>,
    pub generic: Vec<GenericExample>,
    pub tests: Vec<TestRecord>,
    pub seed_store: StoreContent,
}

struct Sample {
    text: String,
    family: &'static str,
    kind: FamilyKind,
}

fn wrap(rng: &mut ChaCha8Rng, core: &str, prefix: usize, suffix: usize) -> String {
    let mut s = String::new();
    for part in [PREFIXES[prefix], core, SUFFIXES[suffix]] {
        if !part.is_empty() {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(part);
        }
    }
    s.push_str(ENDINGS.choose(rng).expect("endings"));
    if rng.random_bool(0.2) {
        capitalize(&s)
    } else {
        s
    }
}

fn capitalize(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn wrapper_pairs(test: bool) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for p in 0..PREFIXES.len() {
        for s in 0..SUFFIXES.len() {
            if (p, s) != (0, 0) && is_test_wrapper(p, s) == test {
                pairs.push((p, s));
            }
        }
    }
    pairs
}

fn fill(template: &str, value: &str) -> String {
    template.replacen("{}", value, 1)
}

fn values_for(f: &TemplateFamily, test: bool) -> Vec<&'static str> {
    f.values
        .iter()
        .enumerate()
        .filter(|(i, _)| is_test_value(*i) == test)
        .map(|(_, v)| *v)
        .collect()
}

fn junk_text(rng: &mut ChaCha8Rng) -> String {
    const LETTERS: &[u8] = b"bcdfghjklmnpqrstvwxzaeiou";
    let words = rng.random_range(1..=3);
    (0..words)
        .map(|_| {
            let len = rng.random_range(3..=7);
            (0..len)
                .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Draws one training-side sample of a template family.
fn template_sample(rng: &mut ChaCha8Rng, f: &'static TemplateFamily, test: bool) -> Sample {
    let t = f.templates.choose(rng).expect("templates");
    let v = values_for(f, test);
    let v = v.choose(rng).expect("values");
    let pairs = wrapper_pairs(test);
    let (p, s) = if rng.random_bool(0.3) {
        (0, 0)
    } else {
        *pairs.choose(rng).expect("wrappers")
    };
    Sample {
        text: wrap(rng, &fill(t, v), p, s),
        family: f.id,
        kind: f.kind,
    }
}

fn specific_sample(rng: &mut ChaCha8Rng, f: &'static SpecificFamily, test: bool) -> Sample {
    let phrase = f.phrases.choose(rng).expect("phrases");
    let (p, s) = *wrapper_pairs(test).choose(rng).expect("wrappers");
    Sample {
        text: wrap(rng, phrase, p, s),
        family: f.id,
        kind: FamilyKind::Specific,
    }
}

/// Impression count: heavy-tailed, larger for short canonical phrasings.
fn impressions(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.random_range(0.0..1.0);
    (scale * (1.0 - u).powf(-0.8)).round().clamp(1.0, 50_000.0)
}

fn judgments(rng: &mut ChaCha8Rng, kind: FamilyKind) -> Vec<Judgment> {
    (0..4)
        .map(|_| {
            let r: f64 = rng.random_range(0.0..1.0);
            match kind {
                FamilyKind::Specific | FamilyKind::Generic => {
                    if r < 0.9 {
                        Judgment::Chat
                    } else if r < 0.95 {
                        Judgment::Information
                    } else {
                        Judgment::Task
                    }
                }
                FamilyKind::Task => {
                    if r < 0.08 {
                        Judgment::Chat
                    } else if r < 0.6 {
                        Judgment::Task
                    } else {
                        Judgment::Information
                    }
                }
                FamilyKind::Junk => {
                    if r < 0.05 {
                        Judgment::Chat
                    } else {
                        Judgment::Junk
                    }
                }
            }
        })
        .collect()
}

/// Draws from all families: specific 25%, generic 30%, task 37%, junk 8%.
fn any_sample(rng: &mut ChaCha8Rng, test: bool) -> Sample {
    let r: f64 = rng.random_range(0.0..1.0);
    let generic: Vec<&TemplateFamily> =
        TEMPLATE_FAMILIES.iter().filter(|f| f.kind == FamilyKind::Generic).collect();
    let task: Vec<&TemplateFamily> =
        TEMPLATE_FAMILIES.iter().filter(|f| f.kind == FamilyKind::Task).collect();
    if r < 0.25 {
        let f = SPECIFIC.choose(rng).expect("specific");
        specific_sample(rng, f, test)
    } else if r < 0.55 {
        let f = *generic.choose(rng).expect("generic");
        template_sample(rng, f, test)
    } else if r < 0.92 {
        let f = *task.choose(rng).expect("task");
        template_sample(rng, f, test)
    } else {
        Sample {
            text: junk_text(rng),
            family: JUNK_FAMILY,
            kind: FamilyKind::Junk,
        }
    }
}

fn chat_sample(rng: &mut ChaCha8Rng) -> Sample {
    loop {
        let s = any_sample(rng, false);
        if s.kind.is_chat() {
            return s;
        }
    }
}

fn non_chat_sample(rng: &mut ChaCha8Rng) -> Sample {
    loop {
        let s = any_sample(rng, false);
        if !s.kind.is_chat() {
            return s;
        }
    }
}

fn seed_store() -> StoreContent {
    let mut lists = WordLists::new();
    lists.insert("bot_names".into(), BOT_NAMES.iter().map(|s| s.to_string()).collect());
    let mut intents: Vec<IntentDefinition> = SPECIFIC
        .iter()
        .map(|f| {
            let mut i = IntentDefinition::new(f.id, IntentKind::Specific)
                .with_queries([f.phrases[0]])
                .with_patterns(f.patterns.iter().copied());
            i.friendly_name = f.id.replace('_', " ");
            i.provenance.note = Some("seed".into());
            i
        })
        .collect();
    intents.sort_by(|a, b| a.id.cmp(&b.id));
    StoreContent {
        intents,
        lists,
        fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Query log: every core phrase and template fill, plus wrapped variants.
    let mut samples: Vec<(Sample, f64)> = Vec::new();
    for f in SPECIFIC {
        let pairs = wrapper_pairs(false);
        for phrase in f.phrases {
            let bare = Sample {
                text: phrase.to_string(),
                family: f.id,
                kind: FamilyKind::Specific,
            };
            let w = impressions(&mut rng, 300.0);
            samples.push((bare, w));
            let chosen: Vec<&(usize, usize)> =
                pairs.choose_multiple(&mut rng, cfg.specific_variants).collect();
            for &&(p, s) in &chosen {
                let text = wrap(&mut rng, phrase, p, s);
                let w = impressions(&mut rng, 3.0);
                samples.push((
                    Sample {
                        text,
                        family: f.id,
                        kind: FamilyKind::Specific,
                    },
                    w,
                ));
            }
        }
    }
    for f in TEMPLATE_FAMILIES {
        let pairs = wrapper_pairs(false);
        for t in f.templates {
            for v in values_for(f, false) {
                let core = fill(t, v);
                let w = impressions(&mut rng, 20.0);
                samples.push((
                    Sample {
                        text: core.clone(),
                        family: f.id,
                        kind: f.kind,
                    },
                    w,
                ));
                for &(p, s) in pairs.choose_multiple(&mut rng, cfg.template_variants) {
                    let text = wrap(&mut rng, &core, p, s);
                    let w = impressions(&mut rng, 2.0);
                    samples.push((
                        Sample {
                            text,
                            family: f.id,
                            kind: f.kind,
                        },
                        w,
                    ));
                }
            }
        }
    }
    for _ in 0..cfg.junk_queries {
        let text = junk_text(&mut rng);
        let w = impressions(&mut rng, 1.0);
        samples.push((
            Sample {
                text,
                family: JUNK_FAMILY,
                kind: FamilyKind::Junk,
            },
            w,
        ));
    }
    samples.shuffle(&mut rng);

    let mut log = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for (i, (s, w)) in samples.into_iter().enumerate() {
        let id = format!("q{i:05}");
        log.push(RawQuery::new(id.clone(), s.text, w).expect("synthetic query is valid"));
        labels.push(QueryLabel {
            id,
            family: s.family.to_owned(),
            kind: s.kind,
        });
    }

    let mut domain = Vec::new();
    for _ in 0..cfg.judged {
        let s = any_sample(&mut rng, false);
        let js = judgments(&mut rng, s.kind);
        domain.push(DomainRecord::judged(s.text, &js));
    }
    for _ in 0..cfg.augmented_negatives {
        domain.push(DomainRecord::augmented(non_chat_sample(&mut rng).text, false));
    }
    for _ in 0..cfg.augmented_positives {
        domain.push(DomainRecord::augmented(chat_sample(&mut rng).text, true));
    }

    let mut generic = Vec::new();
    for f in TEMPLATE_FAMILIES.iter().filter(|f| f.kind == FamilyKind::Generic) {
        for _ in 0..cfg.generic_per_family {
            let s = template_sample(&mut rng, f, false);
            generic.push(GenericExample {
                text: s.text,
                class: f.id.to_owned(),
            });
        }
    }

    let mut tests = Vec::new();
    let mut push_test = |rng: &mut ChaCha8Rng, s: Sample| {
        let intent_kind = s.kind.intent_kind();
        tests.push(TestRecord {
            weight: impressions(rng, 5.0),
            chat: u8::from(s.kind.is_chat()),
            intent: if intent_kind.is_some() {
                s.family.to_owned()
            } else {
                String::new()
            },
            intent_kind,
            text: s.text,
        });
    };
    for f in SPECIFIC {
        for _ in 0..cfg.test_per_specific {
            let s = specific_sample(&mut rng, f, true);
            push_test(&mut rng, s);
        }
    }
    for f in TEMPLATE_FAMILIES {
        for _ in 0..cfg.test_per_template_family {
            let s = template_sample(&mut rng, f, true);
            push_test(&mut rng, s);
        }
    }
    for _ in 0..cfg.test_junk {
        let s = Sample {
            text: junk_text(&mut rng),
            family: JUNK_FAMILY,
            kind: FamilyKind::Junk,
        };
        push_test(&mut rng, s);
    }

    SynthCorpus {
        domain,
        log,
        labels,
        generic,
        tests,
        seed_store: seed_store(),
    }
}

impl SynthCorpus {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            fs::File::create(&p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        dataset::write_domain_records(create(DOMAIN_FILE)?, &self.domain)?;
        dataset::write_query_log(create(QUERIES_FILE)?, &self.log)?;
        dataset::write_query_labels(create(LABELS_FILE)?, &self.labels)?;
        dataset::write_generic_examples(create(GENERIC_FILE)?, &self.generic)?;
        dataset::write_test_records(create(TESTSET_FILE)?, &self.tests)?;
        let p = dir.join(SEED_STORE_FILE);
        let json = serde_json::to_string_pretty(&self.seed_store)?;
        fs::write(&p, json + "\n").map_err(|e| Error::io(p, e))
    }
}

/// Minimum share of a cluster's members that must come from one family for
/// the scripted reviewer to accept it.
pub const PURITY: f64 = 0.6;

/// Decisions a reviewer with access to the ground-truth labels would make:
/// the first cluster of a family of the batch's kind is chosen under the
/// family name, later clusters of that family are merged into it, and
/// everything else is rejected.
pub fn scripted_decisions(batch: &AnnotationBatch, labels: &[QueryLabel]) -> DecisionSet {
    let by_id: HashMap<&str, &QueryLabel> = labels.iter().map(|l| (l.id.as_str(), l)).collect();
    let wanted = match batch.mode {
        MiningMode::Specific => FamilyKind::Specific,
        MiningMode::Generic => FamilyKind::Generic,
    };
    let mut first: BTreeMap<String, u32> = BTreeMap::new();
    let mut decisions = Vec::new();
    for c in &batch.clusters {
        let mut counts: BTreeMap<(&str, FamilyKind), usize> = BTreeMap::new();
        for m in &c.members {
            if let Some(l) = by_id.get(m.id.as_str()) {
                *counts.entry((l.family.as_str(), l.kind)).or_default() += 1;
            }
        }
        let top = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(k, n)| (*k, *n));
        let d = match top {
            None => AnnotationDecision::reject(c.cluster_id, "no labelled members"),
            Some((_, n)) if (n as f64) < PURITY * c.members.len() as f64 => {
                AnnotationDecision::reject(c.cluster_id, "mixed cluster")
            }
            Some(((_, kind), _)) if kind != wanted => AnnotationDecision::reject(
                c.cluster_id,
                format!("not a {} intent", wanted_name(wanted)),
            ),
            Some(((family, _), _)) => match first.get(family) {
                Some(&target) => AnnotationDecision::merge(c.cluster_id, target),
                None => {
                    first.insert(family.to_owned(), c.cluster_id);
                    AnnotationDecision::choose(c.cluster_id, family)
                }
            },
        };
        decisions.push(d);
    }
    DecisionSet::new(batch.batch_id.clone(), decisions)
}

fn wanted_name(kind: FamilyKind) -> &'static str {
    match kind {
        FamilyKind::Specific => "specific",
        FamilyKind::Generic => "generic",
        FamilyKind::Task => "task",
        FamilyKind::Junk => "junk",
    }
}

/// Curated queries of a family as they would look after annotation; used
/// by tests that need a populated store without mining.
pub fn family_queries(family: &str) -> Vec<CuratedQuery> {
    if let Some(f) = SPECIFIC.iter().find(|f| f.id == family) {
        return f.phrases.iter().map(|p| CuratedQuery::new(*p)).collect();
    }
    TEMPLATE_FAMILIES
        .iter()
        .find(|f| f.id == family)
        .map(|f| {
            f.templates
                .iter()
                .flat_map(|t| values_for(f, false).into_iter().map(move |v| CuratedQuery::new(fill(t, v))))
                .collect()
        })
        .unwrap_or_default()
}

pub fn specific_family_ids() -> Vec<&'static str> {
    SPECIFIC.iter().map(|f| f.id).collect()
}

pub fn generic_family_ids() -> Vec<&'static str> {
    TEMPLATE_FAMILIES
        .iter()
        .filter(|f| f.kind == FamilyKind::Generic)
        .map(|f| f.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::Analyzer;
    use crate::text::distinct_key;
    use std::collections::BTreeSet;

    fn small() -> SynthConfig {
        SynthConfig {
            judged: 50,
            augmented_negatives: 20,
            augmented_positives: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.log, b.log);
        assert_eq!(a.tests, b.tests);
        assert_eq!(a.domain, b.domain);
        let c = generate(&SynthConfig { seed: 8, ..small() });
        assert_ne!(a.log, c.log);
    }

    #[test]
    fn wrapped_variants_share_the_core_embedding() {
        let analyzer = Analyzer::default();
        let core = analyzer.analyze("good morning");
        let wrapped = analyzer.analyze("Oh Well Good Morning To You Too!");
        assert_eq!(core.semantic, wrapped.semantic);
        assert_eq!(core.normalized.key(), wrapped.normalized.key());
        assert_ne!(distinct_key("good morning"), distinct_key("oh well good morning to you too"));
    }

    #[test]
    fn test_queries_are_held_out() {
        let c = generate(&small());
        let log: BTreeSet<String> = c.log.iter().map(|q| distinct_key(&q.text)).collect();
        let generic: BTreeSet<String> = c.generic.iter().map(|g| distinct_key(&g.text)).collect();
        for t in &c.tests {
            let k = distinct_key(&t.text);
            assert!(!log.contains(&k), "test query `{}` is in the log", t.text);
            assert!(!generic.contains(&k), "test query `{}` is in generic training", t.text);
        }
    }

    #[test]
    fn labels_cover_the_log_and_seed_store_is_valid() {
        let c = generate(&small());
        assert_eq!(c.log.len(), c.labels.len());
        assert!(c.log.iter().zip(&c.labels).all(|(q, l)| q.id == l.id));
        c.seed_store.validate().unwrap();
        assert_eq!(c.seed_store.count(IntentKind::Specific), SPECIFIC.len());
        let kinds: BTreeSet<FamilyKind> = c.labels.iter().map(|l| l.kind).collect();
        assert_eq!(kinds.len(), 4);
        let classes: BTreeSet<&str> = c.generic.iter().map(|g| g.class.as_str()).collect();
        assert_eq!(classes.len(), generic_family_ids().len());
    }

    #[test]
    fn sensitive_query_is_a_training_fill() {
        let q = family_queries("criticism_generic");
        assert!(q.iter().any(|c| c.text == "do you think i should die"));
    }
}
