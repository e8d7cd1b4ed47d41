//! Property and reference-implementation checks that need no trained
//! pipeline.

use std::collections::{BTreeMap, BTreeSet};

use chitchat_core::aggregator::{aggregate, RulesConfig};
use chitchat_core::chat_domain::{DecisionTree, TreeConfig};
use chitchat_core::chat_domain::{ChatDomainConfig, ChatDomainScore, ExampleSource, Judgment};
use chitchat_core::dataset::{domain_training_set, DomainRecord};
use chitchat_core::embeddings::{Embedding, SEMANTIC_DIM, SENTIMENT_DIM};
use chitchat_core::generic::{
    assemble_features, GenericConfig, GenericDistribution, ADULT_INDEX, CHAT_INDEX, GENERIC_FEATURE_DIM,
    OFFENSIVE_INDEX,
};
use chitchat_core::intent::{IntentDefinition, IntentKind, IntentPrediction, MatchType};
use chitchat_core::mining::{
    cluster, effectiveness_generic, effectiveness_specific, Cluster, ClusterMember, MiningConfig, MiningMode,
};
use chitchat_core::moderation::{ModerationSignal, ModerationSource};
use chitchat_core::nn::{flatten, Activation, Mlp, OutputHead};
use chitchat_core::specific::{SpecificIntentIndex, WordLists};
use chitchat_core::text::RawQuery;
use chitchat_core::Analyzer;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- formulas

fn member(d: f64, w: f64) -> ClusterMember {
    ClusterMember {
        query: RawQuery::new("m", "m", w).expect("query"),
        distance_to_centroid: d,
        weight: w,
    }
}

/// Unit centroid at `degrees` in the first two coordinates.
fn cluster_at(id: u32, degrees: f64, members: &[(f64, f64)]) -> Cluster {
    let mut c = vec![0.0; SEMANTIC_DIM];
    let r = degrees.to_radians();
    c[0] = r.cos();
    c[1] = r.sin();
    Cluster {
        id,
        members: members.iter().map(|&(d, w)| member(d, w)).collect(),
        centroid: Embedding::new(c).expect("centroid"),
        dc_min: None,
        effectiveness: 0.0,
    }
}

pub fn formulas() -> Check {
    // (members as (D, W), hand-evaluated sum of (1 - D) * W)
    let specific: [(&[(f64, f64)], f64); 12] = [
        (&[(0.1, 5.0), (0.3, 2.0)], 5.9),
        (&[(0.0, 1.0)], 1.0),
        (&[(0.5, 4.0)], 2.0),
        (&[(0.2, 10.0), (0.4, 5.0), (0.6, 1.0)], 11.4),
        (&[(1.0, 7.0)], 0.0),
        (&[(0.25, 8.0), (0.75, 8.0)], 8.0),
        (&[(0.05, 100.0)], 95.0),
        (&[(0.1, 1.0), (0.1, 1.0), (0.1, 1.0)], 2.7),
        (&[(0.9, 10.0), (0.0, 0.5)], 1.5),
        (&[(0.33, 3.0)], 2.01),
        (&[(0.125, 16.0), (0.5, 2.0)], 15.0),
        (&[(0.2, 2.5), (0.3, 0.5)], 2.35),
    ];
    let mut checked = 0;
    for (i, (members, expected)) in specific.iter().enumerate() {
        let got = effectiveness_specific(&cluster_at(i as u32, 0.0, members));
        ensure((got - expected).abs() <= 1e-9, || format!("specific #{i}: {got} != {expected}"))?;
        checked += 1;
    }

    // Groups of clusters on a circle; DC_min is 1 - cos of the nearest
    // angular gap: 60 deg -> 0.5, 90 deg -> 1, 120 deg -> 1.5, 180 deg -> 2.
    // (angle, specific case, hand-evaluated DC_min^2 * sum)
    let groups: [&[(f64, usize, f64)]; 4] = [
        &[(0.0, 0, 1.475), (60.0, 3, 2.85), (180.0, 5, 18.0)],
        &[(0.0, 10, 15.0), (90.0, 2, 2.0), (180.0, 6, 95.0)],
        &[(0.0, 7, 0.0), (0.0, 8, 0.0)],
        &[(0.0, 11, 5.2875), (120.0, 9, 4.5225)],
    ];
    for (g, group) in groups.iter().enumerate() {
        let clusters: Vec<Cluster> = group
            .iter()
            .enumerate()
            .map(|(k, &(deg, case, _))| cluster_at(k as u32, deg, specific[case].0))
            .collect();
        for (c, &(_, _, expected)) in clusters.iter().zip(group.iter()) {
            let got = effectiveness_generic(c, &clusters).map_err(|e| e.to_string())?;
            ensure((got - expected).abs() <= 1e-9, || format!("generic group {g} cluster {}: {got} != {expected}", c.id))?;
            checked += 1;
        }
    }

    // Permutation invariance and linear scaling in the weights.
    let c = cluster_at(0, 0.0, &[(0.2, 10.0), (0.4, 5.0), (0.6, 1.0)]);
    let mut rev = c.clone();
    rev.members.reverse();
    ensure((effectiveness_specific(&rev) - 11.4).abs() <= 1e-9, || "permutation changed the score".into())?;
    let mut scaled = c.clone();
    scaled.members.iter_mut().for_each(|m| m.weight *= 3.0);
    ensure((effectiveness_specific(&scaled) - 34.2).abs() <= 1e-9, || "weights x3 did not scale the score".into())?;
    Ok(format!("{checked} clusters"))
}

// ---------------------------------------------------------------- DBSCAN

fn unit_random(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..SEMANTIC_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

struct Instance {
    points: Vec<Vec<f64>>,
    texts: Vec<String>,
    epsilon: f64,
    min_points: usize,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(20..=500);
    let blobs = rng.random_range(1..=6);
    let centers: Vec<Vec<f64>> = (0..blobs).map(|_| unit_random(rng)).collect();
    let spreads: Vec<f64> = (0..blobs).map(|_| rng.random_range(0.03..0.1)).collect();
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut texts: Vec<String> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.1) {
            // A repeated query: same text, same embedding.
            let j = rng.random_range(0..i);
            points.push(points[j].clone());
            texts.push(texts[j].clone());
            continue;
        }
        let p = if rng.random_bool(0.15) {
            unit_random(rng)
        } else {
            let b = rng.random_range(0..blobs);
            centers[b]
                .iter()
                .map(|c| c + rng.random_range(-spreads[b]..spreads[b]))
                .collect()
        };
        points.push(p);
        texts.push(format!("query {i}"));
    }
    Instance {
        points,
        texts,
        epsilon: *[0.2, 0.4].choose(rng).expect("eps"),
        min_points: *[3, 5, 10].choose(rng).expect("min points"),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Textbook O(n^2) DBSCAN: core points by distinct-text count in the closed
/// epsilon ball, clusters as connected components of core points, border
/// points joining the component whose first core point (in text, id order)
/// comes first.
fn reference_dbscan(inst: &Instance) -> BTreeSet<BTreeSet<usize>> {
    let n = inst.points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| inst.texts[a].cmp(&inst.texts[b]).then_with(|| format!("p{a:04}").cmp(&format!("p{b:04}"))));
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let near = |i: usize, j: usize| i == j || 1.0 - cosine(&inst.points[i], &inst.points[j]) <= inst.epsilon;
    let core: Vec<bool> = (0..n)
        .map(|i| {
            let texts: BTreeSet<&str> = (0..n).filter(|&j| near(i, j)).map(|j| inst.texts[j].as_str()).collect();
            texts.len() >= inst.min_points
        })
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut first: BTreeMap<usize, usize> = BTreeMap::new();
    for i in (0..n).filter(|&i| core[i]) {
        let r = find(&mut parent, i);
        let e = first.entry(r).or_insert(rank[i]);
        *e = (*e).min(rank[i]);
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = if core[i] {
            Some(find(&mut parent, i))
        } else {
            (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| find(&mut parent, j))
                .min_by_key(|r| first[r])
        };
        if let Some(r) = root {
            groups.entry(r).or_default().insert(i);
        }
    }
    groups.into_values().collect()
}

pub fn dbscan() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut total_points = 0;
    let mut total_clusters = 0;
    for k in 0..50 {
        let inst = instance(&mut rng);
        let queries: Vec<(RawQuery, Embedding)> = inst
            .points
            .iter()
            .zip(&inst.texts)
            .enumerate()
            .map(|(i, (p, t))| {
                (
                    RawQuery::new(format!("p{i:04}"), t.clone(), 1.0).expect("query"),
                    Embedding::new(p.clone()).expect("embedding"),
                )
            })
            .collect();
        let cfg = MiningConfig {
            mode: MiningMode::Specific,
            epsilon: inst.epsilon,
            min_points: inst.min_points,
            top_k: 1000,
        };
        let got: BTreeSet<BTreeSet<usize>> = cluster(&queries, &cfg)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|c| c.members.iter().map(|m| m.query.id[1..].parse::<usize>().expect("id")).collect())
            .collect();
        let want = reference_dbscan(&inst);
        ensure(got == want, || {
            format!(
                "instance {k} (n={}, eps={}, min_points={}): {} clusters vs {} in the reference",
                inst.points.len(),
                inst.epsilon,
                inst.min_points,
                got.len(),
                want.len()
            )
        })?;
        total_points += inst.points.len();
        total_clusters += want.len();
    }
    Ok(format!("50 instances, {total_points} points, {total_clusters} clusters"))
}

// ---------------------------------------------------------------- fuzzy

fn word(rng: &mut ChaCha8Rng) -> String {
    const SYL: [&str; 16] = ["ka", "lo", "mi", "ru", "te", "sa", "vo", "ne", "pi", "zu", "gor", "tam", "bel", "kri", "dus", "fen"];
    (0..rng.random_range(2..=3)).map(|_| *SYL.choose(rng).expect("syllable")).collect()
}

pub fn fuzzy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vocab: Vec<String> = (0..600).map(|_| word(&mut rng)).collect::<BTreeSet<_>>().into_iter().collect();
    let phrase = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.random_range(2..=5)).map(|_| vocab.choose(rng).expect("word").clone()).collect()
    };
    let mut intents = Vec::new();
    let mut curated: Vec<(usize, String)> = Vec::new();
    for k in 0..500 {
        // Intents share a theme word so near neighbours exist.
        let theme = vocab.choose(&mut rng).expect("theme").clone();
        let texts: Vec<String> = (0..20)
            .map(|_| {
                let mut p = phrase(&mut rng);
                p.insert(0, theme.clone());
                p.join(" ")
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        curated.extend(texts.iter().map(|t| (k, t.clone())));
        intents.push(IntentDefinition::new(format!("I{k:03}"), IntentKind::Specific).with_queries(texts));
    }
    ensure(curated.len() <= 10_000, || "store too large".into())?;
    let analyzer = Analyzer::default();
    let index = SpecificIntentIndex::build(&intents, &WordLists::new(), &analyzer, 0.9).map_err(|e| e.to_string())?;
    let embedded: Vec<(usize, Vec<f64>)> = curated
        .iter()
        .map(|(k, t)| (*k, analyzer.semantic(&analyzer.normalize(t)).values().to_vec()))
        .collect();

    let mut queries: Vec<(String, bool)> = Vec::new();
    for _ in 0..200 {
        queries.push((curated.choose(&mut rng).expect("curated").1.clone(), true));
    }
    for _ in 0..200 {
        let mut words: Vec<String> = curated.choose(&mut rng).expect("curated").1.split(' ').map(str::to_owned).collect();
        match rng.random_range(0..3) {
            0 if words.len() > 2 => {
                words.remove(rng.random_range(1..words.len()));
            }
            1 => words.push(vocab.choose(&mut rng).expect("word").clone()),
            _ => {
                let last = words.len() - 1;
                words.swap(0, last);
            }
        }
        queries.push((words.join(" "), false));
    }
    for _ in 0..100 {
        queries.push((phrase(&mut rng).join(" "), false));
    }

    let (mut returned, mut exact_checked) = (0, 0);
    for (text, is_curated) in &queries {
        let q = analyzer.normalize(text);
        let e = analyzer.semantic(&q);
        let mut best = vec![0.0f64; intents.len()];
        for (k, v) in &embedded {
            best[*k] = best[*k].max(cosine(e.values(), v));
        }
        let want: Vec<(String, f64)> = best
            .iter()
            .enumerate()
            .filter(|(_, s)| **s >= 0.9)
            .map(|(k, s)| (format!("I{k:03}"), *s))
            .collect();
        let got = index.match_fuzzy(&e, 0.9);
        ensure(got.iter().all(|p| p.score >= 0.9), || format!("{text:?}: score below threshold"))?;
        let got_map: BTreeMap<&str, f64> = got.iter().map(|p| (p.intent_id.as_str(), p.score)).collect();
        ensure(got_map.len() == want.len(), || format!("{text:?}: {} matches vs {} exhaustive", got_map.len(), want.len()))?;
        for (id, s) in &want {
            let g = got_map.get(id.as_str()).copied();
            ensure(g.is_some_and(|g| (g - s).abs() <= 1e-12), || format!("{text:?}: {id} scored {g:?}, exhaustive {s}"))?;
        }
        returned += got.len();
        for hit in index.match_exact(&q) {
            let s = index.fuzzy_score_of(&e, &hit.intent_id).expect("intent");
            ensure((s - 1.0).abs() <= 1e-12, || format!("{text:?}: exact match fuzzy-scores {s}"))?;
            exact_checked += 1;
        }
        ensure(!is_curated || !index.match_exact(&q).is_empty(), || format!("{text:?}: curated text is not an exact match"))?;
    }
    Ok(format!(
        "{} curated, {} queries, {returned} fuzzy hits, {exact_checked} exact hits at 1.0",
        curated.len(),
        queries.len()
    ))
}

// ---------------------------------------------------------------- gradients

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst relative error over `samples` parameters drawn from every layer.
fn gradient_instance(net: &Mlp, rng: &mut ChaCha8Rng, classes: usize, samples: usize) -> f64 {
    let batch = rng.random_range(1..=4);
    let xs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let weights: Vec<f64> = (0..batch).map(|_| *[1.0, 5.0].choose(rng).expect("weight")).collect();
    let analytic = flatten(&net.gradients(&refs, &labels, &weights));
    let params = net.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..params.len());
        let mut plus = net.clone();
        plus.set_param(i, params[i] + h);
        let mut minus = net.clone();
        minus.set_param(i, params[i] - h);
        let numeric = (plus.loss(&refs, &labels, &weights) - minus.loss(&refs, &labels, &weights)) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

pub fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let domain_hidden = ChatDomainConfig::default().mlp_hidden;
    let generic_hidden = GenericConfig::default().hidden;
    let (mut worst_domain, mut worst_generic): (f64, f64) = (0.0, 0.0);
    for k in 0..100u64 {
        let domain = Mlp::new(&[SEMANTIC_DIM, domain_hidden, 1], Activation::Tanh, OutputHead::Logistic, k);
        worst_domain = worst_domain.max(gradient_instance(&domain, &mut rng, 2, 30));
        let generic = Mlp::new(
            &[GENERIC_FEATURE_DIM, generic_hidden[0], generic_hidden[1], 6],
            Activation::Sigmoid,
            OutputHead::Softmax,
            k,
        );
        worst_generic = worst_generic.max(gradient_instance(&generic, &mut rng, 6, 30));
    }
    ensure(worst_domain < 1e-4 && worst_generic < 1e-4, || {
        format!("worst relative error: chat-domain {worst_domain:.2e}, generic {worst_generic:.2e}")
    })?;
    Ok(format!(
        "100 instances each; worst relative error chat-domain {worst_domain:.1e}, generic {worst_generic:.1e}"
    ))
}

// ---------------------------------------------------------------- structure

pub fn structure() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // Feature layout.
    ensure(GENERIC_FEATURE_DIM == 453, || format!("feature dim {GENERIC_FEATURE_DIM}"))?;
    let sem: Vec<f64> = (0..SEMANTIC_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sen: Vec<f64> = (0..SENTIMENT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let moderation = ModerationSignal {
        adult_score: 0.25,
        offensive_score: 0.75,
        source: ModerationSource::Local,
    };
    let chat = ChatDomainScore {
        lexical_score: -0.3,
        semantic_score: 0.4,
        probability: 0.625,
    };
    let v = assemble_features(
        &Embedding::new(sem.clone()).expect("sem"),
        &Embedding::new(sen.clone()).expect("sen"),
        &moderation,
        &chat,
    )
    .map_err(|e| e.to_string())?;
    let x = v.values();
    ensure(x.len() == 453, || format!("vector length {}", x.len()))?;
    ensure(x[..SEMANTIC_DIM] == sem[..], || "semantic block misplaced".into())?;
    ensure(x[SEMANTIC_DIM..SEMANTIC_DIM + SENTIMENT_DIM] == sen[..], || "sentiment block misplaced".into())?;
    ensure(
        (ADULT_INDEX, OFFENSIVE_INDEX, CHAT_INDEX) == (450, 451, 452)
            && x[ADULT_INDEX] == 0.25
            && x[OFFENSIVE_INDEX] == 0.75
            && x[CHAT_INDEX] == 0.625,
        || "moderation/chat slots misplaced".into(),
    )?;
    ensure(
        assemble_features(&Embedding::new(sen.clone()).expect("e"), &Embedding::new(sen).expect("e"), &moderation, &chat).is_err(),
        || "wrong semantic dimension accepted".into(),
    )?;

    // Softmax outputs.
    let mut worst_sum: f64 = 0.0;
    for k in 0..20u64 {
        let net = Mlp::new(&[GENERIC_FEATURE_DIM, 300, 300, 7], Activation::Sigmoid, OutputHead::Softmax, k);
        for _ in 0..25 {
            let scale = *[1.0, 10.0, 100.0].choose(&mut rng).expect("scale");
            let x: Vec<f64> = (0..GENERIC_FEATURE_DIM).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let p = net.predict(&x);
            ensure(p.iter().all(|v| (0.0..=1.0).contains(v)), || "probability outside [0, 1]".into())?;
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst_sum <= 1e-6, || format!("softmax sum off by {worst_sum:e}"))?;
    let dist = GenericDistribution {
        classes: vec!["a".into(), "b".into()],
        probabilities: vec![0.3, 0.7],
    };
    ensure(dist.argmax().map(|a| a.0) == Some("b"), || "argmax".into())?;

    // Decision tree depth, on data that would want a deep tree.
    let cfg = TreeConfig::default();
    ensure(cfg.max_depth <= 5, || format!("default tree depth {}", cfg.max_depth))?;
    let mut max_depth = 0;
    for _ in 0..5 {
        let xs: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(0.0..1.0)]).collect();
        let labels: Vec<bool> = (0..400).map(|_| rng.random_bool(0.5)).collect();
        let weights: Vec<f64> = (0..400).map(|_| *[1.0, 5.0].choose(&mut rng).expect("w")).collect();
        let tree = DecisionTree::fit(&xs, &labels, &weights, &cfg);
        max_depth = max_depth.max(tree.depth());
    }
    ensure(max_depth <= 5, || format!("tree depth {max_depth}"))?;

    // 5:1 weighting on mixed judged and augmented input.
    use Judgment::{Chat as C, Information as I, Junk as J, Task as T};
    let records = vec![
        DomainRecord::judged("good morning", &[C, C, C, C]),
        DomainRecord::judged("you are funny", &[C, C, C, T]),
        DomainRecord::judged("set an alarm", &[T, T, C, T]),
        DomainRecord::judged("capital of peru", &[I, I, I, J]),
        DomainRecord::judged("hmm ok", &[C, C, T, J]),
        DomainRecord::augmented("weather in oslo", false),
        DomainRecord::augmented("play some jazz", false),
        DomainRecord::augmented("i love you", true),
    ];
    let set = domain_training_set(&records).map_err(|e| e.to_string())?;
    ensure(set.len() == 7, || format!("{} examples; the 2-2 split must be dropped", set.len()))?;
    for e in &set {
        let (w, positive) = match e.query.text.as_str() {
            "good morning" | "you are funny" => (5.0, true),
            "set an alarm" | "capital of peru" => (5.0, false),
            "i love you" => (1.0, true),
            _ => (1.0, false),
        };
        ensure(e.sample_weight == w && e.positive == positive, || {
            format!("{:?}: weight {} positive {}", e.query.text, e.sample_weight, e.positive)
        })?;
        ensure((e.source == ExampleSource::Judged) == (w == 5.0), || "source/weight mismatch".into())?;
    }
    Ok(format!(
        "453 layout, softmax |sum-1| <= {worst_sum:.1e}, tree depth {max_depth}, judged:augmented weight 5:1"
    ))
}

// ---------------------------------------------------------------- aggregator

fn signal(adult: f64, offensive: f64) -> ModerationSignal {
    ModerationSignal {
        adult_score: adult,
        offensive_score: offensive,
        source: ModerationSource::Local,
    }
}

fn chat_score() -> ChatDomainScore {
    ChatDomainScore {
        lexical_score: 1.0,
        semantic_score: 0.9,
        probability: 0.9,
    }
}

fn distribution(cg: f64, cr: f64) -> GenericDistribution {
    let rest = (1.0 - cg - cr).max(0.0);
    GenericDistribution {
        classes: vec!["criticism_generic".into(), "criticism_response".into(), "sad_generic".into()],
        probabilities: vec![cg, cr, rest],
    }
}

/// Independent statement of the rule table for the default config.
fn expected(
    specific: &[IntentPrediction],
    cg: f64,
    cr: f64,
    m: &ModerationSignal,
) -> (bool, Vec<&'static str>, Vec<IntentPrediction>, Vec<(String, f64)>) {
    let mut rules = Vec::new();
    let r1 = cg > 0.5;
    if r1 {
        rules.push("R1");
    }
    let drop_fuzzy = cr >= 0.5 && specific.iter().any(|p| p.match_type == MatchType::Fuzzy);
    if drop_fuzzy {
        rules.push("R2");
    }
    let r3 = m.adult_score.max(m.offensive_score) >= 0.8;
    if r3 {
        rules.push("R3");
    }
    let surviving: Vec<IntentPrediction> = specific
        .iter()
        .filter(|p| !(cr >= 0.5 && p.match_type == MatchType::Fuzzy))
        .cloned()
        .collect();
    let mut generic: Vec<(String, f64)> = distribution(cg, cr)
        .iter()
        .filter(|(_, p)| *p > 0.2)
        .map(|(c, p)| (c.to_owned(), p))
        .collect();
    generic.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(s_min) = surviving.iter().map(|p| p.score).reduce(f64::min) {
        if !generic.is_empty() {
            rules.push("R4");
            generic.iter_mut().for_each(|g| g.1 *= s_min * 0.99);
        }
    }
    (!(r1 || r3), rules, surviving, generic)
}

pub fn aggregator() -> Check {
    let cfg = RulesConfig::default();
    let p = |id: &str, s: f64, t: MatchType| IntentPrediction::new(id, s, t);
    let specifics: Vec<Vec<IntentPrediction>> = vec![
        vec![],
        vec![p("Greetings_GoodMorning", 1.0, MatchType::Exact)],
        vec![p("command_joke", 1.0, MatchType::Pattern)],
        vec![p("command_joke", 0.93, MatchType::Fuzzy)],
        vec![p("command_joke", 0.97, MatchType::Fuzzy), p("Thanks", 0.91, MatchType::Fuzzy)],
    ];
    let cgs = [0.1, 0.5, 0.51, 0.7];
    let crs = [0.1, 0.3, 0.49];
    let crs_high = [0.5];
    let mods = [signal(0.0, 0.0), signal(0.79, 0.3), signal(0.8, 0.0), signal(0.1, 0.95)];
    let mut cases = 0;
    let mut fired: BTreeMap<&str, usize> = BTreeMap::new();
    for preds in &specifics {
        for &cg in &cgs {
            for &cr in crs.iter().chain(&crs_high) {
                if cg + cr > 1.0 {
                    continue;
                }
                for m in &mods {
                    cases += 1;
                    let got = aggregate(preds, &distribution(cg, cr), m, &chat_score(), &cfg);
                    let (safe, rules, surviving, generic) = expected(preds, cg, cr, m);
                    let ctx = || format!("preds={preds:?} cg={cg} cr={cr} mod={m:?}");
                    ensure(got.safe_for_autogeneration == safe, || format!("safe flag: {}", ctx()))?;
                    ensure(got.applied_rules == rules, || format!("rules {:?} vs {rules:?}: {}", got.applied_rules, ctx()))?;
                    let n = surviving.len();
                    ensure(got.intents.len() == n + generic.len(), || format!("intent count: {}", ctx()))?;
                    let mut sorted = surviving.clone();
                    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.intent_id.cmp(&b.intent_id)));
                    ensure(got.intents[..n] == sorted[..], || format!("specific part: {}", ctx()))?;
                    for (g, (c, s)) in got.intents[n..].iter().zip(&generic) {
                        ensure(
                            g.intent_id == *c && g.match_type == MatchType::GenericModel && (g.score - s).abs() <= 1e-12,
                            || format!("generic part {g:?} vs {c} {s}: {}", ctx()),
                        )?;
                    }
                    if let Some(min_specific) = got.intents[..n].iter().map(|p| p.score).reduce(f64::min) {
                        ensure(got.intents[n..].iter().all(|g| g.score < min_specific), || format!("priority: {}", ctx()))?;
                    }
                    ensure(
                        got.intents.iter().all(|p| p.match_type != MatchType::Fuzzy) || cr < 0.5,
                        || format!("fuzzy survived R2: {}", ctx()),
                    )?;
                    for r in &got.applied_rules {
                        *fired.entry(match r.as_str() {
                            "R1" => "R1",
                            "R2" => "R2",
                            "R3" => "R3",
                            _ => "R4",
                        })
                        .or_default() += 1;
                    }
                }
            }
        }
    }
    ensure(fired.len() == 4, || format!("not every rule exercised: {fired:?}"))?;

    // Monotone safety: more criticism or moderation never makes a query safe.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let fuzz = 20_000;
    for _ in 0..fuzz {
        let preds = specifics.choose(&mut rng).expect("preds");
        let cg = rng.random_range(0.0..1.0);
        let cr = rng.random_range(0.0..(1.0 - cg));
        let (a, o) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let base = aggregate(preds, &distribution(cg, cr), &signal(a, o), &chat_score(), &cfg);
        let cg2 = rng.random_range(cg..=1.0);
        let (a2, o2) = (rng.random_range(a..=1.0), rng.random_range(o..=1.0));
        let cr2 = cr.min(1.0 - cg2);
        let raised = aggregate(preds, &distribution(cg2, cr2), &signal(a2, o2), &chat_score(), &cfg);
        ensure(base.safe_for_autogeneration || !raised.safe_for_autogeneration, || {
            format!("unsafe became safe: cg {cg}->{cg2}, moderation ({a},{o})->({a2},{o2})")
        })?;
        // Rescaling keeps the generic order.
        let g: Vec<&IntentPrediction> = base.intents.iter().filter(|p| p.match_type == MatchType::GenericModel).collect();
        ensure(g.windows(2).all(|w| w[0].score >= w[1].score), || "generic order broken".into())?;
    }
    Ok(format!("{cases} grid cases (fired {fired:?}), {fuzz} monotonicity trials"))
}
