//! Drives the `chitchat` binary through the full operator workflow and
//! checks the running service.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chitchat_core::dataset::read_test_records;
use chitchat_core::intent::{CuratedQuery, IntentDefinition, IntentKind};
use chitchat_core::store::IntentStore;
use chitchat_core::Analyzer;
use serde_json::{json, Value};

type Check = Result<String, String>;

const BIN: &str = env!("CARGO_BIN_EXE_chitchat");

pub fn chitchat(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| format!("spawn chitchat: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "chitchat {} exited {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

pub struct Server {
    child: Child,
    pub base: String,
}

impl Server {
    pub fn start(dir: &Path, config: &str) -> Result<Self, String> {
        let mut child = Command::new(BIN)
            .args(["serve", "--config", config])
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn serve: {e}"))?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().expect("stdout"))
            .read_line(&mut line)
            .map_err(|e| format!("read serve output: {e}"))?;
        let v: Value = serde_json::from_str(&line).map_err(|_| format!("serve printed {line:?}"))?;
        let addr = v["listening"].as_str().ok_or("no listening address")?;
        Ok(Self {
            child,
            base: format!("http://{addr}"),
        })
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn post(agent: &ureq::Agent, url: &str, body: &Value) -> Result<Value, String> {
    let mut resp = agent.post(url).send_json(body).map_err(|e| format!("{url}: {e}"))?;
    let status = resp.status();
    let text = resp.body_mut().read_to_string().map_err(|e| format!("{url}: {e}"))?;
    if !status.is_success() {
        return Err(format!("{url} answered {status}: {text}"));
    }
    serde_json::from_str(&text).map_err(|e| format!("{url}: {e}"))
}

/// Workspace produced by the end-to-end run, reused by the later checks.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub server: Server,
    pub texts: Vec<String>,
}

impl Workspace {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

pub fn end_to_end() -> Result<(String, Workspace), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let run = |args: &[&str]| chitchat(d, args);

    run(&["synth-corpus", "--out", "corpus", "--seed", "7"])?;
    run(&["store", "import", "--store", "store", "--content", "corpus/seed_store.json"])?;
    run(&["train-domain", "--data", "corpus/domain_train.tsv", "--out", "models/domain.json", "--seed", "1"])?;
    for (mode, min_points) in [("specific", "8"), ("generic", "10")] {
        let batch = format!("batches/{mode}.json");
        let decisions = format!("batches/{mode}.decisions.json");
        run(&["mine", "--queries", "corpus/queries.tsv", "--mode", mode, "--min-points", min_points, "--out", &batch])?;
        run(&["annotate", "script", "--batch", &batch, "--labels", "corpus/query_labels.tsv", "--out", &decisions])?;
        run(&["annotate", "apply", "--batch", &batch, "--decisions", &decisions, "--store", "store"])?;
    }
    run(&[
        "train-generic",
        "--data",
        "corpus/generic_train.tsv",
        "--store",
        "store",
        "--domain-model",
        "models/domain.json",
        "--out",
        "models/generic.json",
        "--seed",
        "1",
    ])?;
    std::fs::write(
        d.join("service.toml"),
        "port = 0\nstore = \"store\"\ndomain_model = \"models/domain.json\"\ngeneric_model = \"models/generic.json\"\n",
    )
    .map_err(|e| e.to_string())?;
    let server = Server::start(d, "service.toml")?;
    run(&["eval", "--testset", "corpus/testset.tsv", "--endpoint", &server.base, "--json", "report.json"])?;

    let report: Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let f1 = report["chat_weighted"]["f1"].as_f64().ok_or("report lacks chat_weighted.f1")?;
    let acc = report["generic_accuracy"].as_f64().ok_or("report lacks generic_accuracy")?;
    let versions = IntentStore::open(d.join("store"))
        .and_then(|s| s.versions())
        .map_err(|e| e.to_string())?;
    let texts = read_test_records(std::fs::File::open(d.join("corpus/testset.tsv")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| r.text)
        .collect();
    let detail = format!(
        "{} queries, chat weighted F1 {f1:.3}, generic accuracy {acc:.3}, store v{}",
        report["queries"],
        versions.last().copied().unwrap_or(0)
    );
    if f1 < 0.85 || acc < 0.80 {
        return Err(detail);
    }
    Ok((detail, Workspace { dir, server, texts }))
}

fn strip_latency(mut v: Value) -> Value {
    if let Some(o) = v.as_object_mut() {
        o.remove("latency_ms");
    }
    v
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    names.sort();
    for p in &names {
        let name = p.file_name().expect("name");
        let (x, y) = (std::fs::read(p), std::fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => return Err(format!("{} differs between runs", name.to_string_lossy())),
        }
    }
    Ok(names.len())
}

pub fn determinism(ws: &Workspace) -> Check {
    let d = ws.path();
    let run = |args: &[&str]| chitchat(d, args);
    run(&["synth-corpus", "--out", "corpus2", "--seed", "7"])?;
    let corpus_files = same_files(&d.join("corpus"), &d.join("corpus2"))?;
    run(&["train-domain", "--data", "corpus/domain_train.tsv", "--out", "again/domain.json", "--seed", "1"])?;
    run(&[
        "train-generic",
        "--data",
        "corpus/generic_train.tsv",
        "--store",
        "store",
        "--domain-model",
        "models/domain.json",
        "--out",
        "again/generic.json",
        "--seed",
        "1",
    ])?;
    run(&["mine", "--queries", "corpus/queries.tsv", "--mode", "generic", "--min-points", "10", "--out", "again/generic.json.batch"])?;
    for (a, b) in [
        ("models/domain.json", "again/domain.json"),
        ("models/generic.json", "again/generic.json"),
        ("batches/generic.json", "again/generic.json.batch"),
    ] {
        let (x, y) = (std::fs::read(d.join(a)), std::fs::read(d.join(b)));
        if x.as_ref().ok() != y.as_ref().ok() || x.is_err() {
            return Err(format!("{a} is not byte-identical when rebuilt"));
        }
    }

    // A second service over the same files answers identically.
    let other = Server::start(d, "service.toml")?;
    let agent = agent();
    let texts: Vec<&String> = ws.texts.iter().step_by(4).collect();
    for text in &texts {
        let body = json!({ "text": text, "trace": true });
        let a = strip_latency(post(&agent, &format!("{}/v1/understand", ws.server.base), &body)?);
        let b = strip_latency(post(&agent, &format!("{}/v1/understand", other.base), &body)?);
        let again = strip_latency(post(&agent, &format!("{}/v1/understand", ws.server.base), &body)?);
        if a != b || a != again {
            return Err(format!("responses differ for {text:?}"));
        }
    }
    Ok(format!(
        "{corpus_files} corpus files, 2 model files and a batch byte-identical; {} queries answered identically",
        texts.len()
    ))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

pub fn service(ws: &Workspace) -> Check {
    let agent = agent();
    let url = format!("{}/v1/understand", ws.server.base);

    // Latency.
    let mut ms = Vec::new();
    for text in ws.texts.iter().take(300) {
        let t = Instant::now();
        post(&agent, &url, &json!({ "text": text }))?;
        ms.push(t.elapsed().as_secs_f64() * 1000.0);
    }
    ms.sort_by(f64::total_cmp);
    let p50 = percentile(&ms, 0.5);
    let p95 = percentile(&ms, 0.95);
    if p50 >= 50.0 {
        return Err(format!("p50 {p50:.1} ms"));
    }

    // Reload atomicity: snapshots alternate between containing a new
    // curated query and not; every answer must agree with the snapshot
    // version it reports.
    let store = IntentStore::open(ws.path().join("store")).map_err(|e| e.to_string())?;
    let base = store.load_latest().map_err(|e| e.to_string())?;
    let mut with = base.content.clone();
    let mut howdy = IntentDefinition::new("Howdy_Partner", IntentKind::Specific);
    howdy.curated_queries = vec![CuratedQuery::new("howdy partner")];
    with.intents.push(howdy);
    let has_howdy: Arc<Mutex<BTreeMap<u64, bool>>> = Arc::new(Mutex::new(BTreeMap::from([(base.version, false)])));
    let done = Arc::new(AtomicBool::new(false));

    let reloader = {
        let (has_howdy, done, agent) = (has_howdy.clone(), done.clone(), agent.clone());
        let admin = format!("{}/v1/admin/reload", ws.server.base);
        let (with, without) = (with.clone(), base.content.clone());
        std::thread::spawn(move || -> Result<usize, String> {
            let analyzer = Analyzer::default();
            let mut reloads = 0;
            while !done.load(Ordering::SeqCst) {
                let add = reloads % 2 == 0;
                let content = if add { with.clone() } else { without.clone() };
                let snap = store.save(content, &[], Some(&analyzer)).map_err(|e| e.to_string())?;
                has_howdy.lock().expect("map").insert(snap.version, add);
                post(&agent, &admin, &json!({}))?;
                reloads += 1;
                std::thread::sleep(Duration::from_millis(20));
            }
            Ok(reloads)
        })
    };

    let workers: Vec<_> = (0..4)
        .map(|w| {
            let (agent, url, has_howdy) = (agent.clone(), url.clone(), has_howdy.clone());
            let probes = ["howdy partner", "good morning", "tell me a joke"];
            std::thread::spawn(move || -> Result<(usize, usize), String> {
                let (mut with_seen, mut without_seen) = (0, 0);
                for i in 0..2500 {
                    let text = probes[(i + w) % probes.len()];
                    let r = post(&agent, &url, &json!({ "text": text }))?;
                    let version = r["store_version"].as_u64().ok_or("no store_version")?;
                    let expected = *has_howdy
                        .lock()
                        .expect("map")
                        .get(&version)
                        .ok_or_else(|| format!("unknown store version {version}"))?;
                    let exact_howdy = r["intents"]
                        .as_array()
                        .map(|a| a.iter().any(|p| p["id"] == "Howdy_Partner" && p["match_type"] == "Exact"))
                        .unwrap_or(false);
                    if text == "howdy partner" {
                        if exact_howdy != expected {
                            return Err(format!("v{version} answered with howdy={exact_howdy}"));
                        }
                        if expected {
                            with_seen += 1;
                        } else {
                            without_seen += 1;
                        }
                    } else if exact_howdy {
                        return Err(format!("{text:?} matched Howdy_Partner"));
                    }
                }
                Ok((with_seen, without_seen))
            })
        })
        .collect();

    let mut mixed = Ok((0, 0));
    for w in workers {
        let r = w.join().map_err(|_| "worker panicked".to_string()).and_then(|r| r);
        mixed = match (mixed, r) {
            (Ok((a, b)), Ok((c, d))) => Ok((a + c, b + d)),
            (Err(e), _) | (_, Err(e)) => Err(e),
        };
    }
    done.store(true, Ordering::SeqCst);
    let reloads = reloader.join().map_err(|_| "reloader panicked".to_string())??;
    let (with_seen, without_seen) = mixed?;
    if reloads < 2 || with_seen == 0 || without_seen == 0 {
        return Err(format!(
            "stress run did not cover both snapshots ({reloads} reloads, {with_seen}/{without_seen} probes)"
        ));
    }
    Ok(format!(
        "p50 {p50:.1} ms, p95 {p95:.1} ms; 10000 requests across {reloads} reloads, no mixed-version answers"
    ))
}
