//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

mod oracles;
mod pipeline;

use std::process::ExitCode;
use std::time::{Duration, Instant};

struct Outcome {
    passed: bool,
}

fn check(name: &str, limit: Duration, f: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; took longer than {limit:?}")),
        Err(e) => (false, e),
    };
    println!(
        "{} {name} ({detail}, {:.2}s)",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    Outcome { passed }
}

fn main() -> ExitCode {
    let long = Duration::from_secs(600);
    let mut outcomes = vec![
        check("cluster effectiveness formulas", Duration::from_secs(1), oracles::formulas),
        check("dbscan matches brute force", Duration::from_secs(30), oracles::dbscan),
        check("fuzzy matching matches exhaustive scan", Duration::from_secs(10), oracles::fuzzy),
        check("gradient checks", long, oracles::gradients),
        check("structural invariants", long, oracles::structure),
        check("aggregator rules", long, oracles::aggregator),
    ];

    let mut workspace = None;
    outcomes.push(check("end-to-end workflow", Duration::from_secs(300), || {
        let (detail, ws) = pipeline::end_to_end()?;
        workspace = Some(ws);
        Ok(detail)
    }));
    match &workspace {
        Some(ws) => {
            outcomes.push(check("determinism", long, || pipeline::determinism(ws)));
            outcomes.push(check("service latency and reload atomicity", long, || pipeline::service(ws)));
        }
        None => {
            for name in ["determinism", "service latency and reload atomicity"] {
                outcomes.push(check(name, long, || Err("no workspace from the end-to-end run".into())));
            }
        }
    }

    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
