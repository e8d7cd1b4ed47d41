use std::hint::black_box;

use chitchat_core::mining::{cluster, rank_and_export, MiningConfig, MiningMode};
use criterion::{criterion_group, criterion_main, Criterion};

fn mining(c: &mut Criterion) {
    let corpus = chitchat_bench::corpus();
    let points = chitchat_bench::log_points(&corpus);
    let mut group = c.benchmark_group(format!("mine/{}_queries", points.len()));
    group.sample_size(10);
    for mode in [MiningMode::Specific, MiningMode::Generic] {
        let mut cfg = MiningConfig::for_mode(mode);
        cfg.min_points = 8;
        group.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| rank_and_export(&cluster(black_box(&points), &cfg).expect("clusters"), &cfg))
        });
    }
    group.finish();
}

criterion_group!(benches, mining);
criterion_main!(benches);
