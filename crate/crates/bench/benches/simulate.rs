use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use twinsim::engine::{run, EngineConfig};
use twinsim::scenario::load_fixture;
use twinsim::scheduler::{Builtin, Scheduler};
use twinsim_bench::{snapshot_at, synthetic};

fn fixtures(c: &mut Criterion) {
    let config = EngineConfig::default();
    let mut group = c.benchmark_group("fixture-run");
    group.sample_size(20);
    for name in ["intersection", "emergency"] {
        let scenario = load_fixture(name).unwrap();
        for builtin in Builtin::all_default() {
            group.bench_function(format!("{name}/{}", builtin.name()), |b| {
                b.iter(|| {
                    let mut s = builtin.clone();
                    black_box(run(&scenario, &mut s, &config).unwrap().report)
                })
            });
        }
    }
    group.finish();
}

fn decide(c: &mut Criterion) {
    let scenario = synthetic(400, 5);
    let snapshot = snapshot_at(&scenario, 60_000);
    let mut group = c.benchmark_group("decide");
    for builtin in Builtin::all_default() {
        group.bench_function(builtin.name().to_string(), |b| {
            let mut s = builtin.clone();
            b.iter(|| black_box(s.decide(black_box(&snapshot))))
        });
    }
    group.finish();
}

fn synthetic_run(c: &mut Criterion) {
    let config = EngineConfig::default();
    let mut group = c.benchmark_group("synthetic-run");
    group.sample_size(10);
    for jobs in [100, 1000] {
        let scenario = synthetic(jobs, 11);
        group.bench_function(format!("{jobs}-jobs/weighted"), |b| {
            b.iter_batched(
                Builtin::all_default,
                |[_, _, mut weighted]| black_box(run(&scenario, &mut weighted, &config).unwrap().report),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, fixtures, decide, synthetic_run);
criterion_main!(benches);
