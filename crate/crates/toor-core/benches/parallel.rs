//! Sequential vs data-parallel comparison for the batch-shaped inner loops:
//! pool refresh, test-set evaluation, and the per-step gradient batches.
//!
//! Both paths run the same code; "seq" pins the rayon pool to one thread,
//! "par" uses the default pool. Numerical results are identical by
//! construction (ordered collection, sequential reduction), so the bench
//! measures scheduling overhead against fan-out gain.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use toor_core::data::{build_mismatch_split, gauss6_4_spec, gauss6_4_split, generate_mixture};
use toor_core::net::{ModelBundle, NetworkConfig};
use toor_core::rng::{stream, Stream};
use toor_core::scoring::{refresh_pool, ScoringConfig, UnlabeledPoolState};
use toor_core::trainer::evaluate;

fn fixture() -> (ModelBundle, toor_core::data::Splits, ScoringConfig) {
    let data = generate_mixture(&gauss6_4_spec(1)).unwrap();
    let splits = build_mismatch_split(&data, &gauss6_4_split(0.5, 1)).unwrap();
    let net = NetworkConfig::new(splits.dim, splits.classes);
    let bundle = ModelBundle::new(
        &net,
        3e-4,
        1e-3,
        &mut stream(1, Stream::InitExtractor),
        &mut stream(1, Stream::InitClassifier),
        &mut stream(1, Stream::InitDiscriminator),
    )
    .unwrap();
    (bundle, splits, ScoringConfig::default())
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        (
            "seq",
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap(),
        ),
        ("par", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench_refresh_pool(c: &mut Criterion) {
    let (bundle, splits, scoring) = fixture();
    let mut group = c.benchmark_group("refresh_pool");
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| {
                let mut state = UnlabeledPoolState::new(splits.unlabeled.len());
                pool.install(|| {
                    refresh_pool(&mut state, &bundle, &scoring, &splits.unlabeled).unwrap()
                });
                state
            })
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let (bundle, splits, _) = fixture();
    let mut group = c.benchmark_group("evaluate");
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &pool, |b, pool| {
            b.iter(|| pool.install(|| evaluate(&bundle, &splits.test).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_refresh_pool, bench_evaluate);
criterion_main!(benches);
