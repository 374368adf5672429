use criterion::{criterion_group, criterion_main, Criterion};

use coexec_core::batch::{check, fuzz_cases, map, map_sequential};
use coexec_core::coexec::Mode;

const MODES: [Mode; 2] = [Mode::Coexec, Mode::Lazy];

fn oracle_batch(c: &mut Criterion) {
    let cases = fuzz_cases(0..32);
    let mut group = c.benchmark_group("oracle_batch_32");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| assert!(map_sequential(&cases, |k| check(k, &MODES)).iter().all(Option::is_none)))
    });
    // `map` is the rayon path unless built with --no-default-features
    group.bench_function("parallel", |b| b.iter(|| assert!(map(&cases, |k| check(k, &MODES)).iter().all(Option::is_none))));
    group.finish();
}

criterion_group!(benches, oracle_batch);
criterion_main!(benches);
