use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use soc_core::cluster::{kmedoids, pick_candidates, DEFAULT_MAX_ITER};
use soc_core::verify::{random_prob_vector, random_similarity};
use soc_core::{
    build_indicator, select_k, select_label, KPolicy, PredictionBank, TransitionLedger,
};

fn bench_kmedoids(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmedoids");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for classes in [32usize, 200] {
        let sim = random_similarity(&mut rng, classes);
        group.bench_with_input(BenchmarkId::from_parameter(classes), &sim, |b, sim| {
            b.iter(|| kmedoids(black_box(sim), classes / 4, 7, DEFAULT_MAX_ITER).unwrap())
        });
    }
    group.finish();
}

fn bench_observe_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let classes = 200;
    let batches: Vec<Vec<(usize, usize)>> = (0..64)
        .map(|_| {
            (0..160)
                .map(|_| (rng.random_range(0..6400), rng.random_range(0..classes)))
                .collect()
        })
        .collect();
    c.bench_function("observe_batch/160", |b| {
        let mut ledger = TransitionLedger::new(classes, 512).unwrap();
        let mut bank = PredictionBank::new();
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % batches.len();
            ledger
                .observe_batch(&mut bank, black_box(&batches[i]))
                .unwrap()
        })
    });
}

fn bench_select_label(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes = 200;
    let sim = random_similarity(&mut rng, classes);
    let clusters = kmedoids(&sim, 42, 0, DEFAULT_MAX_ITER).unwrap();
    let p = random_prob_vector(&mut rng, classes);
    c.bench_function("select_label/200", |b| {
        b.iter(|| {
            let candidates = pick_candidates(&clusters, p.argmax()).unwrap();
            let g = build_indicator(&candidates, classes).unwrap();
            select_label(black_box(&p), &g).unwrap()
        })
    });
}

fn bench_select_k(c: &mut Criterion) {
    let policy = KPolicy::linear(5.0, 200).unwrap();
    c.bench_function("select_k/linear", |b| {
        b.iter(|| select_k(&policy, black_box(0.73)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_kmedoids,
    bench_observe_batch,
    bench_select_label,
    bench_select_k
);
criterion_main!(benches);
