//! Sequential vs parallel ingest over a warmed-up histogram.
//!
//! Exact mode with a long window keeps many checkpoints alive, which is where
//! the per-checkpoint loops have enough work to split.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dpmat::histogram::{Histogram, Mode, Params};
use dpmat::mechanisms::PrivacyBudget;
use dpmat::par::Exec;
use dpmat::rng::Rng;
use dpmat::synth::random_norm_row;

fn warmed(mode: Mode, exec: Exec, d: usize, window: u64) -> (Histogram, Vec<Vec<f64>>) {
    let budget = PrivacyBudget::new(1.0, 1e-4).unwrap();
    let mut h = Histogram::new(Params::new(mode, window, 0.1, 4, d, budget, 1)).unwrap();
    h.set_exec(exec);
    let mut rng = Rng::labeled(1, "bench");
    for _ in 0..2 * window {
        h.ingest(&random_norm_row(&mut rng, d)).unwrap();
    }
    let rows = (0..256).map(|_| random_norm_row(&mut rng, d)).collect();
    (h, rows)
}

fn ingest(c: &mut Criterion) {
    let mut group = c.benchmark_group("ingest");
    group.sample_size(20);
    for (mode, d, window) in [(Mode::Exact, 16, 256), (Mode::Jl, 16, 512)] {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let (base, rows) = warmed(mode, exec, d, window);
            let id = BenchmarkId::new(format!("{}-{exec:?}", mode.name()), format!("d{d}-W{window}"));
            group.bench_function(id, |b| {
                b.iter_batched(
                    || base.clone(),
                    |mut h| {
                        for r in &rows {
                            h.ingest(black_box(r)).unwrap();
                        }
                        h
                    },
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ingest);
criterion_main!(benches);
