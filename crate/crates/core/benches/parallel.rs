// SPDX-License-Identifier: Apache-2.0

//! Batch exhaustive characterization through the rayon pool and through
//! the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use axmul_core::metrics::ErrorMetrics;
use axmul_core::netlist::{simulate_exhaustive, CircuitGenome};
use axmul_core::par;
use axmul_core::seeds::{gen_bam, BamConfig};

fn batch() -> Vec<CircuitGenome> {
    (0..16u32).map(|k| gen_bam(8, BamConfig::new(k % 9, k % 4)).unwrap()).collect()
}

fn characterize(g: &CircuitGenome) -> ErrorMetrics {
    ErrorMetrics::from_table(&simulate_exhaustive(g))
}

fn bench_batch(c: &mut Criterion) {
    let genomes = batch();
    let mut group = c.benchmark_group("characterize_batch");
    group.sample_size(20);
    group.bench_with_input(BenchmarkId::new("sequential", genomes.len()), &genomes, |b, gs| {
        b.iter(|| par::map_seq(gs, characterize))
    });
    group.bench_with_input(
        BenchmarkId::new(format!("pool_{}_threads", par::current_threads()), genomes.len()),
        &genomes,
        |b, gs| b.iter(|| par::map(gs, characterize)),
    );
    group.finish();
}

fn bench_single(c: &mut Criterion) {
    let g = gen_bam(8, BamConfig::new(0, 0)).unwrap();
    c.bench_function("simulate_exhaustive_exact8", |b| b.iter(|| simulate_exhaustive(&g)));
}

criterion_group!(benches, bench_batch, bench_single);
criterion_main!(benches);
