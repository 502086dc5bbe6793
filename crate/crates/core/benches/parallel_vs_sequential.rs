//! Sequential against rayon execution of the main data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gmv_core::embedding::{embed_columns, make_transform};
use gmv_core::harness::gen_signatures;
use gmv_core::partition::kmeans;
use gmv_core::verification::score_matrix;
use gmv_core::Exec;

const MODES: [Exec; 2] = [Exec::Sequential, Exec::Parallel];

fn label(exec: Exec) -> &'static str {
    match exec {
        Exec::Sequential => "sequential",
        Exec::Parallel => "parallel",
    }
}

fn embedding(c: &mut Criterion) {
    let g = gen_signatures(2048, 256, 1.0, 1).unwrap();
    let w = make_transform(256, 256, 2).unwrap();
    let mut group = c.benchmark_group("embed_2048x256");
    for exec in MODES {
        group.bench_function(BenchmarkId::from_parameter(label(exec)), |b| {
            b.iter(|| embed_columns(black_box(g.matrix()), &w, 0.6, exec).unwrap())
        });
    }
    group.finish();
}

fn scores(c: &mut Criterion) {
    let w = make_transform(256, 256, 3).unwrap();
    let queries = embed_columns(
        gen_signatures(1000, 256, 1.0, 4).unwrap().matrix(),
        &w,
        0.6,
        Exec::Sequential,
    )
    .unwrap();
    let reps = embed_columns(
        gen_signatures(64, 256, 1.0, 5).unwrap().matrix(),
        &w,
        0.6,
        Exec::Sequential,
    )
    .unwrap();
    let mut group = c.benchmark_group("score_matrix_1000x64");
    for exec in MODES {
        group.bench_function(BenchmarkId::from_parameter(label(exec)), |b| {
            b.iter(|| score_matrix(black_box(&queries), &reps, exec).unwrap())
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let g = gen_signatures(1024, 64, 1.0, 6).unwrap();
    let mut group = c.benchmark_group("kmeans_1024x64_m16");
    group.sample_size(10);
    for exec in MODES {
        group.bench_function(BenchmarkId::from_parameter(label(exec)), |b| {
            b.iter(|| kmeans(black_box(&g), 16, 7, 20, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, embedding, scores, clustering);
criterion_main!(benches);
