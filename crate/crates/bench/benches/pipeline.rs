use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use capire_bench::{cohort, feature_matrix};
use capire_core::analysis::{estimate_lag_ate, estimate_lag_cate, LagConfig};
use capire_core::archetype::{dbscan, embed_pca, run_pipeline, standardize, PipelineConfig};
use capire_core::curriculum::reference::civil_engineering;
use capire_core::synth::{generate_cohort, planted_blobs, SynthConfig};

fn synth(c: &mut Criterion) {
    let dag = civil_engineering();
    let mut g = c.benchmark_group("generate_cohort");
    for n in [500, 2000] {
        let cfg = SynthConfig { n_students: n, ..SynthConfig::default() };
        g.bench_with_input(BenchmarkId::from_parameter(n), &cfg, |b, cfg| {
            b.iter(|| generate_cohort(black_box(cfg), &dag).unwrap())
        });
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let data = cohort(2000, 1);
    c.bench_function("build_features/2000", |b| b.iter(|| feature_matrix(black_box(&data))));
}

fn dml(c: &mut Criterion) {
    let m = feature_matrix(&cohort(2000, 1));
    let cfg = LagConfig::default();
    c.bench_function("crossfit_ate/2000", |b| b.iter(|| estimate_lag_ate(black_box(&m), &cfg).unwrap()));
    c.bench_function("cate_spline/2000", |b| b.iter(|| estimate_lag_cate(black_box(&m), &cfg).unwrap()));
}

fn clustering(c: &mut Criterion) {
    let (x, _) = planted_blobs(3, 300, 8, 10.0, 3);
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("f{j}")).collect();
    let coords = embed_pca(&standardize(&x, &names).unwrap().data, 3).unwrap().coordinates;
    c.bench_function("dbscan/900", |b| b.iter(|| dbscan(black_box(&coords), 0.8, 5).unwrap()));
    let cfg = PipelineConfig::default();
    c.bench_function("archetype_pipeline/900", |b| b.iter(|| run_pipeline(black_box(&x), &names, &cfg).unwrap()));
}

criterion_group!(benches, synth, features, dml, clustering);
criterion_main!(benches);
