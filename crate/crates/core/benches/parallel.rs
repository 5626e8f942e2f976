//! Sequential vs rayon execution of the data-parallel stages.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use weightflow::canon::canonicalize_population;
use weightflow::data::make_blobs;
use weightflow::flow::{sample_with, FlowConfig, FlowModel};
use weightflow::metrics::distribution_distances;
use weightflow::nn::{init_weights, train_population, Activation, ArchitectureSpec, InitScheme, TrainHyper};
use weightflow::par::Execution;
use weightflow::pca::{fit_dual, DualOptions};
use weightflow::rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn random_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::split(seed, 0);
    Array2::from_shape_fn((n, d), |_| rng::normal(&mut r))
}

fn population(c: &mut Criterion) {
    let (train, _) = make_blobs(4, 50, 16, 1.0, 0).unwrap();
    let arch = ArchitectureSpec::mlp(&[16, 32, 4], Activation::Relu).unwrap();
    let hyper = TrainHyper::adam(16, 5, 0);
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("train_population");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_population(exec, &arch, &train, None, &hyper, &seeds).unwrap())
        });
    }
    g.finish();
}

fn canonicalize(c: &mut Criterion) {
    let arch = ArchitectureSpec::mlp(&[32, 64, 64, 10], Activation::Relu).unwrap();
    let pop: Vec<_> = (0..8).map(|s| init_weights(&arch, InitScheme::Kaiming, s)).collect();
    let mut g = c.benchmark_group("canonicalize_population");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| canonicalize_population(exec, &pop, 0, 20).unwrap())
        });
    }
    g.finish();
}

fn dual_pca(c: &mut Criterion) {
    let x = random_rows(64, 4000, 1);
    let mut g = c.benchmark_group("fit_dual");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = DualOptions {
            micro_batch: 8,
            exact_eigen: true,
            seed: 0,
            execution: exec,
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| fit_dual(&x, 16, &opts).unwrap()));
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let cfg = FlowConfig {
        steps: 20,
        ..FlowConfig::new(64, 128)
    };
    let model = FlowModel::init(&cfg, &mut rng::split(0, 0)).unwrap();
    let mut g = c.benchmark_group("flow_sample");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_with(exec, &model, 64, None, 0).unwrap())
        });
    }
    g.finish();
}

fn distances(c: &mut Criterion) {
    let a = random_rows(100, 2000, 2);
    let b = random_rows(100, 2000, 3);
    let mut g = c.benchmark_group("distribution_distances");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| distribution_distances(exec, &a, &b).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, population, canonicalize, dual_pca, sampling, distances);
criterion_main!(benches);
