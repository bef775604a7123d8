use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orthsc::inference::{infer_batch, InferenceMode, Solver};
use orthsc::learning::{dict_gradient_with, svd_orthogonalize};
use orthsc::sconv::{sconv_forward_with, ConvSolver};
use orthsc::{Exec, FeatureMap, RegCoeffs, Sample, SignPolicy};

fn values(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dictionary(m: usize, n: usize) -> orthsc::Dictionary {
    svd_orthogonalize(&DMatrix::from_vec(m, n, values(m * n, 1))).unwrap()
}

fn samples(m: usize, count: usize) -> Vec<Sample> {
    values(m * count, 2).chunks(m).map(|c| Sample::from_slice(c).unwrap()).collect()
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_inference(c: &mut Criterion) {
    let phi = dictionary(144, 100);
    let xs = samples(144, 2000);
    let mut g = c.benchmark_group("infer_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("closed", name), |b| {
            b.iter(|| infer_batch(exec, &phi, black_box(&xs), &InferenceMode::Lasso(0.1), Solver::Closed).unwrap())
        });
        g.bench_function(BenchmarkId::new("iterative", name), |b| {
            b.iter(|| infer_batch(exec, &phi, black_box(&xs[..200]), &InferenceMode::Lasso(0.1), Solver::Iterative).unwrap())
        });
    }
    g.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let phi = dictionary(144, 100);
    let xs = samples(144, 1000);
    let reg = RegCoeffs::shared(0.1, SignPolicy::Free).unwrap();
    let mut g = c.benchmark_group("dict_gradient");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| dict_gradient_with(exec, phi.matrix(), black_box(&xs[..]), &reg).unwrap()));
    }
    g.finish();
}

fn bench_sconv(c: &mut Criterion) {
    let (n, ch, window) = (32, 4, 3);
    let map = FeatureMap::new(n, ch, values(n * n * ch, 3)).unwrap();
    let phi = dictionary(window * window * ch, 16);
    let reg = RegCoeffs::shared(0.05, SignPolicy::NonNegativeOnly).unwrap();
    let mut g = c.benchmark_group("sconv_forward");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| sconv_forward_with(exec, black_box(&map), &phi, &reg, window, 1, ConvSolver::OrthClosedForm).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_inference, bench_gradient, bench_sconv);
criterion_main!(benches);
