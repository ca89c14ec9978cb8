//! Sequential against rayon-parallel execution of the two hot paths: Gram
//! assembly and cross-validated grid search.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kcrr::data::{make_synthetic, FriedmanFunction, NoiseFamily, NoiseSpec};
use kcrr::evalsel::{cv_select, CvOptions, Estimator, GridSpec};
use kcrr::kernel::{gram_with, GaussianKernel};
use kcrr::par::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_gram(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kern = GaussianKernel::new(0.5).unwrap();
    let mut group = c.benchmark_group("gram");
    for n in [250, 1000] {
        let x = FriedmanFunction::I.sample_inputs(&mut rng, n);
        for exec in [Exec::Sequential, Exec::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), n), &x, |b, x| {
                b.iter(|| gram_with(&kern, black_box(x.as_ref()), exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_cv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = NoiseSpec::new(NoiseFamily::Cauchy, 0.5).unwrap();
    let (train, _) = make_synthetic(FriedmanFunction::I, &noise, 200, 10, &mut rng).unwrap();
    let grid = GridSpec {
        lambdas: vec![1e-2, 1e-3],
        gammas: vec![0.5, 0.125],
        sigma2s: vec![1e-1, 1e-3],
        huber_sigmas: vec![1.0],
    };
    let mut group = c.benchmark_group("cv_select");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let opts = CvOptions { exec, ..CvOptions::default() };
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| cv_select(Estimator::Kcrr, &grid, black_box(&train), 5, 3, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_gram, bench_cv);
criterion_main!(benches);
