//! Compare the sequential and rayon-parallel trial loops on a
//! representative Monte Carlo workload (batch NMSE of the shrinkage
//! pipelines on t-distributed samples).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use robcov::elliptical::{build_scatter, sample_with_rng, GeneratorSpec, ScatterSpec};
use robcov::harness::{run_trials, run_trials_sequential, trial_rng};
use robcov::linalg::{fro_dist_sq, fro_norm_sq};
use robcov::shrinkage::{estimate, EstimateOptions, EstimatorFamily, SphericityMethod};

fn trial(seed: u64, trial_idx: usize, n: usize, p: usize) -> robcov::Result<f64> {
    let scatter = ScatterSpec::<f64>::Ar1 {
        p,
        rho: 0.6,
        tau: 10.0,
    };
    let sigma = build_scatter(&scatter)?;
    let mut rng = trial_rng(seed, 0, trial_idx);
    let x = sample_with_rng(n, &scatter, &GeneratorSpec::Mvt { nu: 5.0 }, &mut rng)?;
    let (est, _) = estimate(
        &x,
        EstimatorFamily::Rhub,
        SphericityMethod::Ell1,
        &EstimateOptions::default(),
    )?;
    Ok(fro_dist_sq(&est.matrix.view(), &sigma.view()) / fro_norm_sq(&sigma.view()))
}

fn bench_trials(c: &mut Criterion) {
    let (n, p, trials) = (160, 24, 32);
    let mut group = c.benchmark_group("nmse_trials");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", trials), |b| {
        b.iter(|| {
            run_trials_sequential(trials, |t| trial(1, t, n, p))
                .unwrap()
                .iter()
                .sum::<f64>()
        })
    });
    #[cfg(feature = "parallel")]
    group.bench_function(BenchmarkId::new("parallel", trials), |b| {
        b.iter(|| {
            run_trials(trials, 0, |t| trial(1, t, n, p))
                .unwrap()
                .iter()
                .sum::<f64>()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_trials);
criterion_main!(benches);
