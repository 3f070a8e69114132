use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fp_audit_core::distributions::{sample_gaussian, WishartSampler};
use fp_audit_core::fingerprint::{attack_trial, z_statistic, AttackOptions, ZPrimeMode};
use fp_audit_core::mechanisms::{default_radius, CovarianceMechanism, DpGaussCov, Empirical, PrivacyParams};
use fp_audit_core::{PriorSpec, SimRng, SymMatrix, Vector};

fn z_stat(c: &mut Criterion) {
    let mut g = c.benchmark_group("z_statistic");
    for d in [4, 16, 32] {
        let mut rng = SimRng::seed_from(1);
        let sigma = PriorSpec::standard(d).sample(&mut rng).unwrap();
        let m = sigma.scale(1.1);
        let x = Vector::new((0..d).map(|_| rng.standard_normal()).collect()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| z_statistic(black_box(&m), &sigma, &x).unwrap())
        });
    }
    g.finish();
}

fn wishart(c: &mut Criterion) {
    let mut g = c.benchmark_group("wishart_sample");
    for d in [4, 16, 32] {
        let w = WishartSampler::new(&SymMatrix::identity(d), 2 * d).unwrap();
        let mut rng = SimRng::seed_from(2);
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| b.iter(|| w.sample(&mut rng)));
    }
    g.finish();
}

fn dp_cov(c: &mut Criterion) {
    let mut g = c.benchmark_group("dp_gauss_cov");
    for (d, n) in [(8, 512), (32, 512)] {
        let mech = DpGaussCov::new(PrivacyParams::new(1.0, 1e-6).unwrap(), default_radius(d)).unwrap();
        let mut rng = SimRng::seed_from(3);
        let x = sample_gaussian(&Vector::zeros(d), &SymMatrix::identity(d), n, &mut rng).unwrap();
        g.bench_function(format!("d{d}_n{n}"), |b| b.iter(|| mech.estimate(black_box(&x), &mut rng).unwrap()));
    }
    g.finish();
}

fn trial(c: &mut Criterion) {
    let opts = AttackOptions { z_prime: ZPrimeMode::Subset(16) };
    let mut g = c.benchmark_group("attack_trial");
    g.bench_function("empirical_d8_n64", |b| {
        let mut t = 0;
        b.iter(|| {
            t += 1;
            attack_trial(&Empirical, 8, 64, 7, t, &opts).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, z_stat, wishart, dp_cov, trial);
criterion_main!(benches);
