use fp_audit_core::distributions::{sample_heavy_tailed, sample_inverse_wishart, sample_wishart, Dataset, HeavyTailSpec};
use fp_audit_core::fingerprint::{attack_trial, decomposition_residual, hockey_stick_divergence, AttackOptions, DiscreteDist, ZPrimeMode};
use fp_audit_core::linalg::{frobenius_norm, inner_product, operator_norm, sqrt_psd, symmetrize, Matrix};
use fp_audit_core::mechanisms::{median_boost, Constant, CovarianceMechanism, DpGaussCov, Empirical, PrivacyParams};
use fp_audit_core::reductions::{empirical_cov_error_floor, pad_with_flags, RescaleReduction};
use fp_audit_core::stats::ks_statistic;
use fp_audit_core::{SimRng, SymMatrix, Vector};
use proptest::prelude::*;

fn sym(d: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-10.0..10.0f64, d * d).prop_map(move |v| symmetrize(&Matrix::from_vec(d, d, v)).unwrap())
}

fn sym_pair() -> impl Strategy<Value = (SymMatrix, SymMatrix)> {
    (1usize..=16).prop_flat_map(|d| (sym(d), sym(d)))
}

/// `Q diag(lambda) Q^T` with eigenvalues spanning at most six decades.
fn psd(d: usize) -> impl Strategy<Value = SymMatrix> {
    (sym(d), prop::collection::vec(-6.0..0.0f64, d)).prop_map(|(a, logs)| {
        let (_, q) = a.eigen().unwrap();
        let l = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(logs.len(), logs.iter().map(|x| 10f64.powf(*x))));
        symmetrize(&(&q * l * q.transpose())).unwrap()
    })
}

fn dataset(n: usize, d: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(-3.0..3.0f64, n * d).prop_map(move |v| Dataset::from_flat(d, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cauchy_schwarz((a, b) in sym_pair()) {
        let ip = inner_product(&a, &b).unwrap();
        prop_assert!(ip.abs() <= frobenius_norm(&a) * frobenius_norm(&b) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn frobenius_of_congruence((j, p) in sym_pair()) {
        let jpj = j.congruence(&p).unwrap();
        let bound = frobenius_norm(&p) * operator_norm(&j).unwrap().powi(2);
        prop_assert!(frobenius_norm(&jpj) <= bound * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn sqrt_reconstructs(a in (1usize..=12).prop_flat_map(psd)) {
        let r = sqrt_psd(&a).unwrap();
        let back = symmetrize(&(r.as_matrix() * r.as_matrix())).unwrap();
        prop_assert!(frobenius_norm(&(&back - &a)) <= 1e-9 * frobenius_norm(&a));
    }

    #[test]
    fn samplers_are_pure_in_seed(d in 1usize..=5, extra in 2usize..8, seed in any::<u64>()) {
        let v = SymMatrix::identity(d);
        let draw = |s: u64| {
            let mut rng = SimRng::seed_from(s);
            (sample_wishart(&v, d + extra, &mut rng).unwrap(), sample_inverse_wishart(&v, d + extra, &mut rng).unwrap())
        };
        prop_assert_eq!(draw(seed), draw(seed));
        let spec = HeavyTailSpec::new(2, 0.5, Vector::zeros(d)).unwrap();
        let h = |s: u64| sample_heavy_tailed(&spec, 20, &mut SimRng::seed_from(s)).unwrap();
        prop_assert_eq!(h(seed), h(seed));
    }

    #[test]
    fn decomposition_identity_holds_per_trial(d in 1usize..=6, n in 1usize..=40, seed in any::<u64>(), trial in 0usize..1000) {
        let opts = AttackOptions { z_prime: ZPrimeMode::Subset(2) };
        let c = Constant { value: SymMatrix::scaled_identity(d, 2.0) };
        let dp = DpGaussCov::new(PrivacyParams::new(1.0, 1e-6).unwrap(), 3.0).unwrap();
        let mechs: [&dyn CovarianceMechanism; 3] = [&Empirical, &c, &dp];
        for m in mechs {
            let rec = attack_trial(m, d, n, seed, trial, &opts).unwrap();
            prop_assert!(decomposition_residual(&rec) <= 1e-9, "{}", m.id());
        }
    }

    #[test]
    fn dp_cov_is_lipschitz_under_coupling(x in dataset(12, 3), row in prop::collection::vec(-5.0..5.0f64, 3), i in 0usize..12, seed in any::<u64>()) {
        let y = x.with_replaced(i, &row).unwrap();
        let p = PrivacyParams::new(1.0, 1e-6).unwrap();
        let mechs: [Box<dyn CovarianceMechanism>; 2] = [
            Box::new(DpGaussCov::new(p, 2.0).unwrap()),
            Box::new(RescaleReduction::new(Box::new(DpGaussCov::new(p, 1.0).unwrap()), 3)),
        ];
        for m in &mechs {
            let a = m.estimate(&x, &mut SimRng::seed_from(seed)).unwrap();
            let b = m.estimate(&y, &mut SimRng::seed_from(seed)).unwrap();
            let sens = m.sensitivity(12, 3).unwrap();
            prop_assert!(frobenius_norm(&(&a - &b)) <= sens * (1.0 + 1e-9), "{}", m.id());
        }
    }

    #[test]
    fn padding_moves_at_most_one_slot(x in dataset(10, 2), row in prop::collection::vec(-5.0..5.0f64, 2), i in 0usize..10, flags in prop::collection::vec(any::<bool>(), 1..30)) {
        let y = x.with_replaced(i, &row).unwrap();
        let (px, py) = (pad_with_flags(&x, &flags), pad_with_flags(&y, &flags));
        let differing = (0..flags.len()).filter(|&s| px.row(s) != py.row(s)).count();
        prop_assert!(differing <= 1);
    }

    #[test]
    fn median_stays_in_entrywise_hull(ms in prop::collection::vec(sym(3), 1..9)) {
        let med = median_boost(&ms, f64::INFINITY).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let lo = ms.iter().map(|m| m.get(r, c)).fold(f64::INFINITY, f64::min);
                let hi = ms.iter().map(|m| m.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= med.get(r, c) && med.get(r, c) <= hi);
                prop_assert!(ms.iter().any(|m| m.get(r, c) == med.get(r, c)));
            }
        }
    }

    #[test]
    fn hockey_stick_is_a_bounded_divergence(ps in prop::collection::vec(0.01..1.0f64, 2..6), qs in prop::collection::vec(0.01..1.0f64, 2..6), eps in 0.0..3.0f64) {
        let k = ps.len().min(qs.len());
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let support: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let p = DiscreteDist::new(support.clone(), norm(&ps[..k])).unwrap();
        let q = DiscreteDist::new(support, norm(&qs[..k])).unwrap();
        let h = hockey_stick_divergence(&p, &q, eps).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&h));
        prop_assert!(hockey_stick_divergence(&p, &p, eps).unwrap().abs() <= 1e-12);
        prop_assert!(hockey_stick_divergence(&p, &q, eps + 0.5).unwrap() <= h + 1e-12);
    }

    #[test]
    fn error_floor_is_a_valid_error(d in 1usize..100_000, n in 1usize..100_000, eps in 0.01..4.0f64) {
        let f = empirical_cov_error_floor(d, n, eps).unwrap();
        prop_assert!(f.value > 0.0 && f.value <= 1.0 + 1e-12);
        let more = empirical_cov_error_floor(d, n * 2, eps).unwrap();
        prop_assert!(more.value <= f.value * (1.0 + 1e-12));
    }

    #[test]
    fn ks_statistic_is_in_unit_interval(xs in prop::collection::vec(-5.0..5.0f64, 1..50)) {
        let k = ks_statistic(&xs, |x| 1.0 / (1.0 + (-x).exp()));
        prop_assert!((0.0..=1.0).contains(&k));
    }
}
