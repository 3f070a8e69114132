//! Constants fixed once by Monte-Carlo calibration and stored in
//! `calibration.json` next to this crate's manifest. Regenerate with
//! `cargo run --release -p fp-audit-core --example calibrate`.
//!
//! None of these are theoretical constants: each is the value one seeded
//! calibration run produced for a concrete configuration.

use serde::{Deserialize, Serialize};

use crate::distributions::{sample_gaussian, PriorSpec};
use crate::error::Result;
use crate::fingerprint::{cv_adjusted_stats, run_attack, AttackConfig, AttackOptions, ZPrimeMode};
use crate::linalg::{eigen_extremes, frobenius_norm, SymMatrix, Vector};
use crate::mechanisms::{CovarianceMechanism, DpGaussCov, DpGaussMean, MeanMechanism, PrivacyParams, Shrinkage};
use crate::parallel::Runner;
use crate::rng::{sub_seed, SimRng};
use crate::stats::{quantile, MeanSe};

const EMBEDDED: &str = include_str!("../calibration.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub seed: u64,
    pub prior_lambda_min: PriorLambdaMin,
    pub dp_covariance: DpCovarianceCalibration,
    pub dp_mean: DpMeanCalibration,
    pub median_boost: MedianBoostCalibration,
    pub tradeoff: TradeoffCalibration,
    pub hanson_wright: HansonWrightCalibration,
}

/// `c` such that `lambda_min(S) >= c` for at least two thirds of prior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorLambdaMin {
    pub c: f64,
    pub dims: Vec<usize>,
    pub draws: usize,
    /// Lower-third quantile of `lambda_min` per dimension.
    pub third_quantiles: Vec<f64>,
}

/// Sample size at which `dp-gauss-cov` reaches Frobenius error `gamma` on
/// `N(0, I_d)` data with probability at least 2/3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpCovarianceCalibration {
    pub d: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub radius: f64,
    pub gamma: f64,
    pub n: usize,
    pub success_rate: f64,
    pub trials: usize,
}

/// Accuracy `alpha` that `dp-gauss-mean` reaches on `N(0, I_d)` with probability at least 2/3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpMeanCalibration {
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub radius: f64,
    pub alpha: f64,
    pub success_rate: f64,
    pub trials: usize,
}

/// Base configuration for the median-boost amplification check: `gamma` is
/// set so the single-batch mechanism succeeds with probability about 0.7.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianBoostCalibration {
    pub d: usize,
    pub batch_n: usize,
    pub batches: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub base_success_rate: f64,
    pub trials: usize,
}

/// Shrunk `dp-gauss-cov` family used for the privacy/accuracy tradeoff, and
/// the constant `C` in `stat <= C gamma eps` fitted at the largest epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCalibration {
    pub d: usize,
    pub n: usize,
    pub delta: f64,
    pub radius: f64,
    pub tau2: f64,
    pub epsilons: Vec<f64>,
    pub c_const: f64,
    pub trials: usize,
}

impl TradeoffCalibration {
    pub fn mechanism(&self, epsilon: f64) -> Result<DpGaussCov> {
        let center = PriorSpec::standard(self.d).mean().get(0, 0);
        Ok(DpGaussCov::new(PrivacyParams::new(epsilon, self.delta)?, self.radius)?
            .with_shrinkage(Shrinkage { tau2: self.tau2, center }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HansonWrightCalibration {
    pub c1: f64,
    /// Largest candidate that showed no violation on the calibration set.
    pub largest_passing: f64,
    pub candidates: Vec<f64>,
    pub trials: usize,
}

impl Calibration {
    /// The checked-in calibration.
    pub fn embedded() -> Self {
        serde_json::from_str(EMBEDDED).expect("embedded calibration.json is valid")
    }
}

fn identity_data_error(mech: &dyn CovarianceMechanism, d: usize, n: usize, trials: usize, seed: u64, runner: &Runner) -> Result<Vec<f64>> {
    let eye = SymMatrix::identity(d);
    runner.try_map_trials(trials, seed, |_, rng| {
        let x = sample_gaussian(&Vector::zeros(d), &eye, n, rng)?;
        Ok(frobenius_norm(&(&mech.estimate(&x, rng)? - &eye)))
    })
}

pub fn success_rate(errors: &[f64], threshold: f64) -> Result<MeanSe> {
    MeanSe::from_indicators(&errors.iter().map(|&e| e <= threshold).collect::<Vec<_>>())
}

pub fn calibrate_prior_lambda_min(dims: &[usize], draws: usize, seed: u64, runner: &Runner) -> Result<PriorLambdaMin> {
    let mut qs = Vec::new();
    for &d in dims {
        let sampler = PriorSpec::standard(d).sampler()?;
        let mins = runner.try_map_trials(draws, sub_seed(seed, &format!("lambda-min-{d}")), |_, rng| {
            Ok(eigen_extremes(&sampler.sample(rng)?)?.0)
        })?;
        qs.push(quantile(&mins, 1.0 / 3.0));
    }
    let c = 0.9 * qs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PriorLambdaMin {
        c: round_sig(c, 3),
        dims: dims.to_vec(),
        draws,
        third_quantiles: qs,
    })
}

/// Doubling then bisection over `n` for the smallest sample size whose
/// success rate minus 4 SE clears 2/3.
pub fn calibrate_dp_covariance(d: usize, gamma: f64, trials: usize, seed: u64, runner: &Runner) -> Result<DpCovarianceCalibration> {
    let privacy = PrivacyParams::new(1.0, 1e-6)?;
    let radius = crate::mechanisms::default_radius(d);
    let mech = DpGaussCov::new(privacy, radius)?;
    let rate_at = |n: usize| -> Result<MeanSe> {
        success_rate(&identity_data_error(&mech, d, n, trials, sub_seed(seed, &format!("dp-cov-{n}")), runner)?, gamma)
    };
    let ok = |r: &MeanSe| r.mean - 4.0 * r.se >= 2.0 / 3.0;
    let mut hi = 1000;
    while !ok(&rate_at(hi)?) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > hi / 50 {
        let mid = (lo + hi) / 2;
        if ok(&rate_at(mid)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let n = hi.div_ceil(500) * 500;
    let rate = rate_at(n)?;
    Ok(DpCovarianceCalibration {
        d,
        epsilon: privacy.epsilon,
        delta: privacy.delta,
        radius,
        gamma,
        n,
        success_rate: rate.mean,
        trials,
    })
}

pub fn calibrate_dp_mean(d: usize, n: usize, trials: usize, seed: u64, runner: &Runner) -> Result<DpMeanCalibration> {
    let privacy = PrivacyParams::new(1.0, 1e-6)?;
    let radius = crate::mechanisms::default_radius(d);
    let mech = DpGaussMean::new(privacy, radius)?;
    let errors = runner.try_map_trials(trials, sub_seed(seed, "dp-mean"), |_, rng| {
        let x = sample_gaussian(&Vector::zeros(d), &SymMatrix::identity(d), n, rng)?;
        Ok(mech.estimate(&x, rng)?.norm())
    })?;
    let alpha = round_sig(1.05 * quantile(&errors, 2.0 / 3.0), 3);
    Ok(DpMeanCalibration {
        d,
        n,
        epsilon: privacy.epsilon,
        delta: privacy.delta,
        radius,
        alpha,
        success_rate: success_rate(&errors, alpha)?.mean,
        trials,
    })
}

pub fn calibrate_median_boost(d: usize, batch_n: usize, batches: usize, trials: usize, seed: u64, runner: &Runner) -> Result<MedianBoostCalibration> {
    let privacy = PrivacyParams::new(1.0, 1e-6)?;
    let mech = DpGaussCov::new(privacy, crate::mechanisms::default_radius(d))?;
    let errors = identity_data_error(&mech, d, batch_n, trials, sub_seed(seed, "median-base"), runner)?;
    let gamma = round_sig(quantile(&errors, 0.7), 3);
    Ok(MedianBoostCalibration {
        d,
        batch_n,
        batches,
        epsilon: privacy.epsilon,
        delta: privacy.delta,
        gamma,
        base_success_rate: success_rate(&errors, gamma)?.mean,
        trials,
    })
}

/// Fits `C = stat / (gamma eps)` at the largest epsilon, where `stat` is the
/// control-variate mean of the per-sample statistic and `gamma` the 2/3
/// quantile of the Frobenius error.
pub fn calibrate_tradeoff(mut t: TradeoffCalibration, seed: u64, runner: &Runner) -> Result<TradeoffCalibration> {
    let eps = t.epsilons.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mech = t.mechanism(eps)?;
    let cfg = AttackConfig {
        d: t.d,
        n: t.n,
        trials: t.trials,
        master_seed: sub_seed(seed, "tradeoff"),
        options: AttackOptions { z_prime: ZPrimeMode::None },
        audit_privacy: None,
    };
    let rep = run_attack(&mech, &cfg, runner)?;
    let stat = MeanSe::from_values(&cv_adjusted_stats(&rep.records))?;
    t.c_const = round_sig(stat.mean / (rep.summary.gamma.two_thirds * eps), 3);
    Ok(t)
}

/// Largest `c1` among `candidates` with no Hanson-Wright violation on a
/// fixed set of covariances.
pub fn calibrate_hanson_wright(candidates: &[f64], trials: usize, seed: u64) -> Result<f64> {
    let sigmas = [
        SymMatrix::identity(20),
        SymMatrix::diag(&[4.0, 1.0, 1.0, 0.25, 0.25, 0.25])?,
        SymMatrix::diag(&[1.0])?,
    ];
    let ts: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
    let mut best = 0.0_f64;
    for &c1 in candidates {
        let mut rng = SimRng::seed_from(sub_seed(seed, "hanson-wright"));
        let mut ok = true;
        for s in &sigmas {
            ok &= crate::distributions::hanson_wright_check(s, &ts, c1, trials, &mut rng)?.pass();
        }
        if ok {
            best = best.max(c1);
        }
    }
    Ok(best)
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let p = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * p).round() / p
}
