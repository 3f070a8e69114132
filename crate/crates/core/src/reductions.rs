//! Constructive reductions between estimation problems and closed-form
//! sample-complexity predictors.
//!
//! * Bernoulli padding turns Gaussian samples into draws from the heavy-tailed
//!   mixture (see [`HeavyTailSpec`](crate::distributions::HeavyTailSpec)).
//! * The rescale wrapper turns an empirical-covariance estimator for unit-ball
//!   data into a Gaussian covariance estimator.
//!
//! The predictors omit constants and logarithmic factors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::distributions::Dataset;
use crate::error::{invalid, Result};
use crate::linalg::SymMatrix;
use crate::mechanisms::{clip_dataset, CovarianceMechanism, PrivacyParams};
use crate::rng::SimRng;

/// Parameters of the padding and rescale reductions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    pub k: u32,
    pub beta: f64,
    pub m_inner: usize,
    pub n_outer: usize,
    pub radius: f64,
    pub scale: f64,
}

impl ReductionConfig {
    /// `n_outer = ceil(m / (100 beta^{k/(k-1)}))`, `R = 20 sqrt(d)`, scale `400 d`.
    pub fn from_recipe(k: u32, beta: f64, m_inner: usize, d: usize) -> Result<Self> {
        let mut cfg = Self {
            k,
            beta,
            m_inner,
            n_outer: 0,
            radius: 20.0 * (d as f64).sqrt(),
            scale: 400.0 * d as f64,
        };
        cfg.validate_beta()?;
        cfg.n_outer = (m_inner as f64 / (100.0 * cfg.rate())).ceil() as usize;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the recipe from a target accuracy `alpha` and tail scale `T`
    /// via `beta = alpha T`.
    pub fn from_accuracy(k: u32, alpha: f64, tail: f64, m_inner: usize, d: usize) -> Result<Self> {
        Self::from_recipe(k, alpha * tail, m_inner, d)
    }

    fn validate_beta(&self) -> Result<()> {
        if self.k < 2 {
            return Err(invalid("moment order k must be at least 2"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        if self.beta > 1.0 {
            return Err(invalid(format!(
                "beta = alpha * T = {} exceeds 1; the padding construction only covers 1/T < alpha <= 1 with beta <= 1",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_beta()?;
        if self.n_outer == 0 || self.m_inner == 0 {
            return Err(invalid("sample counts must be positive"));
        }
        if !(self.radius > 0.0) {
            return Err(invalid("radius must be positive"));
        }
        Ok(())
    }

    /// Bernoulli rate `beta^{k/(k-1)}`.
    pub fn rate(&self) -> f64 {
        let k = f64::from(self.k);
        self.beta.powf(k / (k - 1.0))
    }
}

/// Draws `n_outer` Bernoulli(rate) indicators, then fills slot `i` with the
/// next unused input sample when its indicator is set and the input is not
/// exhausted, and with the zero vector otherwise.
pub fn pad_to_heavy_tailed(x: &Dataset, cfg: &ReductionConfig, rng: &mut SimRng) -> Result<Dataset> {
    cfg.validate()?;
    let rate = cfg.rate();
    let flags: Vec<bool> = (0..cfg.n_outer).map(|_| rng.bernoulli(rate)).collect();
    Ok(pad_with_flags(x, &flags))
}

/// Padding with externally supplied indicators.
pub fn pad_with_flags(x: &Dataset, flags: &[bool]) -> Dataset {
    let mut out = Dataset::zeros(flags.len(), x.dim());
    let mut next = 0;
    for (i, &z) in flags.iter().enumerate() {
        if z && next < x.len() {
            out.row_mut(i).copy_from_slice(x.row(next));
            next += 1;
        }
    }
    out
}

/// Exact `P(Bin(n_outer, rate) > m_inner)`.
pub fn exhaustion_probability(cfg: &ReductionConfig) -> Result<f64> {
    cfg.validate()?;
    let rate = cfg.rate();
    if cfg.m_inner >= cfg.n_outer {
        return Ok(0.0);
    }
    let bin = Binomial::new(rate, cfg.n_outer as u64)
        .map_err(|e| invalid(format!("binomial parameters: {e}")))?;
    Ok(bin.sf(cfg.m_inner as u64).clamp(0.0, 1.0))
}

/// `scale * inner(clip_dataset(X, radius))` with `radius = 20 sqrt(d)` and
/// `scale = radius^2 = 400 d`.
pub struct RescaleReduction {
    pub inner: Box<dyn CovarianceMechanism>,
    pub radius: f64,
    pub scale: f64,
}

impl RescaleReduction {
    pub fn new(inner: Box<dyn CovarianceMechanism>, d: usize) -> Self {
        let radius = 20.0 * (d as f64).sqrt();
        Self {
            inner,
            radius,
            scale: radius * radius,
        }
    }
}

impl CovarianceMechanism for RescaleReduction {
    fn id(&self) -> String {
        format!("rescale({})", self.inner.id())
    }

    fn privacy(&self) -> Option<PrivacyParams> {
        self.inner.privacy()
    }

    fn estimate(&self, x: &Dataset, rng: &mut SimRng) -> Result<SymMatrix> {
        let y = clip_dataset(x, self.radius)?;
        Ok(self.inner.estimate(&y, rng)?.scale(self.scale))
    }

    fn sensitivity(&self, n: usize, d: usize) -> Option<f64> {
        self.inner.sensitivity(n, d).map(|s| s * self.scale)
    }
}

pub fn rescale_reduction_wrap(mech: Box<dyn CovarianceMechanism>, d: usize) -> RescaleReduction {
    RescaleReduction::new(mech, d)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
    }
    Ok(())
}

/// `d / alpha^2 + d^{3/2} / (alpha epsilon)`.
pub fn predicted_sample_complexity_covariance(d: usize, alpha: f64, epsilon: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    check_unit("epsilon", epsilon)?;
    let d = d as f64;
    Ok(d / (alpha * alpha) + d.powf(1.5) / (alpha * epsilon))
}

/// Accuracy at which the two covariance terms are equal, `epsilon / sqrt(d)`;
/// the privacy term dominates for larger `alpha`.
pub fn covariance_crossover_alpha(d: usize, epsilon: f64) -> f64 {
    epsilon / (d as f64).sqrt()
}

/// `d / alpha^2 + d / (alpha^{k/(k-1)} epsilon)`.
pub fn predicted_sample_complexity_heavy_tailed(d: usize, alpha: f64, epsilon: f64, k: u32) -> Result<f64> {
    check_unit("alpha", alpha)?;
    check_unit("epsilon", epsilon)?;
    if k < 2 {
        return Err(invalid("moment order k must be at least 2"));
    }
    let d = d as f64;
    let kf = f64::from(k);
    Ok(d / (alpha * alpha) + d / (alpha.powf(kf / (kf - 1.0)) * epsilon))
}

/// Which branch of the error floor applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloorRegime {
    /// `d <= N^{2/3}`: `d / N`.
    Linear,
    /// `N^{2/3} < d <= N^{4/3}`: `N^{-1/3}`.
    Plateau,
    /// `N^{4/3} < d <= N^2`: `sqrt(d) / N`.
    SquareRoot,
    /// `d > N^2`: the trivial error 1 of unit-ball data.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorFloor {
    pub value: f64,
    pub regime: FloorRegime,
}

/// Piecewise Frobenius error floor for private empirical covariance of
/// unit-ball data, with `N = epsilon * n` playing the role of the sample size
/// (so `epsilon = 1` gives the plain `n` regimes).
pub fn empirical_cov_error_floor(d: usize, n: usize, epsilon: f64) -> Result<ErrorFloor> {
    if d == 0 || n == 0 {
        return Err(invalid("d and n must be positive"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let big_n = epsilon * n as f64;
    let d = d as f64;
    // Compare in log space so boundary points like d = n^{2/3} land on the
    // intended side despite rounding.
    let r = d.ln() / big_n.ln().max(f64::MIN_POSITIVE);
    let tol = 1e-12;
    let (value, regime) = if big_n <= 1.0 {
        (1.0, FloorRegime::Saturated)
    } else if r <= 2.0 / 3.0 + tol {
        (d / big_n, FloorRegime::Linear)
    } else if r <= 4.0 / 3.0 + tol {
        (big_n.powf(-1.0 / 3.0), FloorRegime::Plateau)
    } else if r <= 2.0 + tol {
        (d.sqrt() / big_n, FloorRegime::SquareRoot)
    } else {
        (1.0, FloorRegime::Saturated)
    };
    Ok(ErrorFloor {
        value: value.min(1.0),
        regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample_gaussian;
    use crate::linalg::{frobenius_norm, Vector};
    use crate::mechanisms::{empirical_covariance_centered, EmpiricalCentered};

    #[test]
    fn recipe_rounds_up_and_rejects_large_beta() {
        let cfg = ReductionConfig::from_recipe(2, 0.5, 1000, 4).unwrap();
        assert_eq!(cfg.n_outer, 40);
        let cfg = ReductionConfig::from_recipe(3, 0.3, 1000, 4).unwrap();
        assert_eq!(cfg.n_outer, (1000.0 / (100.0 * 0.3f64.powf(1.5))).ceil() as usize);
        assert!(ReductionConfig::from_recipe(2, 1.2, 1000, 4).is_err());
        assert!(ReductionConfig::from_accuracy(2, 0.5, 4.0, 1000, 4).is_err());
    }

    #[test]
    fn padding_with_full_rate_is_prefix_then_zeros() {
        let x = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let cfg = ReductionConfig {
            k: 2,
            beta: 1.0,
            m_inner: 3,
            n_outer: 5,
            radius: 20.0,
            scale: 400.0,
        };
        let y = pad_to_heavy_tailed(&x, &cfg, &mut SimRng::seed_from(0)).unwrap();
        assert_eq!(y.to_rows(), vec![vec![1.0], vec![2.0], vec![3.0], vec![0.0], vec![0.0]]);
        let y = pad_with_flags(&x, &[false; 4]);
        assert!(y.as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exhaustion_examples() {
        let cfg = ReductionConfig::from_recipe(2, 0.3, 500, 2).unwrap();
        assert!(exhaustion_probability(&cfg).unwrap() <= 0.01);
        let mut sure = cfg.clone();
        sure.beta = 1.0;
        sure.n_outer = sure.m_inner;
        assert_eq!(exhaustion_probability(&sure).unwrap(), 0.0);
        let mut over = sure.clone();
        over.n_outer = over.m_inner + 1;
        assert!((exhaustion_probability(&over).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rescale_cancels_on_unclipped_data() {
        let d = 4;
        let x = sample_gaussian(&Vector::zeros(d), &SymMatrix::identity(d), 50, &mut SimRng::seed_from(2)).unwrap();
        let wrapped = rescale_reduction_wrap(Box::new(EmpiricalCentered), d);
        let out = wrapped.estimate(&x, &mut SimRng::seed_from(3)).unwrap();
        let direct = empirical_covariance_centered(&x);
        assert!(frobenius_norm(&(&out - &direct)) <= 1e-12 * frobenius_norm(&direct));
        assert_eq!(wrapped.id(), "rescale(empirical-centered)");
    }

    #[test]
    fn covariance_predictor_examples() {
        assert!((predicted_sample_complexity_covariance(100, 1.0, 1.0).unwrap() - 1100.0).abs() < 1e-9);
        let a = predicted_sample_complexity_covariance(10, 0.5, 0.5).unwrap();
        let b = predicted_sample_complexity_covariance(10, 0.25, 0.5).unwrap();
        assert!(b > 2.0 * a);
        // d = 4: the two terms meet at alpha = epsilon / 2.
        let eps = 0.8;
        let alpha = covariance_crossover_alpha(4, eps);
        assert!((alpha - eps / 2.0).abs() < 1e-15);
        let stat = 4.0 / (alpha * alpha);
        let priv_term = 8.0 / (alpha * eps);
        assert!((stat - priv_term).abs() < 1e-9);
        assert!(predicted_sample_complexity_covariance(4, 0.0, 1.0).is_err());
    }

    #[test]
    fn heavy_tail_predictor_examples() {
        let (d, a, e) = (7, 0.3, 0.6);
        let k2 = predicted_sample_complexity_heavy_tailed(d, a, e, 2).unwrap();
        assert!((k2 - (7.0 / (a * a) + 7.0 / (a * a * e))).abs() < 1e-9);
        for k in 2..8 {
            assert!((predicted_sample_complexity_heavy_tailed(5, 1.0, 1.0, k).unwrap() - 10.0).abs() < 1e-12);
        }
        assert!(predicted_sample_complexity_heavy_tailed(d, a, e, 3).unwrap() < k2);
        let far = predicted_sample_complexity_heavy_tailed(d, a, e, 10_000).unwrap();
        assert!((far - (7.0 / (a * a) + 7.0 / (a * e))).abs() < 1e-2);
    }

    #[test]
    fn error_floor_examples() {
        let f = empirical_cov_error_floor(1000, 1_000_000, 1.0).unwrap();
        assert_eq!(f.regime, FloorRegime::Linear);
        assert!((f.value - 1e-3).abs() < 1e-15);
        // boundaries: n = 10^6, n^{2/3} = 10^4, n^{4/3} = 10^8
        let lo = empirical_cov_error_floor(10_000, 1_000_000, 1.0).unwrap();
        assert!((lo.value - 0.01).abs() < 1e-12);
        let hi = empirical_cov_error_floor(100_000_000, 1_000_000, 1.0).unwrap();
        assert!((hi.value - 0.01).abs() < 1e-12);
        assert_eq!(
            empirical_cov_error_floor(1_000_000_000, 1_000_000, 1.0).unwrap().regime,
            FloorRegime::SquareRoot
        );
        assert_eq!(empirical_cov_error_floor(64, 2, 1.0).unwrap().regime, FloorRegime::Saturated);
    }
}
