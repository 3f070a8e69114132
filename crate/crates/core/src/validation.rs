//! Monte-Carlo validation suite. Each numbered criterion produces one or more
//! [`CheckResult`]s; criterion 0 collects supplementary checks of the same
//! machinery. All randomness derives from the suite seed via labelled
//! [`sub_seed`]s, so results do not depend on the worker count.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, InverseGamma};
use statrs::function::gamma::ln_gamma;

use crate::calibration::{success_rate, Calibration};
use crate::distributions::{
    double_factorial, hanson_wright_check, heavy_tail_moment_bound, inverse_wishart_mean,
    kth_moment_estimate, log_density_inverse_wishart, prior_tail_bound, sample_gaussian, sample_heavy_tailed,
    wishart_mean, Dataset, GaussianSampler, HeavyTailSpec, InverseWishartSampler, PriorSpec, WishartSampler,
};
use crate::error::Result;
use crate::fingerprint::{
    cv_adjusted_stats, decomposition_residual, expectation_gap_check, hockey_stick_divergence, paired_scores,
    posterior_gap, posterior_mean, posterior_sampler, privacy_transfer_check, run_attack, variance_ceiling,
    variance_oracle_zprime, AttackConfig, AttackOptions, AttackReport, DiscreteDist, ZPrimeMode, TRANSFER_BINS,
};
use crate::linalg::{eigen_extremes, frobenius_norm, Matrix, SymMatrix, Vector};
use crate::mechanisms::{
    build_mechanism, default_radius, empirical_second_moment, CovarianceMechanism, DpGaussCov, DpGaussMean,
    MeanMechanism, MechanismParams, MedianBoost, PrivacyParams, Shrinkage,
};
use crate::parallel::Runner;
use crate::reductions::{exhaustion_probability, pad_to_heavy_tailed, ReductionConfig, RescaleReduction};
use crate::rng::{sub_seed, SimRng};
use crate::stats::{ks_statistic, ks_two_sample, log_log_slope, spearman, MeanSe, QuadratureCdf, SE_MULTIPLIER};

/// Criterion numbers and short names.
pub const CRITERIA: [(u8, &str); 9] = [
    (1, "algebraic identity"),
    (2, "unbiasedness of Z'"),
    (3, "variance oracle"),
    (4, "conjugacy"),
    (5, "inverse-Wishart facts"),
    (6, "empirical-covariance MSE"),
    (7, "heavy-tailed mixture"),
    (8, "privacy structure"),
    (9, "tradeoff demonstration"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Reduced trial counts for smoke runs.
    Quick,
    /// The trial counts the criteria are stated at.
    Full,
}

impl Scale {
    fn pick(self, full: usize, quick: usize) -> usize {
        match self {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }
}

/// One pass/fail line. `estimate`, `target` and `se` describe the decisive
/// comparison; `detail` carries anything else worth reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub criterion: u8,
    pub name: String,
    pub pass: bool,
    pub estimate: f64,
    pub target: f64,
    pub se: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(criterion: u8, name: impl Into<String>, pass: bool, estimate: f64, target: f64, se: f64) -> Self {
        Self {
            criterion,
            name: name.into(),
            pass,
            estimate,
            target,
            se,
            detail: String::new(),
        }
    }

    fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    /// Pass when `|est.mean - target| <= 4 SE`.
    fn within(criterion: u8, name: impl Into<String>, est: MeanSe, target: f64) -> Self {
        Self::new(criterion, name, est.within_4se(target), est.mean, target, est.se)
    }

    /// Pass when `est.mean <= bound + 4 SE`.
    fn at_most(criterion: u8, name: impl Into<String>, est: MeanSe, bound: f64) -> Self {
        Self::new(criterion, name, est.at_most(bound, SE_MULTIPLIER), est.mean, bound, est.se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub scale: Scale,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `None` when the report holds no check for criterion `k`.
    pub fn criterion_pass(&self, k: u8) -> Option<bool> {
        let mut it = self.checks.iter().filter(|c| c.criterion == k).peekable();
        it.peek()?;
        Some(it.all(|c| c.pass))
    }
}

/// KS acceptance threshold: 0.01, or the 0.1% critical value when `n` is too
/// small for 0.01 to be attainable.
pub fn ks_threshold(n: usize) -> f64 {
    0.01_f64.max(1.95 / (n as f64).sqrt())
}

pub struct Validator<'a> {
    pub seed: u64,
    pub scale: Scale,
    pub runner: &'a Runner,
    pub calibration: Calibration,
}

impl<'a> Validator<'a> {
    pub fn new(seed: u64, scale: Scale, runner: &'a Runner) -> Self {
        Self {
            seed,
            scale,
            runner,
            calibration: Calibration::embedded(),
        }
    }

    fn seed(&self, label: &str) -> u64 {
        sub_seed(self.seed, label)
    }

    /// Checks for criterion `k` (1 to 9), or the supplementary set for 0.
    pub fn criterion(&self, k: u8) -> Result<Vec<CheckResult>> {
        match k {
            0 => self.supplementary(),
            1 => self.algebraic_identity(),
            2 => self.unbiasedness(),
            3 => self.variance_oracle(),
            4 => self.conjugacy(),
            5 => self.inverse_wishart_facts(),
            6 => self.empirical_mse(),
            7 => self.heavy_tailed(),
            8 => self.privacy_structure(),
            9 => self.tradeoff(),
            _ => Err(crate::error::invalid(format!("no criterion {k}"))),
        }
    }

    pub fn run(&self, criteria: &[u8]) -> Result<ValidationReport> {
        let mut checks = Vec::new();
        for &k in criteria {
            checks.extend(self.criterion(k)?);
        }
        Ok(ValidationReport {
            seed: self.seed,
            scale: self.scale,
            checks,
        })
    }

    pub fn run_all(&self) -> Result<ValidationReport> {
        let all: Vec<u8> = CRITERIA.iter().map(|c| c.0).chain([0]).collect();
        self.run(&all)
    }

    fn attack(&self, mech: &dyn CovarianceMechanism, d: usize, n: usize, trials: usize, mode: ZPrimeMode, label: &str) -> Result<AttackReport> {
        let cfg = AttackConfig {
            d,
            n,
            trials,
            master_seed: self.seed(label),
            options: AttackOptions { z_prime: mode },
            audit_privacy: None,
        };
        run_attack(mech, &cfg, self.runner)
    }

    fn algebraic_identity(&self) -> Result<Vec<CheckResult>> {
        let trials = self.scale.pick(2500, 250);
        let mut out = Vec::new();
        for id in ["empirical", "constant", "dp-gauss-cov"] {
            let mut worst = 0.0_f64;
            let mut count = 0;
            for (d, n) in [(1, 8), (2, 16), (4, 32), (8, 64)] {
                let mech = build_mechanism(id, d, &MechanismParams::default())?;
                let rep = self.attack(mech.as_ref(), d, n, trials, ZPrimeMode::None, &format!("c1/{id}/{d}/{n}"))?;
                worst = rep.records.iter().map(decomposition_residual).fold(worst, f64::max);
                count += rep.records.len();
            }
            out.push(
                CheckResult::new(1, format!("decomposition residual [{id}]"), worst <= 1e-9, worst, 1e-9, 0.0)
                    .detail(format!("max relative residual over {count} trials, d in {{1,2,4,8}}")),
            );
        }
        Ok(out)
    }

    fn unbiasedness(&self) -> Result<Vec<CheckResult>> {
        let (d, n) = (8, 64);
        let trials = self.scale.pick(625, 125);
        let mut out = Vec::new();
        for id in ["empirical", "constant", "dp-gauss-cov"] {
            let mech = build_mechanism(id, d, &MechanismParams::default())?;
            let rep = self.attack(mech.as_ref(), d, n, trials, ZPrimeMode::Subset(16), &format!("c2/{id}"))?;
            let s = &rep.summary;
            out.push(
                CheckResult::within(2, format!("mean Z' = 0 [{id}]"), s.z_prime, 0.0)
                    .detail(format!("{} indices over {} trials; SE clustered by trial", s.z_prime_count, s.trials)),
            );
        }
        Ok(out)
    }

    fn variance_oracle(&self) -> Result<Vec<CheckResult>> {
        let d = 4;
        let pairs = self.scale.pick(20, 5);
        let draws = self.scale.pick(1_000_000, 100_000);
        let mut setup = SimRng::seed_from(self.seed("c3/pairs"));
        let wishart = WishartSampler::new(&SymMatrix::identity(d), d + 2)?;
        let mut out = Vec::new();
        for k in 0..pairs {
            let p = Matrix::from_fn(d, d, |_, _| setup.standard_normal());
            let sigma = wishart.sample(&mut setup).scale(1.0 / (d + 2) as f64);
            let sampler = GaussianSampler::centered(&sigma)?;
            let ys = self.runner.draws(draws, self.seed(&format!("c3/draws/{k}")), |rng, len| {
                let mut z = vec![0.0; d];
                let mut x = vec![0.0; d];
                Ok((0..len)
                    .map(|_| {
                        sampler.draw_into(rng, &mut z, &mut x);
                        let mut y = 0.0;
                        for i in 0..d {
                            for j in 0..d {
                                y += p[(i, j)] * (x[i] * x[j] - sigma.get(i, j));
                            }
                        }
                        y * y
                    })
                    .collect())
            })?;
            let var = MeanSe::from_values(&ys)?;
            let oracle = variance_oracle_zprime(&p, &sigma)?;
            let ceiling = variance_ceiling(&p, &sigma)?;
            out.push(CheckResult::within(3, format!("variance = oracle [pair {k}]"), var, oracle).detail(format!("{draws} draws")));
            out.push(CheckResult::at_most(3, format!("variance <= ceiling [pair {k}]"), var, ceiling));
        }
        Ok(out)
    }

    fn conjugacy(&self) -> Result<Vec<CheckResult>> {
        let mut out = vec![self.posterior_quadrature_ks()?];

        // Tower property at d = 4, n = 32.
        let (d, n) = (4, 32);
        let prior = PriorSpec::standard(d);
        let sampler = prior.sampler()?;
        let draws = self.scale.pick(10_000, 2_000);
        let means = self.runner.try_map_trials(draws, self.seed("c4/tower"), |_, rng| {
            let sigma = sampler.sample(rng)?;
            let x = sample_gaussian(&Vector::zeros(d), &sigma, n, rng)?;
            posterior_mean(&empirical_second_moment(&x), n, prior.dof)
        })?;
        out.push(matrix_mean_check(4, "E[posterior mean] = prior mean", &means, &prior.mean())?);

        // Posterior-gap slope at d = 8.
        let d = 8;
        let prior = PriorSpec::standard(d);
        let sampler = prior.sampler()?;
        let ns = [32usize, 64, 128, 256, 512];
        let trials = self.scale.pick(2_000, 400);
        let mut gaps = Vec::new();
        for &n in &ns {
            let g = self.runner.try_map_trials(trials, self.seed(&format!("c4/gap/{n}")), |_, rng| {
                let sigma = sampler.sample(rng)?;
                let x = sample_gaussian(&Vector::zeros(d), &sigma, n, rng)?;
                Ok(posterior_gap(&empirical_second_moment(&x), n, prior.dof)?.powi(2))
            })?;
            gaps.push(MeanSe::from_values(&g)?.mean);
        }
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let slope = log_log_slope(&xs, &gaps)?;
        out.push(
            CheckResult::new(4, "squared posterior-gap slope in n", (slope + 2.0).abs() <= 0.3, slope, -2.0, 0.0)
                .detail(format!("n = {ns:?}, E gap^2 = {:?}, tolerance 0.3", gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>())),
        );
        Ok(out)
    }

    /// d = 1 posterior draws against prior times likelihood, normalized by quadrature.
    fn posterior_quadrature_ks(&self) -> Result<CheckResult> {
        let d = 1;
        let n = 20;
        let prior = PriorSpec::standard(d);
        let mut rng = SimRng::seed_from(self.seed("c4/ks/data"));
        let sigma = prior.sample(&mut rng)?;
        let x = sample_gaussian(&Vector::zeros(d), &sigma, n, &mut rng)?;
        let s_hat = empirical_second_moment(&x).get(0, 0);
        let log_post = |s: f64| -> f64 {
            let lp = log_density_inverse_wishart(&SymMatrix::scaled_identity(1, s), &prior.scale, prior.dof, false)
                .unwrap_or(f64::NEG_INFINITY);
            lp - n as f64 / 2.0 * s.ln() - n as f64 * s_hat / (2.0 * s)
        };
        let grid: Vec<f64> = (0..=4000).map(|k| s_hat / 50.0 * 2500f64.powf(k as f64 / 4000.0)).collect();
        let peak = grid.iter().map(|&s| log_post(s)).fold(f64::NEG_INFINITY, f64::max);
        let cdf = QuadratureCdf::new(|s| (log_post(s) - peak).exp(), grid, 1e-13)?;
        let draws = self.scale.pick(100_000, 20_000);
        let post = posterior_sampler(&SymMatrix::scaled_identity(1, s_hat), n, prior.dof)?;
        let samples = self.runner.draws(draws, self.seed("c4/ks/draws"), |rng, len| {
            (0..len).map(|_| Ok(post.sample(rng)?.get(0, 0))).collect()
        })?;
        let ks = ks_statistic(&samples, |s| cdf.eval(s));
        let thr = ks_threshold(draws);
        Ok(CheckResult::new(4, "d=1 posterior vs quadrature (KS)", ks <= thr, ks, thr, 0.0)
            .detail(format!("n = {n}, S_hat = {s_hat:.4}, {draws} draws")))
    }

    fn inverse_wishart_facts(&self) -> Result<Vec<CheckResult>> {
        let draws = self.scale.pick(100_000, 20_000);
        let mut out = Vec::new();

        let v = SymMatrix::from_rows(&[vec![1.0, 0.3, 0.0], vec![0.3, 2.0, 0.1], vec![0.0, 0.1, 0.5]])?;
        let w = WishartSampler::new(&v, 10)?;
        let samples = self.runner.map_trials(draws, self.seed("c5/wishart"), |_, rng| w.sample(rng));
        out.push(matrix_mean_check(5, "Wishart mean (d=3, m=10)", &samples, &wishart_mean(&v, 10))?);

        let cases = [
            (SymMatrix::identity(2), 10),
            (SymMatrix::diag(&[1.0, 2.0, 3.0])?, 8),
            (SymMatrix::from_upper_fn(4, |i, j| if i == j { 1.5 } else { 0.5 }), 20),
        ];
        for (k, (scale, dof)) in cases.iter().enumerate() {
            let iw = InverseWishartSampler::new(scale, *dof)?;
            let samples = self.runner.try_map_trials(draws, self.seed(&format!("c5/iw/{k}")), |_, rng| iw.sample(rng))?;
            out.push(matrix_mean_check(
                5,
                format!("inverse-Wishart mean (d={}, m={dof})", scale.dim()),
                &samples,
                &inverse_wishart_mean(scale, *dof)?,
            )?);
        }

        let prior = PriorSpec::standard(4);
        let ps = prior.sampler()?;
        let samples = self.runner.try_map_trials(draws, self.seed("c5/prior-mean"), |_, rng| ps.sample(rng))?;
        out.push(matrix_mean_check(5, "prior mean (d=4)", &samples, &prior.mean())?);

        // d = 1 inverse-Wishart against the inverse-gamma CDF.
        let (scale, dof) = (2.0, 5);
        let iw = InverseWishartSampler::new(&SymMatrix::scaled_identity(1, scale), dof)?;
        let samples = self.runner.draws(draws, self.seed("c5/inv-gamma"), |rng, len| {
            (0..len).map(|_| Ok(iw.sample(rng)?.get(0, 0))).collect()
        })?;
        let ig = InverseGamma::new(dof as f64 / 2.0, scale / 2.0)
            .map_err(|e| crate::error::invalid(format!("inverse gamma: {e}")))?;
        let ks = ks_statistic(&samples, |x| ig.cdf(x));
        let thr = ks_threshold(draws);
        out.push(CheckResult::new(5, "d=1 inverse-Wishart vs inverse-gamma (KS)", ks <= thr, ks, thr, 0.0));

        // Operator-norm tails and minimum eigenvalue of the prior at d = 10.
        let d = 10;
        let ps = PriorSpec::standard(d).sampler()?;
        let spectra = self.runner.try_map_trials(draws, self.seed("c5/tails"), |_, rng| eigen_extremes(&ps.sample(rng)?))?;
        for (label, x) in [("e^3", 3f64.exp()), ("e^4", 4f64.exp())] {
            let hits: Vec<bool> = spectra.iter().map(|&(_, hi)| hi >= x).collect();
            out.push(CheckResult::at_most(
                5,
                format!("prior tail P(||S||_op >= {label}) (d=10)"),
                MeanSe::from_indicators(&hits)?,
                prior_tail_bound(d, x),
            ));
        }
        let c = self.calibration.prior_lambda_min.c;
        let above = MeanSe::from_indicators(&spectra.iter().map(|&(lo, _)| lo >= c).collect::<Vec<_>>())?;
        out.push(
            CheckResult::new(5, "prior P(lambda_min >= c) >= 2/3 (d=10)", above.mean + SE_MULTIPLIER * above.se >= 2.0 / 3.0, above.mean, 2.0 / 3.0, above.se)
                .detail(format!("calibrated c = {c}")),
        );
        Ok(out)
    }

    fn empirical_mse(&self) -> Result<Vec<CheckResult>> {
        let grid: Vec<(usize, SymMatrix)> = vec![
            (4, SymMatrix::diag(&[2.0])?),
            (8, SymMatrix::diag(&[1.0, 2.0])?),
            (16, SymMatrix::from_rows(&[vec![2.0, 0.5, 0.1], vec![0.5, 1.0, -0.3], vec![0.1, -0.3, 0.7]])?),
            (64, SymMatrix::identity(4)),
            (32, SymMatrix::diag(&(1..=8).map(|k| k as f64 / 4.0).collect::<Vec<_>>())?),
            (128, SymMatrix::from_upper_fn(16, |i, j| 0.6f64.powi((j - i) as i32))),
        ];
        let trials = self.scale.pick(20_000, 4_000);
        let mut out = Vec::new();
        for (k, (n, sigma)) in grid.iter().enumerate() {
            let d = sigma.dim();
            let sampler = GaussianSampler::centered(sigma)?;
            let errs = self.runner.map_trials(trials, self.seed(&format!("c6/{k}")), |_, rng| {
                frobenius_norm(&(&empirical_second_moment(&sampler.sample(*n, rng)) - sigma)).powi(2)
            });
            let tr = sigma.trace();
            let tr2 = frobenius_norm(sigma).powi(2);
            let exact = (tr * tr + tr2) / *n as f64;
            let est = MeanSe::from_values(&errs)?;
            out.push(
                CheckResult::within(6, format!("E||S_hat - S||_F^2 (d={d}, n={n})"), est, exact).detail(format!(
                    "exact (tr(S)^2 + tr(S^2))/n = {exact:.5}; the stated constants give 2tr(S)^2/n = {:.5} (ratio {:.3}) and 3tr(S)^2/n = {:.5} (ratio {:.3})",
                    2.0 * tr * tr / *n as f64,
                    est.mean / (2.0 * tr * tr / *n as f64),
                    3.0 * tr * tr / *n as f64,
                    est.mean / (3.0 * tr * tr / *n as f64),
                )),
            );
        }
        Ok(out)
    }

    fn heavy_tailed(&self) -> Result<Vec<CheckResult>> {
        let draws = self.scale.pick(1_000_000, 100_000);
        let mut out = Vec::new();

        let spec = HeavyTailSpec::new(2, 0.25, Vector::new(vec![0.5, -0.5, 0.5, 0.5])?)?;
        let chunks = self.runner.try_map_trials(draws.div_ceil(crate::parallel::DEFAULT_CHUNK), self.seed("c7/mean"), |c, rng| {
            let len = crate::parallel::DEFAULT_CHUNK.min(draws - c * crate::parallel::DEFAULT_CHUNK);
            sample_heavy_tailed(&spec, len, rng)
        })?;
        let mut coords = vec![Vec::with_capacity(draws); spec.dim()];
        for ch in &chunks {
            for row in ch.rows() {
                for (j, &x) in row.iter().enumerate() {
                    coords[j].push(x);
                }
            }
        }
        let target = spec.mean();
        let worst = coords
            .iter()
            .enumerate()
            .map(|(j, c)| Ok((MeanSe::from_values(c)?, target[j])))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max_by(|a, b| a.0.z_score(a.1).abs().total_cmp(&b.0.z_score(b.1).abs()))
            .expect("nonempty");
        out.push(
            CheckResult::within(7, "mixture mean = beta mu (worst coordinate)", worst.0, worst.1)
                .detail(format!("k=2, beta=0.25, d=4, {draws} draws")),
        );

        for k in [2u32, 4] {
            let beta = 0.1;
            let mut setup = SimRng::seed_from(self.seed(&format!("c7/moment-setup/{k}")));
            let d = 3;
            let v = unit_vector(d, &mut setup);
            let mu = unit_vector(d, &mut setup).scale(0.8);
            let spec = HeavyTailSpec::new(k, beta, mu)?;
            // Chunked so the estimate is independent of the worker count.
            let parts = self.runner.try_map_trials(16, self.seed(&format!("c7/moment/{k}")), |_, rng| {
                kth_moment_estimate(&spec, &v, draws / 16, rng)
            })?;
            let est = pool(&parts);
            out.push(
                CheckResult::at_most(7, format!("k-th moment bound (k={k})"), est, heavy_tail_moment_bound(k))
                    .detail(format!("beta = {beta}, d = {d}")),
            );
        }

        out.push(self.padding_adjacency()?);
        out.push(self.padding_ks()?);

        let cfg = ReductionConfig {
            k: 2,
            beta: 0.5,
            m_inner: 50,
            n_outer: 200,
            radius: 1.0,
            scale: 1.0,
        };
        let reps = self.scale.pick(100_000, 20_000);
        let rate = cfg.rate();
        let exhausted = self.runner.map_trials(reps, self.seed("c7/exhaustion"), |_, rng| {
            (0..cfg.n_outer).filter(|_| rng.bernoulli(rate)).count() > cfg.m_inner
        });
        out.push(
            CheckResult::within(7, "exhaustion probability vs MC", MeanSe::from_indicators(&exhausted)?, exhaustion_probability(&cfg)?)
                .detail("k=2, beta=0.5, m_inner=50, n_outer=200"),
        );
        Ok(out)
    }

    fn padding_adjacency(&self) -> Result<CheckResult> {
        let pairs = 1000;
        let results = self.runner.try_map_trials(pairs, self.seed("c7/adjacency"), |_, rng| {
            let k = 2 + rng.below(3) as u32;
            let beta = 0.05 + 0.95 * rng.uniform();
            let d = 1 + rng.below(4);
            let m = 5 + rng.below(46);
            let cfg = ReductionConfig::from_recipe(k, beta, m, d)?;
            let x = sample_gaussian(&Vector::zeros(d), &SymMatrix::identity(d), m, rng)?;
            let j = rng.below(m);
            let replacement: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
            let x2 = x.with_replaced(j, &replacement)?;
            let pad_seed = crate::rng::sub_seed(rand::RngCore::next_u64(rng), "pad");
            let a = pad_to_heavy_tailed(&x, &cfg, &mut SimRng::seed_from(pad_seed))?;
            let b = pad_to_heavy_tailed(&x2, &cfg, &mut SimRng::seed_from(pad_seed))?;
            Ok(a.rows().zip(b.rows()).filter(|(r, s)| r != s).count())
        })?;
        let violations = results.iter().filter(|&&c| c > 1).count();
        let max_diff = results.iter().copied().max().unwrap_or(0);
        Ok(
            CheckResult::new(7, "padding preserves adjacency", violations == 0, violations as f64, 0.0, 0.0)
                .detail(format!("{pairs} coupled pairs; max differing slots {max_diff}")),
        )
    }

    fn padding_ks(&self) -> Result<CheckResult> {
        let spec = HeavyTailSpec::new(2, 0.5, Vector::new(vec![0.6])?)?;
        let n_outer = self.scale.pick(100_000, 20_000);
        let cfg = ReductionConfig {
            k: spec.k,
            beta: spec.beta,
            m_inner: (0.3 * n_outer as f64) as usize,
            n_outer,
            radius: 1.0,
            scale: 1.0,
        };
        let mut rng = SimRng::seed_from(self.seed("c7/pad-ks"));
        let inner = sample_gaussian(
            &spec.component_mean(),
            &SymMatrix::scaled_identity(1, spec.inflation().powi(2)),
            cfg.m_inner,
            &mut rng,
        )?;
        let padded = pad_to_heavy_tailed(&inner, &cfg, &mut rng)?;
        let direct = sample_heavy_tailed(&spec, n_outer, &mut rng)?;
        let (dstat, p) = ks_two_sample(padded.as_flat(), direct.as_flat())?;
        Ok(CheckResult::new(7, "padded d=1 sample vs mixture (two-sample KS p)", p > 1e-3, p, 1e-3, 0.0)
            .detail(format!("D = {dstat:.5}, {n_outer} slots each")))
    }

    fn privacy_structure(&self) -> Result<Vec<CheckResult>> {
        let mut out = Vec::new();
        let p1 = PrivacyParams::new(1.0, 1e-6)?;
        type Build = Box<dyn Fn(usize) -> Result<Box<dyn CovarianceMechanism>> + Sync>;
        let cov: Vec<(&str, Build)> = vec![
            ("dp-gauss-cov", Box::new(move |d| Ok(Box::new(DpGaussCov::new(p1, default_radius(d))?) as Box<dyn CovarianceMechanism>))),
            (
                "dp-gauss-cov (R = sqrt d, shrinkage)",
                Box::new(move |d| {
                    let m = DpGaussCov::new(p1, (d as f64).sqrt())?.with_shrinkage(Shrinkage { tau2: 1.0, center: 1.0 });
                    Ok(Box::new(m) as Box<dyn CovarianceMechanism>)
                }),
            ),
            (
                "rescale(dp-gauss-cov)",
                Box::new(move |d| Ok(Box::new(RescaleReduction::new(Box::new(DpGaussCov::new(p1, 1.0)?), d)) as Box<dyn CovarianceMechanism>)),
            ),
        ];
        for (name, build) in &cov {
            out.push(self.lipschitz(name, |d, x, y, seed| {
                let m = build(d)?;
                let a = m.estimate(x, &mut SimRng::seed_from(seed))?;
                let b = m.estimate(y, &mut SimRng::seed_from(seed))?;
                let sens = m.sensitivity(x.len(), d).expect("DP mechanisms declare a sensitivity");
                Ok((frobenius_norm(&(&a - &b)), sens, frobenius_norm(&a)))
            })?);
        }
        for (name, radius) in [("dp-gauss-mean", None), ("dp-gauss-mean (R = 1)", Some(1.0))] {
            out.push(self.lipschitz(name, |d, x, y, seed| {
                let m = DpGaussMean::new(p1, radius.unwrap_or_else(|| default_radius(d)))?;
                let a = m.estimate(x, &mut SimRng::seed_from(seed))?;
                let b = m.estimate(y, &mut SimRng::seed_from(seed))?;
                let diff: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
                Ok((diff, m.sensitivity(x.len()).expect("declared"), a.norm()))
            })?);
        }
        out.push(self.expectation_gap()?);
        Ok(out)
    }

    /// Coupled runs on adjacent datasets with shared mechanism randomness;
    /// `f` returns `(||M(X) - M(X')||, declared sensitivity, ||M(X)||)`.
    fn lipschitz(&self, name: &str, f: impl Fn(usize, &Dataset, &Dataset, u64) -> Result<(f64, f64, f64)> + Sync) -> Result<CheckResult> {
        let pairs = 1000;
        let ratios = self.runner.try_map_trials(pairs, self.seed(&format!("c8/lipschitz/{name}")), |_, rng| {
            let d = 1 + rng.below(8);
            let n = 2 + rng.below(63);
            let s = (-2.0 + 6.0 * rng.uniform()).exp();
            let x = sample_gaussian(&Vector::zeros(d), &SymMatrix::scaled_identity(d, s * s), n, rng)?;
            let j = rng.below(n);
            let t = 3.0 * s * (-1.0 + 2.0 * rng.uniform()).exp();
            let replacement: Vec<f64> = (0..d).map(|_| t * rng.standard_normal()).collect();
            let y = x.with_replaced(j, &replacement)?;
            let (diff, sens, size) = f(d, &x, &y, rand::RngCore::next_u64(rng))?;
            let slack = 1e-12 * (1.0 + size);
            Ok((diff / sens, diff <= sens * (1.0 + 1e-9) + slack))
        })?;
        let violations = ratios.iter().filter(|r| !r.1).count();
        let worst = ratios.iter().map(|r| r.0).fold(0.0, f64::max);
        Ok(
            CheckResult::new(8, format!("coupled sensitivity [{name}]"), violations == 0, violations as f64, 0.0, 0.0)
                .detail(format!("{pairs} adjacent pairs; max ||M(X)-M(X')|| / sensitivity = {worst:.6}")),
        )
    }

    fn expectation_gap(&self) -> Result<CheckResult> {
        let pairs = 10_000;
        let results = self.runner.try_map_trials(pairs, self.seed("c8/expectation-gap"), |_, rng| {
            loop {
                let (p, q, eps, delta) = random_close_pair(rng)?;
                let rep = expectation_gap_check(&p, &q, eps, delta)?;
                if rep.precondition_met {
                    return Ok((rep.holds, rep.lhs / rep.rhs.max(f64::MIN_POSITIVE)));
                }
            }
        })?;
        let counterexamples = results.iter().filter(|r| !r.0).count();
        let tightest = results.iter().map(|r| r.1).fold(0.0, f64::max);
        Ok(
            CheckResult::new(8, "expectation-gap inequality", counterexamples == 0, counterexamples as f64, 0.0, 0.0)
                .detail(format!("{pairs} discrete pairs meeting the closeness precondition; max lhs/rhs = {tightest:.4}")),
        )
    }

    fn tradeoff(&self) -> Result<Vec<CheckResult>> {
        let t = &self.calibration.tradeoff;
        let trials = self.scale.pick(t.trials, 2_000);
        let (d, n) = (t.d, t.n);
        let base = build_mechanism("empirical", d, &MechanismParams::default())?;
        let np = self.attack(base.as_ref(), d, n, trials, ZPrimeMode::None, "c9/non-private")?;
        let diffs: Vec<f64> = np.records.iter().map(|r| r.per_sample_stat() - r.empirical_mse_oracle()).collect();
        let diff = MeanSe::from_values(&diffs)?;
        let floor = np.summary.stat_cv;
        let scale = (d * d) as f64 / n as f64;
        let mut out = vec![
            CheckResult::within(9, "non-private stat - exact MSE oracle", diff, 0.0).detail(format!(
                "stat = {:.4} +/- {:.4}, oracle = {:.4}, d^2/n = {scale:.4}, stat/(d^2/n) = {:.3}",
                np.summary.stat.mean,
                np.summary.stat.se,
                np.summary.empirical_floor_oracle.mean,
                np.summary.stat.mean / scale
            )),
            CheckResult::new(
                9,
                "non-private stat positive",
                np.summary.stat.mean > SE_MULTIPLIER * np.summary.stat.se,
                np.summary.stat.mean,
                0.0,
                np.summary.stat.se,
            ),
        ];

        let mut means = Vec::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &eps in &t.epsilons {
            let mech = t.mechanism(eps)?;
            let rep = self.attack(&mech, d, n, trials, ZPrimeMode::None, &format!("c9/eps-{eps}"))?;
            let cv = cv_adjusted_stats(&rep.records);
            let m = MeanSe::from_values(&cv)?;
            let gap_se = (m.se.powi(2) + floor.se.powi(2)).sqrt();
            out.push(
                CheckResult::new(9, format!("DP stat below non-private floor (eps={eps})"), m.mean + SE_MULTIPLIER * gap_se < floor.mean, m.mean, floor.mean, gap_se)
                    .detail(format!("shrink weight {:.4}, raw stat {:.4} +/- {:.4}", mech.shrink_weight(n, d), rep.summary.stat.mean, rep.summary.stat.se)),
            );
            let bound = t.c_const * rep.summary.gamma.two_thirds * eps;
            out.push(
                CheckResult::at_most(9, format!("DP stat <= C gamma eps (eps={eps})"), m, bound)
                    .detail(format!("C = {}, gamma_(2/3) = {:.4}", t.c_const, rep.summary.gamma.two_thirds)),
            );
            xs.extend(std::iter::repeat_n(eps, cv.len()));
            ys.extend(cv);
            means.push(m);
        }
        let increasing = means.windows(2).all(|w| w[0].mean < w[1].mean);
        out.push(
            CheckResult::new(9, "DP stat means increase with eps", increasing, means.last().map_or(f64::NAN, |m| m.mean), 0.0, 0.0).detail(format!(
                "means {:?}",
                means.iter().map(|m| format!("{:.4}+/-{:.4}", m.mean, m.se)).collect::<Vec<_>>()
            )),
        );
        let rank = spearman(&xs, &ys)?;
        out.push(
            CheckResult::new(9, "Spearman trend in eps (p < 0.01)", rank.rho > 0.0 && rank.p_value < 0.01, rank.p_value, 0.01, 0.0)
                .detail(format!("rho = {:.4} over {} trial-level pairs", rank.rho, rank.count)),
        );
        Ok(out)
    }

    fn supplementary(&self) -> Result<Vec<CheckResult>> {
        let mut out = Vec::new();
        let trials = self.scale.pick(100_000, 20_000);

        let c1 = self.calibration.hanson_wright.c1;
        let ts: Vec<f64> = (0..=40).map(|k| 0.5 * k as f64).collect();
        for (label, sigma) in [("I_20", SymMatrix::identity(20)), ("diag(4,1,1/4)", SymMatrix::diag(&[4.0, 1.0, 0.25])?)] {
            let mut rng = SimRng::seed_from(self.seed(&format!("s/hw/{label}")));
            let rep = hanson_wright_check(&sigma, &ts, c1, trials, &mut rng)?;
            let worst = rep.rows.iter().map(|r| r.empirical.mean - r.bound).fold(f64::NEG_INFINITY, f64::max);
            out.push(CheckResult::new(0, format!("Hanson-Wright tails [{label}]"), rep.pass(), worst, 0.0, 0.0).detail(format!("c1 = {c1}; estimate is max(empirical - bound)")));
        }

        let d = 5;
        let mut rng = SimRng::seed_from(self.seed("s/fourth"));
        let v = unit_vector(d, &mut rng);
        let x = sample_gaussian(&Vector::zeros(d), &SymMatrix::identity(d), trials, &mut rng)?;
        let vals: Vec<f64> = x.rows().map(|r| r.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum::<f64>().powi(4)).collect();
        out.push(CheckResult::within(0, "Gaussian 4th moment = 3", MeanSe::from_values(&vals)?, double_factorial(3)));

        let (d, n) = (4, 16);
        let null_trials = self.scale.pick(10_000, 2_000);
        let noise = build_mechanism("noise-only", d, &MechanismParams::default())?;
        let rep = self.attack(noise.as_ref(), d, n, null_trials, ZPrimeMode::Subset(1), "s/null")?;
        let (z, zp) = paired_scores(&rep.records);
        let (dstat, p) = ks_two_sample(&z, &zp)?;
        out.push(CheckResult::new(0, "data-independent mechanism: Z ~ Z' (KS p)", p > 1e-3, p, 1e-3, 0.0).detail(format!("D = {dstat:.4}")));

        let dp = build_mechanism("dp-gauss-cov", d, &MechanismParams { radius: Some(2.0 * (d as f64).sqrt()), ..Default::default() })?;
        let rep = self.attack(dp.as_ref(), d, n, null_trials, ZPrimeMode::Subset(4), "s/dp-scores")?;
        out.push(CheckResult::at_most(0, "E[Z'^2] <= 2||S||_op^2 E||M - S||_F^2", rep.summary.variance_ceiling_gap, 0.0));
        let (z, zp) = paired_scores(&rep.records);
        let tc = privacy_transfer_check(&z, &zp, dp.privacy().expect("dp"), TRANSFER_BINS)?;
        out.push(
            CheckResult::new(0, "binned Z vs Z' within privacy budget", tc.pass, tc.divergence_z_over_zprime.max(tc.divergence_zprime_over_z), tc.allowed, 0.0)
                .detail(format!("{} paired scores, {} bins", tc.samples, tc.bins)),
        );

        let sampler = posterior_sampler(&SymMatrix::identity(2), 5, 4)?;
        let samples = self.runner.try_map_trials(trials, self.seed("s/posterior"), |_, rng| sampler.sample(rng))?;
        out.push(matrix_mean_check(0, "posterior draw mean (d=2, m=4, n=5, S_hat=I)", &samples, &SymMatrix::scaled_identity(2, 1.5))?);

        out.push(self.dp_covariance_success()?);
        out.push(self.dp_mean_success()?);
        out.extend(self.median_amplification()?);

        out.extend(self.prior_tail_unsimplified()?);

        let cfg = ReductionConfig::from_recipe(2, 0.5, 100, 4)?;
        let pe = exhaustion_probability(&cfg)?;
        out.push(CheckResult::new(0, "recipe exhaustion probability <= 0.01", pe <= 0.01, pe, 0.01, 0.0));

        let d = 32;
        let r2 = 400.0 * d as f64;
        let x = sample_gaussian(&Vector::zeros(d), &SymMatrix::identity(d), trials, &mut SimRng::seed_from(self.seed("s/clip")))?;
        let clipped = x.rows().filter(|r| r.iter().map(|a| a * a).sum::<f64>() > r2).count();
        out.push(CheckResult::new(0, "rescale clipping never binds on N(0, I_32)", clipped == 0, clipped as f64, 0.0, 0.0));
        Ok(out)
    }

    /// Prior tails against `(m / sqrt x)^{m-d+1} / (m-d+1)!`, the smallest-
    /// eigenvalue bound for `W_d(I, m)` before it is simplified to `(e^2/x)^{d/2}`.
    fn prior_tail_unsimplified(&self) -> Result<Vec<CheckResult>> {
        let d = 10;
        let prior = PriorSpec::standard(d);
        let ps = prior.sampler()?;
        let draws = self.scale.pick(100_000, 20_000);
        let tops = self.runner.try_map_trials(draws, self.seed("s/tails"), |_, rng| Ok(eigen_extremes(&ps.sample(rng)?)?.1))?;
        let m = prior.dof as f64;
        let k = m - d as f64 + 1.0;
        let mut out = Vec::new();
        for (label, x) in [("e^3", 3f64.exp()), ("e^4", 4f64.exp())] {
            let bound = (k * (m / x.sqrt()).ln() - ln_gamma(k + 1.0)).exp().min(1.0);
            let hits: Vec<bool> = tops.iter().map(|&hi| hi >= x).collect();
            out.push(
                CheckResult::at_most(0, format!("prior tail vs unsimplified bound at {label} (d=10)"), MeanSe::from_indicators(&hits)?, bound)
                    .detail(format!("(e^2/x)^(d/2) = {:.3e}", prior_tail_bound(d, x))),
            );
        }
        Ok(out)
    }

    fn dp_covariance_success(&self) -> Result<CheckResult> {
        let c = &self.calibration.dp_covariance;
        let mech = DpGaussCov::new(PrivacyParams::new(c.epsilon, c.delta)?, c.radius)?;
        let trials = self.scale.pick(1000, 200);
        let eye = SymMatrix::identity(c.d);
        let errs = self.runner.try_map_trials(trials, self.seed("s/dp-cov"), |_, rng| {
            let x = sample_gaussian(&Vector::zeros(c.d), &eye, c.n, rng)?;
            Ok(frobenius_norm(&(&mech.estimate(&x, rng)? - &eye)))
        })?;
        let rate = success_rate(&errs, c.gamma)?;
        Ok(
            CheckResult::new(0, "calibrated dp-gauss-cov accuracy", rate.mean + SE_MULTIPLIER * rate.se >= 2.0 / 3.0, rate.mean, 2.0 / 3.0, rate.se)
                .detail(format!("d={}, n={}, gamma={:.4}, R={:.3}", c.d, c.n, c.gamma, c.radius)),
        )
    }

    fn dp_mean_success(&self) -> Result<CheckResult> {
        let c = &self.calibration.dp_mean;
        let mech = DpGaussMean::new(PrivacyParams::new(c.epsilon, c.delta)?, c.radius)?;
        let trials = self.scale.pick(2000, 400);
        let errs = self.runner.try_map_trials(trials, self.seed("s/dp-mean"), |_, rng| {
            let x = sample_gaussian(&Vector::zeros(c.d), &SymMatrix::identity(c.d), c.n, rng)?;
            Ok(mech.estimate(&x, rng)?.norm())
        })?;
        let rate = success_rate(&errs, c.alpha)?;
        Ok(
            CheckResult::new(0, "calibrated dp-gauss-mean accuracy", rate.mean + SE_MULTIPLIER * rate.se >= 2.0 / 3.0, rate.mean, 2.0 / 3.0, rate.se)
                .detail(format!("d={}, n={}, alpha={}", c.d, c.n, c.alpha)),
        )
    }

    fn median_amplification(&self) -> Result<Vec<CheckResult>> {
        let c = &self.calibration.median_boost;
        let privacy = PrivacyParams::new(c.epsilon, c.delta)?;
        let base = DpGaussCov::new(privacy, default_radius(c.d))?;
        let boosted = MedianBoost::new(Box::new(base.clone()), c.batches, default_radius(c.d))?;
        let trials = self.scale.pick(2000, 400);
        let eye = SymMatrix::identity(c.d);
        let err = |m: &dyn CovarianceMechanism, n: usize, label: &str| -> Result<Vec<f64>> {
            self.runner.try_map_trials(trials, self.seed(label), |_, rng| {
                let x = sample_gaussian(&Vector::zeros(c.d), &eye, n, rng)?;
                Ok(frobenius_norm(&(&m.estimate(&x, rng)? - &eye)))
            })
        };
        let b = success_rate(&err(&base, c.batch_n, "s/median/base")?, c.gamma)?;
        let m = success_rate(&err(&boosted, c.batch_n * c.batches, "s/median/boosted")?, c.gamma)?;
        Ok(vec![
            CheckResult::new(0, "median boost raises success probability", m.mean > b.mean, m.mean, b.mean, m.se)
                .detail(format!("L = {}, batch n = {}, gamma = {}", c.batches, c.batch_n, c.gamma)),
        ])
    }
}

/// Entrywise MC mean of `samples` against `target`; reports the upper-triangle
/// entry with the largest |z|.
fn matrix_mean_check(criterion: u8, name: impl Into<String>, samples: &[SymMatrix], target: &SymMatrix) -> Result<CheckResult> {
    let d = target.dim();
    let mut worst: Option<(MeanSe, f64, usize, usize)> = None;
    for i in 0..d {
        for j in i..d {
            let vals: Vec<f64> = samples.iter().map(|s| s.get(i, j)).collect();
            let est = MeanSe::from_values(&vals)?;
            let t = target.get(i, j);
            let z = est.z_score(t).abs();
            if worst.as_ref().is_none_or(|w| z > w.0.z_score(w.1).abs()) {
                worst = Some((est, t, i, j));
            }
        }
    }
    let (est, t, i, j) = worst.ok_or(crate::error::Error::Empty("matrix"))?;
    let name = name.into();
    Ok(CheckResult::within(criterion, name, est, t).detail(format!("worst entry ({i},{j}) of {} draws", samples.len())))
}

fn pool(parts: &[MeanSe]) -> MeanSe {
    let total: usize = parts.iter().map(|p| p.count).sum();
    let mean = parts.iter().map(|p| p.mean * p.count as f64).sum::<f64>() / total as f64;
    let var = parts.iter().map(|p| (p.se * p.count as f64).powi(2)).sum::<f64>() / (total as f64).powi(2);
    MeanSe {
        mean,
        se: var.sqrt(),
        count: total,
    }
}

fn unit_vector(d: usize, rng: &mut SimRng) -> Vector {
    let v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Vector::new(v.into_iter().map(|a| a / norm).collect()).expect("finite")
}

/// A random pair of small discrete distributions with `(eps, delta)` chosen so
/// the closeness precondition holds with `delta` tight.
fn random_close_pair(rng: &mut SimRng) -> Result<(DiscreteDist, DiscreteDist, f64, f64)> {
    let k = 2 + rng.below(5);
    let support: Vec<f64> = (0..k).map(|_| 10.0 * rng.uniform() - 5.0).collect();
    let p: Vec<f64> = (0..k).map(|_| -rng.uniform().ln()).collect();
    let eps = rng.uniform().max(1e-3);
    let tilt = eps * rng.uniform();
    let mix = 0.3 * rng.uniform().powi(2);
    let r: Vec<f64> = (0..k).map(|_| -rng.uniform().ln()).collect();
    let q: Vec<f64> = p
        .iter()
        .zip(&r)
        .map(|(a, b)| (1.0 - mix) * a * (tilt * (2.0 * rng.uniform() - 1.0)).exp() + mix * b)
        .collect();
    let normalize = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|a| a / s).collect::<Vec<_>>()
    };
    let p = DiscreteDist::new(support.clone(), normalize(p))?;
    // Occasionally move one support point of q so the supports differ.
    let mut qs = support;
    if rng.bernoulli(0.3) {
        let j = rng.below(k);
        qs[j] += 0.5 * rng.standard_normal();
    }
    let q = DiscreteDist::new(qs, normalize(q))?;
    let up = hockey_stick_divergence(&p, &q, eps)?;
    let down = (-eps).exp() * hockey_stick_divergence(&q, &p, eps)?;
    Ok((p, q, eps, up.max(down).min(0.5)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_threshold_is_point_zero_one_at_full_scale() {
        assert_eq!(ks_threshold(100_000), 0.01);
        assert!(ks_threshold(10_000) > 0.01);
    }

    #[test]
    fn report_aggregation() {
        let rep = ValidationReport {
            seed: 1,
            scale: Scale::Quick,
            checks: vec![
                CheckResult::new(1, "a", true, 0.0, 0.0, 0.0),
                CheckResult::new(1, "b", false, 0.0, 0.0, 0.0),
                CheckResult::new(2, "c", true, 0.0, 0.0, 0.0),
            ],
        };
        assert_eq!(rep.criterion_pass(1), Some(false));
        assert_eq!(rep.criterion_pass(2), Some(true));
        assert_eq!(rep.criterion_pass(3), None);
        assert!(!rep.pass());
    }

    #[test]
    fn random_pairs_meet_precondition() {
        let mut rng = SimRng::seed_from(3);
        for _ in 0..200 {
            let (p, q, eps, delta) = random_close_pair(&mut rng).unwrap();
            if delta < 0.5 {
                assert!(expectation_gap_check(&p, &q, eps, delta).unwrap().precondition_met);
            }
        }
    }

    #[test]
    fn pooling_matches_direct_estimate() {
        let v: Vec<f64> = (0..100).map(|k| (k as f64).sin()).collect();
        let parts: Vec<MeanSe> = v.chunks(25).map(|c| MeanSe::from_values(c).unwrap()).collect();
        let pooled = pool(&parts);
        let direct = MeanSe::from_values(&v).unwrap();
        assert!((pooled.mean - direct.mean).abs() < 1e-12);
        assert!((pooled.se / direct.se - 1.0).abs() < 0.1);
    }

    #[test]
    fn quick_criteria_are_deterministic_across_workers() {
        let one = Runner::new(1).unwrap();
        let four = Runner::new(4).unwrap();
        let a = Validator::new(42, Scale::Quick, &one).criterion(6).unwrap();
        let b = Validator::new(42, Scale::Quick, &four).criterion(6).unwrap();
        assert_eq!(a, b);
    }
}
