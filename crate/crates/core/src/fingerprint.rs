//! Fingerprinting statistics and the Monte-Carlo attack harness.
//!
//! For a mechanism `M`, covariance `S` and data `X`, the per-sample scores are
//! `Z_i = <M(X) - S, X_i X_i^T - S>` and `Z_i' = <M(X_{~i}) - S, X_i X_i^T - S>`,
//! where `X_{~i}` swaps sample `i` for an independent fresh draw. `Z_i'` has
//! mean zero for every mechanism; a private mechanism cannot make the mean of
//! `Z_i` much larger, while an accurate one must.

use serde::{Deserialize, Serialize};

use crate::distributions::{GaussianSampler, InverseWishartSampler, PriorSpec};
use crate::error::{invalid, Error, Result};
use crate::linalg::{frobenius_norm, inner_product, operator_norm, sqrt_psd, symmetrize, Matrix, SymMatrix, Vector};
use crate::mechanisms::{empirical_second_moment, CovarianceMechanism, PrivacyParams};
use crate::parallel::Runner;
use crate::rng::SimRng;
use crate::stats::{compensated_sum, quantile, MeanSe, SE_MULTIPLIER};

/// `<m_out - sigma, x x^T - sigma>`.
pub fn z_statistic(m_out: &SymMatrix, sigma: &SymMatrix, x: &Vector) -> Result<f64> {
    let err = m_out.try_sub(sigma)?;
    let fluct = SymMatrix::outer(x).try_sub(sigma)?;
    inner_product(&err, &fluct)
}

/// Scores `<A, x x^T - sigma>` for a fixed `A` over many `x`, with
/// `<A, sigma>` computed once.
struct Scorer {
    a: Matrix,
    offset: f64,
}

impl Scorer {
    fn new(m_out: &SymMatrix, sigma: &SymMatrix) -> Result<Self> {
        let a = m_out.try_sub(sigma)?;
        let offset = inner_product(&a, sigma)?;
        Ok(Self {
            a: a.into_matrix(),
            offset,
        })
    }

    fn score(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.a[(i, j)] * x[j];
            }
            q += x[i] * row;
        }
        q - self.offset
    }
}

/// How many `Z_i'` scores an attack trial computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZPrimeMode {
    /// Skip the neighbouring-dataset runs.
    None,
    /// A uniformly random subset of `min(n, s)` indices.
    Subset(usize),
    /// Every index.
    Full,
}

impl Default for ZPrimeMode {
    fn default() -> Self {
        ZPrimeMode::Subset(16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AttackOptions {
    pub z_prime: ZPrimeMode,
}

/// One Monte-Carlo attack trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrialRecord {
    pub trial: usize,
    pub master_seed: u64,
    pub n: usize,
    pub prior_dof: usize,
    pub sigma: SymMatrix,
    pub sigma_hat: SymMatrix,
    pub m_out: SymMatrix,
    pub z: Vec<f64>,
    /// Indices `i` for which `Z_i'` was evaluated, ascending.
    pub z_prime_indices: Vec<usize>,
    pub z_prime: Vec<f64>,
    /// `||M(X_{~i}) - S||_F` for each evaluated index.
    pub z_prime_err: Vec<f64>,
    pub err_frob: f64,
    pub err_emp: f64,
    pub posterior_gap: f64,
    pub sigma_op: f64,
}

impl AttackTrialRecord {
    /// `(1/n) sum_i Z_i`.
    pub fn per_sample_stat(&self) -> f64 {
        compensated_sum(self.z.iter().copied()) / self.z.len() as f64
    }

    /// `||S_hat - S||_F^2`.
    pub fn empirical_sq_error(&self) -> f64 {
        frobenius_norm(&(&self.sigma_hat - &self.sigma)).powi(2)
    }

    /// Exact `E||S_hat - S||_F^2 = (tr(S)^2 + tr(S^2)) / n` given this trial's `S`.
    pub fn empirical_mse_oracle(&self) -> f64 {
        let tr = self.sigma.trace();
        let tr2 = frobenius_norm(&self.sigma).powi(2);
        (tr * tr + tr2) / self.n as f64
    }
}

fn choose_indices(n: usize, mode: ZPrimeMode, rng: &mut SimRng) -> Vec<usize> {
    match mode {
        ZPrimeMode::None => Vec::new(),
        ZPrimeMode::Full => (0..n).collect(),
        ZPrimeMode::Subset(s) => {
            let s = s.min(n);
            let mut idx: Vec<usize> = (0..n).collect();
            for k in 0..s {
                let j = k + rng.below(n - k);
                idx.swap(k, j);
            }
            let mut chosen = idx[..s].to_vec();
            chosen.sort_unstable();
            chosen
        }
    }
}

/// Draws `S` from the standard prior, `X, X'` i.i.d. `N(0, S)`, runs `mech`
/// on `X` and (with fresh randomness) on each selected `X_{~i}`.
pub fn attack_trial(
    mech: &dyn CovarianceMechanism,
    d: usize,
    n: usize,
    master_seed: u64,
    trial: usize,
    opts: &AttackOptions,
) -> Result<AttackTrialRecord> {
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    let prior = PriorSpec::standard(d);
    let mut rng = SimRng::derive_child(master_seed, trial as u64);
    let sigma = prior.sample(&mut rng)?;
    let gauss = GaussianSampler::centered(&sigma)?;
    let x = gauss.sample(n, &mut rng);
    let x_alt = gauss.sample(n, &mut rng);
    let m_out = mech.estimate(&x, &mut rng)?;
    if m_out.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: m_out.dim(),
        });
    }
    let sigma_hat = empirical_second_moment(&x);
    let scorer = Scorer::new(&m_out, &sigma)?;
    let z: Vec<f64> = x.rows().map(|r| scorer.score(r)).collect();

    let z_prime_indices = choose_indices(n, opts.z_prime, &mut rng);
    let mut z_prime = Vec::with_capacity(z_prime_indices.len());
    let mut z_prime_err = Vec::with_capacity(z_prime_indices.len());
    for &i in &z_prime_indices {
        let neighbour = x.with_replaced(i, x_alt.row(i))?;
        let m_i = mech.estimate(&neighbour, &mut rng)?;
        let s = Scorer::new(&m_i, &sigma)?;
        z_prime.push(s.score(x.row(i)));
        z_prime_err.push(frobenius_norm(&(&m_i - &sigma)));
    }

    Ok(AttackTrialRecord {
        trial,
        master_seed,
        n,
        prior_dof: prior.dof,
        err_frob: frobenius_norm(&(&m_out - &sigma)),
        err_emp: frobenius_norm(&(&m_out - &sigma_hat)),
        posterior_gap: posterior_gap(&sigma_hat, n, prior.dof)?,
        sigma_op: operator_norm(&sigma)?,
        sigma,
        sigma_hat,
        m_out,
        z,
        z_prime_indices,
        z_prime,
        z_prime_err,
    })
}

/// Relative residual of `(1/n) sum Z_i = <M - S_hat, S_hat - S> + ||S_hat - S||_F^2`,
/// normalized by the magnitude of the terms involved.
pub fn decomposition_residual(rec: &AttackTrialRecord) -> f64 {
    let lhs = rec.per_sample_stat();
    let emp = &rec.sigma_hat - &rec.sigma;
    let gap = &rec.m_out - &rec.sigma_hat;
    let cross = inner_product(&gap, &emp).expect("record dims agree");
    let sq = frobenius_norm(&emp).powi(2);
    let rhs = cross + sq;
    let mean_abs = rec.z.iter().map(|v| v.abs()).sum::<f64>() / rec.z.len() as f64;
    let scale = mean_abs
        .max(frobenius_norm(&gap) * frobenius_norm(&emp) + sq)
        .max(f64::MIN_POSITIVE);
    (lhs - rhs).abs() / scale
}

/// Zero-mean control variates `<I, S_hat - S>` and `<S, S_hat - S>`:
/// `E[S_hat | S] = S` makes both vanish in expectation for every mechanism.
pub fn control_variates(rec: &AttackTrialRecord) -> [f64; 2] {
    let emp = &rec.sigma_hat - &rec.sigma;
    [emp.trace(), inner_product(&rec.sigma, &emp).expect("record dims agree")]
}

/// Per-trial statistics with the least-squares combination of
/// [`control_variates`] removed. The adjusted values have the same mean as
/// `(1/n) sum Z_i` and typically far smaller variance, since any data-independent
/// shrinkage target `c I` contributes exactly such a term.
pub fn cv_adjusted_stats(records: &[AttackTrialRecord]) -> Vec<f64> {
    let ys: Vec<f64> = records.iter().map(AttackTrialRecord::per_sample_stat).collect();
    let cs: Vec<[f64; 2]> = records.iter().map(control_variates).collect();
    match cv_coefficients(&ys, &cs) {
        Some(b) => ys
            .iter()
            .zip(&cs)
            .map(|(y, c)| y - b[0] * c[0] - b[1] * c[1])
            .collect(),
        None => ys,
    }
}

/// OLS slopes of `y` on the centered control variates.
fn cv_coefficients(ys: &[f64], cs: &[[f64; 2]]) -> Option<[f64; 2]> {
    if ys.len() < 3 {
        return None;
    }
    let n = ys.len() as f64;
    let my = ys.iter().sum::<f64>() / n;
    let m0 = cs.iter().map(|c| c[0]).sum::<f64>() / n;
    let m1 = cs.iter().map(|c| c[1]).sum::<f64>() / n;
    let (mut s00, mut s01, mut s11, mut s0y, mut s1y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (y, c) in ys.iter().zip(cs) {
        let (a, b, e) = (c[0] - m0, c[1] - m1, y - my);
        s00 += a * a;
        s01 += a * b;
        s11 += b * b;
        s0y += a * e;
        s1y += b * e;
    }
    let det = s00 * s11 - s01 * s01;
    if !(det.abs() > 1e-12 * s00 * s11) {
        return None;
    }
    Some([(s11 * s0y - s01 * s1y) / det, (s00 * s1y - s01 * s0y) / det])
}

fn posterior_denominator(n: usize, m: usize, d: usize) -> Result<f64> {
    if m + n <= d + 1 {
        return Err(invalid(format!(
            "posterior mean needs m + n >= d + 2 (m {m}, n {n}, d {d})"
        )));
    }
    Ok((m + n - d - 1) as f64)
}

/// `E[S | X] = (m I + n S_hat) / (m + n - d - 1)` under the `W^{-1}(m I, m)` prior.
pub fn posterior_mean(sigma_hat: &SymMatrix, n: usize, m: usize) -> Result<SymMatrix> {
    let d = sigma_hat.dim();
    let den = posterior_denominator(n, m, d)?;
    Ok((&SymMatrix::scaled_identity(d, m as f64) + &sigma_hat.scale(n as f64)).scale(1.0 / den))
}

/// A draw from the posterior `W^{-1}(m I + n S_hat, m + n)`.
pub fn posterior_sample(sigma_hat: &SymMatrix, n: usize, m: usize, rng: &mut SimRng) -> Result<SymMatrix> {
    posterior_sampler(sigma_hat, n, m)?.sample(rng)
}

pub fn posterior_sampler(sigma_hat: &SymMatrix, n: usize, m: usize) -> Result<InverseWishartSampler> {
    let d = sigma_hat.dim();
    posterior_denominator(n, m, d)?;
    let scale = &SymMatrix::scaled_identity(d, m as f64) + &sigma_hat.scale(n as f64);
    InverseWishartSampler::new(&scale, m + n)
}

/// `||E[S | X] - S_hat||_F = ||(m I - (m - d - 1) S_hat) / (m + n - d - 1)||_F`.
pub fn posterior_gap(sigma_hat: &SymMatrix, n: usize, m: usize) -> Result<f64> {
    let d = sigma_hat.dim();
    let den = posterior_denominator(n, m, d)?;
    let diff = &SymMatrix::scaled_identity(d, m as f64) - &sigma_hat.scale(m as f64 - d as f64 - 1.0);
    Ok(frobenius_norm(&diff) / den)
}

/// A finite distribution on the real line. Repeated support points are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                got: probs.len(),
            });
        }
        if support.is_empty() {
            return Err(Error::Empty("distribution support"));
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(invalid("support points must be finite"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        let mut pairs: Vec<(f64, f64)> = support.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, p) in pairs {
            if support.last() == Some(&x) {
                *probs.last_mut().unwrap() += p;
            } else {
                support.push(x);
                probs.push(p);
            }
        }
        Ok(Self { support, probs })
    }

    pub fn point_mass(x: f64) -> Self {
        Self {
            support: vec![x],
            probs: vec![1.0],
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        compensated_sum(self.support.iter().zip(&self.probs).map(|(&x, &p)| p * f(x)))
    }

    pub fn mean(&self) -> f64 {
        self.expect(|x| x)
    }
}

/// Both distributions' masses on the union of supports, in ascending order.
fn aligned(p: &DiscreteDist, q: &DiscreteDist) -> Vec<(f64, f64)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(p.support.len() + q.support.len());
    while i < p.support.len() || j < q.support.len() {
        let px = p.support.get(i).copied().unwrap_or(f64::INFINITY);
        let qx = q.support.get(j).copied().unwrap_or(f64::INFINITY);
        if px == qx {
            out.push((p.probs[i], q.probs[j]));
            i += 1;
            j += 1;
        } else if px < qx {
            out.push((p.probs[i], 0.0));
            i += 1;
        } else {
            out.push((0.0, q.probs[j]));
            j += 1;
        }
    }
    out
}

/// `sup_S Q(S) - e^eps P(S) = sum_x max(q(x) - e^eps p(x), 0)`.
pub fn hockey_stick_divergence(p: &DiscreteDist, q: &DiscreteDist, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon must be nonnegative"));
    }
    let e = epsilon.exp();
    let total = compensated_sum(aligned(p, q).into_iter().map(|(pp, qq)| (qq - e * pp).max(0.0)));
    Ok(total.clamp(0.0, 1.0))
}

/// Float tolerance when checking the closeness precondition.
pub const PRECONDITION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationGapReport {
    pub epsilon: f64,
    pub delta: f64,
    /// `sup_S P(Y in S) - e^eps P(X in S)`.
    pub upper_divergence: f64,
    /// `sup_S e^{-eps} P(X in S) - P(Y in S)`.
    pub lower_divergence: f64,
    pub precondition_met: bool,
    /// `|E[X - Y]|`.
    pub lhs: f64,
    /// `2 eps E|X| + 2 sqrt(delta E[X^2 + Y^2])`.
    pub rhs: f64,
    pub holds: bool,
}

/// Checks `|E[X - Y]| <= 2 eps E|X| + 2 sqrt(delta E[X^2 + Y^2])` for
/// `X ~ p`, `Y ~ q`, provided `e^{-eps} P(S) - delta <= Q(S) <= e^eps P(S) + delta`
/// for all `S`, `eps <= 1` and `delta <= 1/2`. A violated precondition is
/// reported, not raised.
pub fn expectation_gap_check(p: &DiscreteDist, q: &DiscreteDist, epsilon: f64, delta: f64) -> Result<ExpectationGapReport> {
    if !(epsilon >= 0.0) || !(delta >= 0.0) {
        return Err(invalid("epsilon and delta must be nonnegative"));
    }
    let pairs = aligned(p, q);
    let up = compensated_sum(pairs.iter().map(|&(pp, qq)| (qq - epsilon.exp() * pp).max(0.0)));
    let down = compensated_sum(pairs.iter().map(|&(pp, qq)| ((-epsilon).exp() * pp - qq).max(0.0)));
    let precondition_met = epsilon <= 1.0
        && delta <= 0.5
        && up <= delta + PRECONDITION_TOLERANCE
        && down <= delta + PRECONDITION_TOLERANCE;
    let lhs = (p.mean() - q.mean()).abs();
    let second = p.expect(|x| x * x) + q.expect(|x| x * x);
    let rhs = 2.0 * epsilon * p.expect(f64::abs) + 2.0 * (delta * second).sqrt();
    Ok(ExpectationGapReport {
        epsilon,
        delta,
        upper_divergence: up,
        lower_divergence: down,
        precondition_met,
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12) + 1e-15,
    })
}

/// Exact variance `2 ||S^{1/2} sym(P) S^{1/2}||_F^2` of `<P, X X^T - S>` for `X ~ N(0, S)`.
pub fn variance_oracle_zprime(p: &Matrix, sigma: &SymMatrix) -> Result<f64> {
    let ps = symmetrize(p)?;
    if ps.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            got: ps.dim(),
        });
    }
    let root = sqrt_psd(sigma)?;
    Ok(2.0 * frobenius_norm(&root.congruence(&ps)?).powi(2))
}

/// Upper bound `2 ||S||_op^2 ||P||_F^2` on [`variance_oracle_zprime`].
pub fn variance_ceiling(p: &Matrix, sigma: &SymMatrix) -> Result<f64> {
    Ok(2.0 * operator_norm(sigma)?.powi(2) * p.norm().powi(2))
}

/// Attack run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub options: AttackOptions,
    /// Privacy level checked by the tension flag; defaults to the mechanism's claim.
    #[serde(default)]
    pub audit_privacy: Option<PrivacyParams>,
}

/// Smallest trial count accepted by [`run_attack`].
pub const MIN_ATTACK_TRIALS: usize = 30;

/// Quantiles of `||M(X) - S||_F`, the empirical accuracy `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaQuantiles {
    pub median: f64,
    pub two_thirds: f64,
    pub p90: f64,
}

/// Both sides of the privacy ceiling on the per-sample statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensionCheck {
    pub privacy: PrivacyParams,
    /// `2 eps E|Z'| + 2 sqrt(delta E[Z^2 + Z'^2])`, using the exact `E Z' = 0`.
    pub ceiling: f64,
    pub ceiling_se: f64,
    /// `(stat - ceiling) / combined SE`.
    pub excess_z: f64,
    pub tension_detected: bool,
    /// Smallest epsilon compatible with the observed statistic at `delta`
    /// (statistic lowered by 4 SE); `None` when every epsilon is compatible.
    pub implied_epsilon_lower_bound: Option<f64>,
}

/// Aggregates of an attack run; every MC quantity carries its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub mechanism_id: String,
    pub claimed_privacy: Option<PrivacyParams>,
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub master_seed: u64,
    /// `(1/n) sum_i Z_i` across trials.
    pub stat: MeanSe,
    /// The same mean estimated from [`cv_adjusted_stats`].
    pub stat_cv: MeanSe,
    /// Per-trial means of `Z_i'` (one value per trial with evaluated indices).
    pub z_prime: MeanSe,
    pub z_prime_count: usize,
    pub z_prime_abs: MeanSe,
    pub z_prime_sq: MeanSe,
    /// Per-trial means of `Z_i^2`.
    pub z_sq: MeanSe,
    /// `E[Z'^2] - 2 E[||S||_op^2 ||M(X_{~i}) - S||_F^2]`, expected nonpositive.
    pub variance_ceiling_gap: MeanSe,
    /// `||S_hat - S||_F^2`, the non-private floor.
    pub empirical_floor: MeanSe,
    /// `(tr(S)^2 + tr(S^2))/n` averaged over the sampled `S`.
    pub empirical_floor_oracle: MeanSe,
    pub posterior_gap_sq: MeanSe,
    pub err_frob: MeanSe,
    pub gamma: GammaQuantiles,
    pub max_decomposition_residual: f64,
    pub tension: Option<TensionCheck>,
}

/// One CSV row per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub trial: usize,
    pub stat: f64,
    pub z_prime_mean: f64,
    pub z_prime_count: usize,
    pub err_frob: f64,
    pub err_emp: f64,
    pub posterior_gap: f64,
    pub sigma_op: f64,
    pub empirical_sq_error: f64,
    pub decomposition_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub summary: AttackSummary,
    pub records: Vec<AttackTrialRecord>,
}

impl AttackReport {
    pub fn rows(&self) -> Vec<AttackRow> {
        self.records
            .iter()
            .map(|r| AttackRow {
                trial: r.trial,
                stat: r.per_sample_stat(),
                z_prime_mean: if r.z_prime.is_empty() {
                    f64::NAN
                } else {
                    r.z_prime.iter().sum::<f64>() / r.z_prime.len() as f64
                },
                z_prime_count: r.z_prime.len(),
                err_frob: r.err_frob,
                err_emp: r.err_emp,
                posterior_gap: r.posterior_gap,
                sigma_op: r.sigma_op,
                empirical_sq_error: r.empirical_sq_error(),
                decomposition_residual: decomposition_residual(r),
            })
            .collect()
    }
}

fn mean_of(v: &[f64]) -> f64 {
    compensated_sum(v.iter().copied()) / v.len() as f64
}

/// Tension test of the per-sample statistic against the privacy ceiling.
pub fn tension_check(
    stat: &MeanSe,
    z_prime_abs: &MeanSe,
    z_sq: &MeanSe,
    z_prime_sq: &MeanSe,
    privacy: PrivacyParams,
) -> TensionCheck {
    let (eps, delta) = (privacy.epsilon, privacy.delta);
    let second = (z_sq.mean + z_prime_sq.mean).max(0.0);
    let root = 2.0 * (delta * second).sqrt();
    let ceiling = 2.0 * eps * z_prime_abs.mean + root;
    let root_se = if second > 0.0 {
        delta.sqrt() * (z_sq.se.powi(2) + z_prime_sq.se.powi(2)).sqrt() / second.sqrt()
    } else {
        0.0
    };
    let ceiling_se = ((2.0 * eps * z_prime_abs.se).powi(2) + root_se.powi(2)).sqrt();
    let se = (stat.se.powi(2) + ceiling_se.powi(2)).sqrt();
    let excess = stat.mean - ceiling;
    let excess_z = if se > 0.0 { excess / se } else if excess > 0.0 { f64::INFINITY } else { 0.0 };
    let lowered = stat.mean - SE_MULTIPLIER * se - root;
    let implied_epsilon_lower_bound = if lowered > 0.0 && z_prime_abs.mean > 0.0 {
        Some(lowered / (2.0 * z_prime_abs.mean))
    } else {
        None
    };
    TensionCheck {
        privacy,
        ceiling,
        ceiling_se,
        excess_z,
        tension_detected: excess_z > SE_MULTIPLIER,
        implied_epsilon_lower_bound,
    }
}

/// Runs `cfg.trials` attack trials in parallel (trial `t` uses child stream `t`)
/// and aggregates them.
pub fn run_attack(mech: &dyn CovarianceMechanism, cfg: &AttackConfig, runner: &Runner) -> Result<AttackReport> {
    if cfg.trials < MIN_ATTACK_TRIALS {
        return Err(invalid(format!(
            "an attack needs at least {MIN_ATTACK_TRIALS} trials, got {}",
            cfg.trials
        )));
    }
    let records = runner.try_map_trials(cfg.trials, cfg.master_seed, |t, _| {
        attack_trial(mech, cfg.d, cfg.n, cfg.master_seed, t, &cfg.options)
    })?;
    let summary = summarize(mech, cfg, &records)?;
    Ok(AttackReport { summary, records })
}

fn summarize(mech: &dyn CovarianceMechanism, cfg: &AttackConfig, records: &[AttackTrialRecord]) -> Result<AttackSummary> {
    let stats: Vec<f64> = records.iter().map(AttackTrialRecord::per_sample_stat).collect();
    let z_sq: Vec<f64> = records
        .iter()
        .map(|r| mean_of(&r.z.iter().map(|v| v * v).collect::<Vec<_>>()))
        .collect();
    let with_prime: Vec<&AttackTrialRecord> = records.iter().filter(|r| !r.z_prime.is_empty()).collect();
    let per_trial = |f: &dyn Fn(&AttackTrialRecord) -> f64| -> Vec<f64> { with_prime.iter().map(|r| f(r)).collect() };
    let zp = per_trial(&|r| mean_of(&r.z_prime));
    let zp_abs = per_trial(&|r| mean_of(&r.z_prime.iter().map(|v| v.abs()).collect::<Vec<_>>()));
    let zp_sq = per_trial(&|r| mean_of(&r.z_prime.iter().map(|v| v * v).collect::<Vec<_>>()));
    let ceiling_gap = per_trial(&|r| {
        let gaps: Vec<f64> = r
            .z_prime
            .iter()
            .zip(&r.z_prime_err)
            .map(|(z, e)| z * z - 2.0 * r.sigma_op.powi(2) * e * e)
            .collect();
        mean_of(&gaps)
    });
    let or_nan = |v: &[f64]| -> MeanSe {
        MeanSe::from_values(v).unwrap_or(MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
            count: 0,
        })
    };
    let errs: Vec<f64> = records.iter().map(|r| r.err_frob).collect();
    let stat = MeanSe::from_values(&stats)?;
    let z_sq = MeanSe::from_values(&z_sq)?;
    let z_prime = or_nan(&zp);
    let z_prime_abs = or_nan(&zp_abs);
    let z_prime_sq = or_nan(&zp_sq);
    let claimed = mech.privacy();
    let tension = match (cfg.audit_privacy.or(claimed), z_prime.count) {
        (Some(p), c) if c >= 2 => Some(tension_check(&stat, &z_prime_abs, &z_sq, &z_prime_sq, p)),
        _ => None,
    };
    Ok(AttackSummary {
        mechanism_id: mech.id(),
        claimed_privacy: claimed,
        d: cfg.d,
        n: cfg.n,
        trials: records.len(),
        master_seed: cfg.master_seed,
        stat,
        stat_cv: MeanSe::from_values(&cv_adjusted_stats(records))?,
        z_prime,
        z_prime_count: with_prime.iter().map(|r| r.z_prime.len()).sum(),
        z_prime_abs,
        z_prime_sq,
        z_sq,
        variance_ceiling_gap: or_nan(&ceiling_gap),
        empirical_floor: MeanSe::from_values(&records.iter().map(AttackTrialRecord::empirical_sq_error).collect::<Vec<_>>())?,
        empirical_floor_oracle: MeanSe::from_values(&records.iter().map(AttackTrialRecord::empirical_mse_oracle).collect::<Vec<_>>())?,
        posterior_gap_sq: MeanSe::from_values(&records.iter().map(|r| r.posterior_gap.powi(2)).collect::<Vec<_>>())?,
        err_frob: MeanSe::from_values(&errs)?,
        gamma: GammaQuantiles {
            median: quantile(&errs, 0.5),
            two_thirds: quantile(&errs, 2.0 / 3.0),
            p90: quantile(&errs, 0.9),
        },
        max_decomposition_residual: records.iter().map(decomposition_residual).fold(0.0, f64::max),
        tension,
    })
}

/// Outcome of the binned privacy-transfer comparison between `Z` and `Z'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferCheck {
    pub bins: usize,
    pub samples: usize,
    /// `sup_S P(Z in S) - e^eps P(Z' in S)` on the binned distributions.
    pub divergence_z_over_zprime: f64,
    /// `sup_S P(Z' in S) - e^eps P(Z in S)`.
    pub divergence_zprime_over_z: f64,
    pub allowed: f64,
    pub pass: bool,
}

/// Number of bins for [`privacy_transfer_check`].
pub const TRANSFER_BINS: usize = 50;

/// Bins the pooled sample of `z` and `z_prime` into equal-probability bins
/// and compares the two histograms in hockey-stick divergence at `eps`.
/// Allowed divergence is `delta + 2 sqrt(B / N)` with `N` the smaller sample;
/// the slack absorbs histogram sampling noise.
pub fn privacy_transfer_check(z: &[f64], z_prime: &[f64], privacy: PrivacyParams, bins: usize) -> Result<TransferCheck> {
    if z.is_empty() || z_prime.is_empty() {
        return Err(Error::Empty("score sample"));
    }
    if bins < 2 {
        return Err(invalid("need at least two bins"));
    }
    let mut pooled: Vec<f64> = z.iter().chain(z_prime).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins)
        .map(|k| crate::stats::quantile_sorted(&pooled, k as f64 / bins as f64))
        .collect();
    let hist = |v: &[f64]| -> Result<DiscreteDist> {
        let mut counts = vec![0.0; bins];
        for &x in v {
            counts[edges.partition_point(|&e| e < x)] += 1.0;
        }
        let total = v.len() as f64;
        let probs: Vec<f64> = counts.iter().map(|c| c / total).collect();
        let sum: f64 = compensated_sum(probs.iter().copied());
        let probs = probs.iter().map(|p| p / sum).collect();
        DiscreteDist::new((0..bins).map(|b| b as f64).collect(), probs)
    };
    let hz = hist(z)?;
    let hzp = hist(z_prime)?;
    let a = hockey_stick_divergence(&hzp, &hz, privacy.epsilon)?;
    let b = hockey_stick_divergence(&hz, &hzp, privacy.epsilon)?;
    let samples = z.len().min(z_prime.len());
    let allowed = privacy.delta + 2.0 * (bins as f64 / samples as f64).sqrt();
    Ok(TransferCheck {
        bins,
        samples,
        divergence_z_over_zprime: a,
        divergence_zprime_over_z: b,
        allowed,
        pass: a <= allowed && b <= allowed,
    })
}

/// First evaluated `(Z_i, Z_i')` pair of each record, one pair per trial.
pub fn paired_scores(records: &[AttackTrialRecord]) -> (Vec<f64>, Vec<f64>) {
    records
        .iter()
        .filter_map(|r| {
            let i = *r.z_prime_indices.first()?;
            Some((r.z[i], r.z_prime[0]))
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{Constant, DpGaussCov, Empirical};

    #[test]
    fn z_statistic_examples() {
        let i2 = SymMatrix::identity(2);
        let x = Vector::basis(2, 0);
        assert_eq!(z_statistic(&i2, &i2, &x).unwrap(), 0.0);
        assert_eq!(z_statistic(&i2.scale(2.0), &i2, &x).unwrap(), -1.0);
        let sigma = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let m = SymMatrix::from_rows(&[vec![1.0, -0.5], vec![-0.5, 0.2]]).unwrap();
        let delta = SymMatrix::from_rows(&[vec![0.1, 0.7], vec![0.7, -1.3]]).unwrap();
        let x = Vector::new(vec![0.4, -1.7]).unwrap();
        let lhs = z_statistic(&(&m + &delta), &sigma, &x).unwrap() - z_statistic(&m, &sigma, &x).unwrap();
        let rhs = inner_product(&delta, &(&SymMatrix::outer(&x) - &sigma)).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        let s = Scorer::new(&m, &sigma).unwrap();
        assert!((s.score(x.as_slice()) - z_statistic(&m, &sigma, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empirical_trial_identity() {
        let rec = attack_trial(&Empirical, 3, 20, 7, 0, &AttackOptions::default()).unwrap();
        assert_eq!(rec.err_emp, 0.0);
        assert!((rec.per_sample_stat() - rec.empirical_sq_error()).abs() < 1e-10);
        assert!(decomposition_residual(&rec) < 1e-12);
        assert_eq!(rec.z.len(), 20);
        assert_eq!(rec.z_prime.len(), 16);
    }

    #[test]
    fn trial_is_deterministic() {
        let mech = DpGaussCov::new(PrivacyParams::new(1.0, 1e-6).unwrap(), 5.0).unwrap();
        let a = attack_trial(&mech, 4, 10, 99, 3, &AttackOptions::default()).unwrap();
        let b = attack_trial(&mech, 4, 10, 99, 3, &AttackOptions::default()).unwrap();
        assert_eq!(a, b);
        let full = attack_trial(&mech, 4, 10, 99, 3, &AttackOptions { z_prime: ZPrimeMode::Full }).unwrap();
        assert_eq!(full.z_prime_indices, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn true_covariance_gives_exact_identity() {
        // M = S makes every Z_i zero; the identity still holds per trial.
        let rec = attack_trial(&Empirical, 3, 15, 1, 0, &AttackOptions::default()).unwrap();
        let mut forced = rec.clone();
        forced.m_out = rec.sigma.clone();
        forced.z = vec![0.0; 15];
        assert!(decomposition_residual(&forced) < 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let got = posterior_mean(&SymMatrix::identity(2), 5, 4).unwrap();
        assert!(frobenius_norm(&(&got - &SymMatrix::scaled_identity(2, 1.5))) < 1e-15);
        let prior = PriorSpec::standard(3);
        let at_zero = posterior_mean(&SymMatrix::diag(&[5.0, 1.0, 2.0]).unwrap(), 0, prior.dof).unwrap();
        assert!(frobenius_norm(&(&at_zero - &prior.mean())) < 1e-14);
        let sh = SymMatrix::diag(&[0.5, 3.0]).unwrap();
        let far = posterior_mean(&sh, 10_000_000, 4).unwrap();
        assert!(frobenius_norm(&(&far - &sh)) < 1e-5);
        assert!(posterior_mean(&sh, 0, 2).is_err());
    }

    #[test]
    fn posterior_gap_examples() {
        let (d, m) = (3, 6);
        let fixed = SymMatrix::scaled_identity(d, m as f64 / (m - d - 1) as f64);
        assert!(posterior_gap(&fixed, 17, m).unwrap() < 1e-14);
        let sh = SymMatrix::diag(&[1.0, 2.0, 0.5]).unwrap();
        let prior_mean = SymMatrix::scaled_identity(d, 3.0);
        let gap0 = posterior_gap(&sh, 0, m).unwrap();
        assert!((gap0 - frobenius_norm(&(&prior_mean - &sh))).abs() < 1e-14);
        let direct = frobenius_norm(&(&posterior_mean(&sh, 9, m).unwrap() - &sh));
        assert!((posterior_gap(&sh, 9, m).unwrap() - direct).abs() < 1e-14);
    }

    fn randomized_response(eps: f64) -> (DiscreteDist, DiscreteDist) {
        let flip = 1.0 / (1.0 + eps.exp());
        (
            DiscreteDist::new(vec![0.0, 1.0], vec![1.0 - flip, flip]).unwrap(),
            DiscreteDist::new(vec![0.0, 1.0], vec![flip, 1.0 - flip]).unwrap(),
        )
    }

    #[test]
    fn hockey_stick_examples() {
        let p = DiscreteDist::new(vec![1.0, 2.0, 3.0], vec![0.2, 0.5, 0.3]).unwrap();
        for eps in [0.0, 0.3, 2.0] {
            assert_eq!(hockey_stick_divergence(&p, &p, eps).unwrap(), 0.0);
        }
        let (a, b) = randomized_response(0.8);
        assert!(hockey_stick_divergence(&a, &b, 0.8).unwrap() < 1e-15);
        assert!(hockey_stick_divergence(&a, &b, 0.4).unwrap() > 0.0);
        let off = DiscreteDist::point_mass(10.0);
        assert_eq!(hockey_stick_divergence(&p, &off, 5.0).unwrap(), 1.0);
        assert!(DiscreteDist::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn expectation_gap_examples() {
        let p = DiscreteDist::new(vec![-1.0, 3.0], vec![0.4, 0.6]).unwrap();
        let same = expectation_gap_check(&p, &p, 0.5, 0.0).unwrap();
        assert!(same.precondition_met && same.holds && same.lhs == 0.0);
        let (a, b) = randomized_response(0.7);
        let rr = expectation_gap_check(&a, &b, 0.7, 0.0).unwrap();
        assert!(rr.precondition_met && rr.holds, "{rr:?}");
        assert!(rr.rhs - rr.lhs > 0.0);
        let far = expectation_gap_check(&p, &DiscreteDist::point_mass(9.0), 0.5, 0.1).unwrap();
        assert!(!far.precondition_met);
    }

    #[test]
    fn variance_oracle_examples() {
        let p = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -2.0]);
        let v = variance_oracle_zprime(&p, &SymMatrix::identity(2)).unwrap();
        assert!((v - 2.0 * p.norm().powi(2)).abs() < 1e-12);
        let anti = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(variance_oracle_zprime(&anti, &SymMatrix::diag(&[2.0, 3.0]).unwrap()).unwrap() < 1e-15);
        let sigma = SymMatrix::from_rows(&[vec![2.0, 0.4], vec![0.4, 0.5]]).unwrap();
        assert!(variance_oracle_zprime(&p, &sigma).unwrap() <= variance_ceiling(&p, &sigma).unwrap());
        assert!(variance_oracle_zprime(&p, &SymMatrix::diag(&[1.0, -1.0]).unwrap()).is_err());
    }

    #[test]
    fn constant_mechanism_attack_is_null() {
        let d = 3;
        let mech = Constant { value: PriorSpec::standard(d).mean() };
        let cfg = AttackConfig {
            d,
            n: 16,
            trials: 400,
            master_seed: 5,
            options: AttackOptions::default(),
            audit_privacy: Some(PrivacyParams::new(0.1, 1e-6).unwrap()),
        };
        let rep = run_attack(&mech, &cfg, &Runner::new(2).unwrap()).unwrap();
        let s = &rep.summary;
        assert!(s.z_prime.within_4se(0.0), "{:?}", s.z_prime);
        assert!(s.stat.within_4se(0.0), "{:?}", s.stat);
        assert!(!s.tension.unwrap().tension_detected);
        assert!(s.max_decomposition_residual < 1e-9);
        assert_eq!(rep.rows().len(), 400);
    }

    #[test]
    fn empirical_attack_flags_tension() {
        let cfg = AttackConfig {
            d: 8,
            n: 32,
            trials: 400,
            master_seed: 6,
            options: AttackOptions::default(),
            audit_privacy: Some(PrivacyParams::new(0.05, 1e-9).unwrap()),
        };
        let rep = run_attack(&Empirical, &cfg, &Runner::new(2).unwrap()).unwrap();
        let s = &rep.summary;
        assert!(s.stat.mean > 0.0);
        let t = s.tension.unwrap();
        assert!(t.tension_detected, "{t:?}");
        assert!(t.implied_epsilon_lower_bound.unwrap() > 0.05);
    }

    #[test]
    fn attack_needs_enough_trials() {
        let cfg = AttackConfig {
            d: 2,
            n: 4,
            trials: 5,
            master_seed: 0,
            options: AttackOptions::default(),
            audit_privacy: None,
        };
        assert!(run_attack(&Empirical, &cfg, &Runner::serial()).is_err());
    }

    #[test]
    fn transfer_check_identical_samples() {
        let z: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.61803).fract()).collect();
        let t = privacy_transfer_check(&z, &z, PrivacyParams::new(0.5, 1e-6).unwrap(), TRANSFER_BINS).unwrap();
        assert!(t.pass);
        assert!(t.divergence_z_over_zprime < 1e-12);
    }
}
