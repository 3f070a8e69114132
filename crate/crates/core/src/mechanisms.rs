//! Covariance and mean estimators that the fingerprinting adversary attacks.
//!
//! The DP estimators are clip-and-noise Gaussian mechanisms. Clipping is the
//! per-sample map `x -> x / R` if `||x|| <= R` and `0` otherwise, so replacing
//! one sample moves the normalized second moment by at most `2/n` in
//! Frobenius norm and the normalized mean by at most `2/n` in l2 norm.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::{Dataset, PriorSpec};
use crate::error::{invalid, Error, Result};
use crate::linalg::{frobenius_norm, symmetrize, Matrix, SymMatrix, Vector};
use crate::rng::SimRng;

/// `(epsilon, delta)` privacy budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(invalid(format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}

impl fmt::Display for PrivacyParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})-DP", self.epsilon, self.delta)
    }
}

/// A mechanism output together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: SymMatrix,
    pub mechanism_id: String,
    pub claimed_privacy: Option<PrivacyParams>,
}

/// A randomized map from a dataset to a symmetric matrix.
pub trait CovarianceMechanism: Send + Sync {
    fn id(&self) -> String;

    /// Declared privacy guarantee; `None` for non-private estimators.
    fn privacy(&self) -> Option<PrivacyParams>;

    fn estimate(&self, x: &Dataset, rng: &mut SimRng) -> Result<SymMatrix>;

    /// Frobenius distance bound between outputs on adjacent datasets of size
    /// `n` when the internal randomness is shared.
    fn sensitivity(&self, _n: usize, _d: usize) -> Option<f64> {
        None
    }

    fn run(&self, x: &Dataset, rng: &mut SimRng) -> Result<Estimate> {
        Ok(Estimate {
            value: self.estimate(x, rng)?,
            mechanism_id: self.id(),
            claimed_privacy: self.privacy(),
        })
    }
}

/// A randomized map from a dataset to a vector.
pub trait MeanMechanism: Send + Sync {
    fn id(&self) -> String;
    fn privacy(&self) -> Option<PrivacyParams>;
    fn estimate(&self, x: &Dataset, rng: &mut SimRng) -> Result<Vector>;
    fn sensitivity(&self, _n: usize) -> Option<f64> {
        None
    }
}

/// `(1/n) sum_i x_i x_i^T`.
pub fn empirical_second_moment(x: &Dataset) -> SymMatrix {
    let d = x.dim();
    let n = x.len() as f64;
    let mut acc = vec![0.0; d * d];
    for r in x.rows() {
        for i in 0..d {
            let ri = r[i];
            for j in i..d {
                acc[i * d + j] += ri * r[j];
            }
        }
    }
    SymMatrix::from_upper_fn(d, |i, j| acc[i * d + j] / n)
}

pub fn empirical_mean(x: &Dataset) -> Vector {
    let d = x.dim();
    let n = x.len() as f64;
    let mut acc = vec![0.0; d];
    for r in x.rows() {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    Vector::new(acc.into_iter().map(|a| a / n).collect()).expect("d >= 1")
}

/// `(1/n) sum_i (x_i - mean)(x_i - mean)^T`.
pub fn empirical_covariance_centered(x: &Dataset) -> SymMatrix {
    let mu = empirical_mean(x);
    let m = mu.as_slice();
    let d = x.dim();
    let n = x.len() as f64;
    let mut acc = vec![0.0; d * d];
    for r in x.rows() {
        for i in 0..d {
            let ci = r[i] - m[i];
            for j in i..d {
                acc[i * d + j] += ci * (r[j] - m[j]);
            }
        }
    }
    SymMatrix::from_upper_fn(d, |i, j| acc[i * d + j] / n)
}

/// Maps each sample to `x / R` when `||x|| <= R`, and to `0` otherwise.
pub fn clip_dataset(x: &Dataset, radius: f64) -> Result<Dataset> {
    if !(radius > 0.0) {
        return Err(invalid("clip radius must be positive"));
    }
    let mut out = x.clone();
    for i in 0..out.len() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= radius {
            for v in row.iter_mut() {
                *v /= radius;
            }
        } else {
            row.fill(0.0);
        }
    }
    Ok(out)
}

/// Classical Gaussian-mechanism noise scale
/// `sensitivity * sqrt(2 ln(1.25/delta)) / epsilon`. The privacy guarantee of
/// this calibration holds for `epsilon <= 1`; larger values are accepted for
/// limit experiments.
pub fn gaussian_sigma(sensitivity: f64, p: &PrivacyParams) -> Result<f64> {
    if !(sensitivity > 0.0) {
        return Err(invalid("sensitivity must be positive"));
    }
    if p.delta <= 0.0 {
        return Err(invalid("the Gaussian mechanism needs delta > 0"));
    }
    if !(p.epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    Ok(sensitivity * (2.0 * (1.25 / p.delta).ln()).sqrt() / p.epsilon)
}

/// Default clip radius `20 sqrt(d)`.
pub fn default_radius(d: usize) -> f64 {
    20.0 * (d as f64).sqrt()
}

/// Post-processing that shrinks toward `center * I` with weight
/// `lambda = tau2 / (tau2 + nu2)`, where `nu2` is the expected squared
/// Frobenius norm of the added noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shrinkage {
    pub tau2: f64,
    pub center: f64,
}

impl Shrinkage {
    pub fn weight(&self, noise_frob2: f64) -> f64 {
        self.tau2 / (self.tau2 + noise_frob2)
    }
}

/// Clip, take the second moment, add a full i.i.d. `N(0, sigma^2)` matrix,
/// symmetrize and rescale by `R^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpGaussCov {
    pub privacy: PrivacyParams,
    pub radius: f64,
    pub shrink: Option<Shrinkage>,
}

impl DpGaussCov {
    pub fn new(privacy: PrivacyParams, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("clip radius must be positive"));
        }
        gaussian_sigma(1.0, &privacy)?;
        Ok(Self {
            privacy,
            radius,
            shrink: None,
        })
    }

    pub fn with_shrinkage(mut self, shrink: Shrinkage) -> Self {
        self.shrink = Some(shrink);
        self
    }

    /// Noise scale on the normalized statistic for sample size `n`.
    pub fn sigma(&self, n: usize) -> f64 {
        gaussian_sigma(2.0 / n as f64, &self.privacy).expect("validated")
    }

    /// `E||R^2 sym(N)||_F^2 = R^4 sigma^2 d(d+1)/2`.
    pub fn noise_frob2(&self, n: usize, d: usize) -> f64 {
        let s = self.radius.powi(2) * self.sigma(n);
        s * s * (d * (d + 1)) as f64 / 2.0
    }

    /// Mixing weight on the noisy estimate (1 without shrinkage).
    pub fn shrink_weight(&self, n: usize, d: usize) -> f64 {
        self.shrink
            .map_or(1.0, |s| s.weight(self.noise_frob2(n, d)))
    }
}

impl CovarianceMechanism for DpGaussCov {
    fn id(&self) -> String {
        "dp-gauss-cov".into()
    }

    fn privacy(&self) -> Option<PrivacyParams> {
        Some(self.privacy)
    }

    fn estimate(&self, x: &Dataset, rng: &mut SimRng) -> Result<SymMatrix> {
        let d = x.dim();
        let y = clip_dataset(x, self.radius)?;
        let stat = empirical_second_moment(&y);
        let sigma = self.sigma(x.len());
        let mut noise = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                noise[(i, j)] = sigma * rng.standard_normal();
            }
        }
        let noisy = symmetrize(&(stat.as_matrix() + noise))?;
        let out = noisy.scale(self.radius * self.radius);
        Ok(match self.shrink {
            None => out,
            Some(s) => {
                let lambda = s.weight(self.noise_frob2(x.len(), d));
                &out.scale(lambda) + &SymMatrix::scaled_identity(d, (1.0 - lambda) * s.center)
            }
        })
    }

    fn sensitivity(&self, n: usize, d: usize) -> Option<f64> {
        Some(self.shrink_weight(n, d) * self.radius * self.radius * 2.0 / n as f64)
    }
}

pub fn dp_covariance_mechanism(
    x: &Dataset,
    p: PrivacyParams,
    radius: f64,
    rng: &mut SimRng,
) -> Result<Estimate> {
    DpGaussCov::new(p, radius)?.run(x, rng)
}

/// Clip, average, add `N(0, sigma^2 I)` and rescale by `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct DpGaussMean {
    pub privacy: PrivacyParams,
    pub radius: f64,
}

impl DpGaussMean {
    pub fn new(privacy: PrivacyParams, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("clip radius must be positive"));
        }
        gaussian_sigma(1.0, &privacy)?;
        Ok(Self { privacy, radius })
    }

    pub fn sigma(&self, n: usize) -> f64 {
        gaussian_sigma(2.0 / n as f64, &self.privacy).expect("validated")
    }
}

impl MeanMechanism for DpGaussMean {
    fn id(&self) -> String {
        "dp-gauss-mean".into()
    }

    fn privacy(&self) -> Option<PrivacyParams> {
        Some(self.privacy)
    }

    fn estimate(&self, x: &Dataset, rng: &mut SimRng) -> Result<Vector> {
        let y = clip_dataset(x, self.radius)?;
        let mean = empirical_mean(&y);
        let sigma = self.sigma(x.len());
        let out: Vec<f64> = mean
            .as_slice()
            .iter()
            .map(|m| self.radius * (m + sigma * rng.standard_normal()))
            .collect();
        Vector::new(out)
    }

    fn sensitivity(&self, n: usize) -> Option<f64> {
        Some(2.0 * self.radius / n as f64)
    }
}

pub fn dp_mean_mechanism(
    x: &Dataset,
    p: PrivacyParams,
    radius: f64,
    rng: &mut SimRng,
) -> Result<Vector> {
    DpGaussMean::new(p, radius)?.estimate(x, rng)
}

/// Non-private sample mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmpiricalMean;

impl MeanMechanism for EmpiricalMean {
    fn id(&self) -> String {
        "empirical-mean".into()
    }
    fn privacy(&self) -> Option<PrivacyParams> {
        None
    }
    fn estimate(&self, x: &Dataset, _rng: &mut SimRng) -> Result<Vector> {
        Ok(empirical_mean(x))
    }
}

/// Non-private `(1/n) sum x_i x_i^T`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Empirical;

impl CovarianceMechanism for Empirical {
    fn id(&self) -> String {
        "empirical".into()
    }
    fn privacy(&self) -> Option<PrivacyParams> {
        None
    }
    fn estimate(&self, x: &Dataset, _rng: &mut SimRng) -> Result<SymMatrix> {
        Ok(empirical_second_moment(x))
    }
}

/// Non-private mean-centered covariance.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmpiricalCentered;

impl CovarianceMechanism for EmpiricalCentered {
    fn id(&self) -> String {
        "empirical-centered".into()
    }
    fn privacy(&self) -> Option<PrivacyParams> {
        None
    }
    fn estimate(&self, x: &Dataset, _rng: &mut SimRng) -> Result<SymMatrix> {
        Ok(empirical_covariance_centered(x))
    }
}

/// Ignores its input and returns a fixed matrix; trivially `(epsilon, 0)`-DP
/// for every `epsilon`, reported as non-private.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    pub value: SymMatrix,
}

impl CovarianceMechanism for Constant {
    fn id(&self) -> String {
        "constant".into()
    }
    fn privacy(&self) -> Option<PrivacyParams> {
        None
    }
    fn estimate(&self, x: &Dataset, _rng: &mut SimRng) -> Result<SymMatrix> {
        if x.dim() != self.value.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.value.dim(),
                got: x.dim(),
            });
        }
        Ok(self.value.clone())
    }
}

/// Ignores its input and returns `center + sym(N)` with i.i.d. `N(0, scale^2)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOnly {
    pub center: SymMatrix,
    pub scale: f64,
}

impl CovarianceMechanism for NoiseOnly {
    fn id(&self) -> String {
        "noise-only".into()
    }
    fn privacy(&self) -> Option<PrivacyParams> {
        None
    }
    fn estimate(&self, x: &Dataset, rng: &mut SimRng) -> Result<SymMatrix> {
        let d = self.center.dim();
        if x.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.dim(),
            });
        }
        let mut noise = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                noise[(i, j)] = self.scale * rng.standard_normal();
            }
        }
        Ok(&self.center + &symmetrize(&noise)?)
    }
}

/// Entrywise lower median of `estimates`, replaced by the zero matrix when its
/// Frobenius norm exceeds `frob_cap`.
pub fn median_boost(estimates: &[SymMatrix], frob_cap: f64) -> Result<SymMatrix> {
    let first = estimates.first().ok_or(Error::Empty("estimate list"))?;
    let d = first.dim();
    if let Some(bad) = estimates.iter().find(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    let mid = (estimates.len() - 1) / 2;
    let mut buf = vec![0.0; estimates.len()];
    let med = SymMatrix::from_upper_fn(d, |i, j| {
        for (b, e) in buf.iter_mut().zip(estimates) {
            *b = e.get(i, j);
        }
        buf.sort_by(f64::total_cmp);
        buf[mid]
    });
    if frobenius_norm(&med) > frob_cap {
        Ok(SymMatrix::zeros(d))
    } else {
        Ok(med)
    }
}

/// Runs `base` on `batches` contiguous disjoint batches of size `floor(n/L)`
/// and combines the outputs with [`median_boost`]. Each sample influences one
/// batch, so the declared privacy of `base` carries over.
pub struct MedianBoost {
    pub base: Box<dyn CovarianceMechanism>,
    pub batches: usize,
    pub frob_cap: f64,
}

impl MedianBoost {
    pub fn new(base: Box<dyn CovarianceMechanism>, batches: usize, frob_cap: f64) -> Result<Self> {
        if batches == 0 {
            return Err(invalid("median boost needs at least one batch"));
        }
        Ok(Self {
            base,
            batches,
            frob_cap,
        })
    }
}

impl CovarianceMechanism for MedianBoost {
    fn id(&self) -> String {
        format!("median-boost({}, {})", self.base.id(), self.batches)
    }

    fn privacy(&self) -> Option<PrivacyParams> {
        self.base.privacy()
    }

    fn estimate(&self, x: &Dataset, rng: &mut SimRng) -> Result<SymMatrix> {
        let size = x.len() / self.batches;
        if size == 0 {
            return Err(invalid(format!(
                "{} samples cannot fill {} batches",
                x.len(),
                self.batches
            )));
        }
        let d = x.dim();
        let mut outs = Vec::with_capacity(self.batches);
        for b in 0..self.batches {
            let chunk = x.as_flat()[b * size * d..(b + 1) * size * d].to_vec();
            let batch = Dataset::from_flat(d, chunk)?;
            outs.push(self.base.estimate(&batch, rng)?);
        }
        median_boost(&outs, self.frob_cap)
    }
}

/// Parameters shared by registry-built mechanisms. Missing values take the
/// defaults documented on each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismParams {
    /// Default 1.
    pub epsilon: f64,
    /// Default 1e-6.
    pub delta: f64,
    /// Clip radius; default `20 sqrt(d)`.
    pub radius: Option<f64>,
    /// Median-boost batch count when not given in the id; default 15.
    pub batches: usize,
    /// Median-boost Frobenius cap; default `20 sqrt(d)`.
    pub frob_cap: Option<f64>,
    /// Optional shrinkage for `dp-gauss-cov`.
    pub shrink: Option<Shrinkage>,
    /// Output of `constant` and center of `noise-only`, as a multiple of `I`;
    /// default is the standard prior mean.
    pub constant: Option<f64>,
    /// Entry scale of `noise-only`; default 1.
    pub noise_scale: f64,
}

impl Default for MechanismParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-6,
            radius: None,
            batches: 15,
            frob_cap: None,
            shrink: None,
            constant: None,
            noise_scale: 1.0,
        }
    }
}

impl MechanismParams {
    pub fn privacy(&self) -> Result<PrivacyParams> {
        PrivacyParams::new(self.epsilon, self.delta)
    }

    pub fn radius_for(&self, d: usize) -> f64 {
        self.radius.unwrap_or_else(|| default_radius(d))
    }

    fn center(&self, d: usize) -> SymMatrix {
        match self.constant {
            Some(c) => SymMatrix::scaled_identity(d, c),
            None => PriorSpec::standard(d).mean(),
        }
    }
}

/// Registry ids accepted by [`build_mechanism`] (the two wrappers take an inner id).
pub const MECHANISM_IDS: &[&str] = &[
    "empirical",
    "empirical-centered",
    "constant",
    "noise-only",
    "dp-gauss-cov",
    "median-boost(<inner>, L)",
    "rescale(<inner>)",
];

/// Builds a covariance mechanism for dimension `d` from its registry id.
pub fn build_mechanism(
    id: &str,
    d: usize,
    params: &MechanismParams,
) -> Result<Box<dyn CovarianceMechanism>> {
    let id = id.trim();
    if let Some(inner) = strip_call(id, "median-boost") {
        let (base_id, batches) = match inner.rsplit_once(',') {
            Some((b, l)) => {
                let l: usize = l
                    .trim()
                    .parse()
                    .map_err(|_| Error::UnknownMechanism(id.to_string()))?;
                (b.trim(), l)
            }
            None => (inner.trim(), params.batches),
        };
        let base = build_mechanism(base_id, d, params)?;
        let cap = params.frob_cap.unwrap_or_else(|| default_radius(d));
        return Ok(Box::new(MedianBoost::new(base, batches, cap)?));
    }
    if let Some(inner) = strip_call(id, "rescale") {
        // The inner mechanism sees unit-ball data.
        let inner_params = MechanismParams {
            radius: Some(params.radius.unwrap_or(1.0)),
            ..params.clone()
        };
        let base = build_mechanism(inner.trim(), d, &inner_params)?;
        return Ok(Box::new(crate::reductions::RescaleReduction::new(base, d)));
    }
    Ok(match id {
        "empirical" => Box::new(Empirical),
        "empirical-centered" => Box::new(EmpiricalCentered),
        "constant" => Box::new(Constant {
            value: params.center(d),
        }),
        "noise-only" => Box::new(NoiseOnly {
            center: params.center(d),
            scale: params.noise_scale,
        }),
        "dp-gauss-cov" => {
            let m = DpGaussCov::new(params.privacy()?, params.radius_for(d))?;
            Box::new(match params.shrink {
                Some(s) => m.with_shrinkage(s),
                None => m,
            })
        }
        other => return Err(Error::UnknownMechanism(other.to_string())),
    })
}

/// Builds a mean mechanism from its registry id (`empirical-mean`, `dp-gauss-mean`).
pub fn build_mean_mechanism(
    id: &str,
    d: usize,
    params: &MechanismParams,
) -> Result<Box<dyn MeanMechanism>> {
    match id.trim() {
        "empirical-mean" => Ok(Box::new(EmpiricalMean)),
        "dp-gauss-mean" => Ok(Box::new(DpGaussMean::new(
            params.privacy()?,
            params.radius_for(d),
        )?)),
        other => Err(Error::UnknownMechanism(other.to_string())),
    }
}

fn strip_call<'a>(id: &'a str, name: &str) -> Option<&'a str> {
    id.strip_prefix(name)?
        .trim_start()
        .strip_prefix('(')?
        .strip_suffix(')')
}
