//! Seeded samplers and closed-form facts for the Gaussian, Wishart,
//! inverse-Wishart, covariance prior and heavy-tailed mixture families.
//!
//! Inverse-Wishart distributions use the standard density parametrization:
//! `W^{-1}(V, m)` has density proportional to
//! `det(S)^{-(m+d+1)/2} exp(-tr(V S^{-1}) / 2)` and is sampled as the inverse
//! of a `W(V^{-1}, m)` draw.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::linalg::{frobenius_norm, sqrt_psd, Matrix, SymMatrix, Vector};
use crate::rng::SimRng;
use crate::stats::MeanSe;

/// Redraws allowed when an inverse-Wishart draw is numerically singular.
pub const SINGULAR_RETRIES: usize = 3;

/// Ordered collection of `n >= 1` samples in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Dataset {
    dim: usize,
    data: Vec<f64>,
}

impl Dataset {
    /// `n` zero samples of dimension `dim`.
    pub fn zeros(n: usize, dim: usize) -> Self {
        assert!(n >= 1 && dim >= 1, "dataset needs n >= 1 and d >= 1");
        Self {
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if data.len() % dim != 0 {
            return Err(invalid("flat dataset length is not a multiple of the dimension"));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("dataset"))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(dim, data)
    }

    pub fn from_vectors(samples: &[Vector]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|v| v.as_slice().to_vec()).collect();
        Self::from_rows(&rows)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sample(&self, i: usize) -> Vector {
        Vector::new(self.row(i).to_vec()).expect("dataset dimension is at least 1")
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Copy with sample `i` replaced by `x` (the neighbouring dataset `X_{~i}`).
    pub fn with_replaced(&self, i: usize, x: &[f64]) -> Result<Dataset> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if i >= self.len() {
            return Err(invalid(format!("sample index {i} out of range")));
        }
        let mut out = self.clone();
        out.row_mut(i).copy_from_slice(x);
        Ok(out)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Dataset {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Dataset::from_rows(&rows)
    }
}

impl From<Dataset> for Vec<Vec<f64>> {
    fn from(x: Dataset) -> Self {
        x.to_rows()
    }
}

/// `N(mean, cov)` sampler with the PSD square root computed once.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: Vec<f64>,
    root: Matrix,
}

impl GaussianSampler {
    pub fn new(mean: &Vector, cov: &SymMatrix) -> Result<Self> {
        if mean.dim() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.dim(),
            });
        }
        Ok(Self {
            mean: mean.as_slice().to_vec(),
            root: sqrt_psd(cov)?.into_matrix(),
        })
    }

    pub fn centered(cov: &SymMatrix) -> Result<Self> {
        Self::new(&Vector::zeros(cov.dim()), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Writes one draw into `out`; consumes `d` standard normals in coordinate order.
    pub fn draw_into(&self, rng: &mut SimRng, z: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        for zj in z.iter_mut() {
            *zj = rng.standard_normal();
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.mean[i];
            for (j, zj) in z.iter().enumerate().take(d) {
                acc += self.root[(i, j)] * zj;
            }
            *o = acc;
        }
    }

    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Dataset {
        let d = self.dim();
        let mut data = vec![0.0; n * d];
        let mut z = vec![0.0; d];
        for row in data.chunks_exact_mut(d) {
            self.draw_into(rng, &mut z, row);
        }
        Dataset { dim: d, data }
    }
}

/// `n` i.i.d. draws `mean + sqrt_psd(cov) z`.
pub fn sample_gaussian(mean: &Vector, cov: &SymMatrix, n: usize, rng: &mut SimRng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("requested sample count"));
    }
    Ok(GaussianSampler::new(mean, cov)?.sample(n, rng))
}

/// `W_d(V, m)`: sum of `m` outer products of `N(0, V)` draws, accumulated in draw order.
#[derive(Debug, Clone)]
pub struct WishartSampler {
    gauss: GaussianSampler,
    dof: usize,
}

impl WishartSampler {
    pub fn new(scale: &SymMatrix, dof: usize) -> Result<Self> {
        if dof == 0 {
            return Err(invalid("Wishart degrees of freedom must be at least 1"));
        }
        if !scale.is_positive_definite() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            gauss: GaussianSampler::centered(scale)?,
            dof,
        })
    }

    pub fn sample(&self, rng: &mut SimRng) -> SymMatrix {
        let g = self.gauss.sample(self.dof, rng);
        let mut acc = SymMatrix::zeros(g.dim());
        for row in g.rows() {
            let v = Vector::new(row.to_vec()).expect("nonempty row");
            acc = &acc + &SymMatrix::outer(&v);
        }
        acc
    }
}

pub fn sample_wishart(scale: &SymMatrix, dof: usize, rng: &mut SimRng) -> Result<SymMatrix> {
    Ok(WishartSampler::new(scale, dof)?.sample(rng))
}

/// `W_d^{-1}(V, m)` in the standard scale parametrization.
#[derive(Debug, Clone)]
pub struct InverseWishartSampler {
    wishart: WishartSampler,
}

impl InverseWishartSampler {
    pub fn new(scale: &SymMatrix, dof: usize) -> Result<Self> {
        if dof < scale.dim() + 2 {
            return Err(invalid(format!(
                "inverse-Wishart needs dof >= d + 2 (got dof {dof}, d {})",
                scale.dim()
            )));
        }
        let inv = scale.inverse_pd()?;
        Ok(Self {
            wishart: WishartSampler::new(&inv, dof)?,
        })
    }

    pub fn sample(&self, rng: &mut SimRng) -> Result<SymMatrix> {
        for _ in 0..=SINGULAR_RETRIES {
            let w = self.wishart.sample(rng);
            if let Ok(inv) = w.inverse_pd() {
                if inv.is_positive_definite() {
                    return Ok(inv);
                }
            }
        }
        Err(Error::SingularDraw {
            attempts: SINGULAR_RETRIES + 1,
        })
    }
}

pub fn sample_inverse_wishart(scale: &SymMatrix, dof: usize, rng: &mut SimRng) -> Result<SymMatrix> {
    InverseWishartSampler::new(scale, dof)?.sample(rng)
}

/// `E[W_d(V, m)] = m V`.
pub fn wishart_mean(scale: &SymMatrix, dof: usize) -> SymMatrix {
    scale.scale(dof as f64)
}

/// `E[W_d^{-1}(V, m)] = V / (m - d - 1)`.
pub fn inverse_wishart_mean(scale: &SymMatrix, dof: usize) -> Result<SymMatrix> {
    let d = scale.dim();
    if dof < d + 2 {
        return Err(invalid("inverse-Wishart mean needs dof >= d + 2"));
    }
    Ok(scale.scale(1.0 / (dof - d - 1) as f64))
}

/// `ln Gamma_d(a) = d(d-1)/4 ln(pi) + sum_{j=1..d} ln Gamma(a + (1-j)/2)`.
pub fn ln_multivariate_gamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=d)
            .map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0))
            .sum::<f64>()
}

/// Inverse-Wishart log density at `sigma`; the normalizing constant is
/// included only when `normalized` is set.
pub fn log_density_inverse_wishart(
    sigma: &SymMatrix,
    scale: &SymMatrix,
    dof: usize,
    normalized: bool,
) -> Result<f64> {
    if sigma.dim() != scale.dim() {
        return Err(Error::DimensionMismatch {
            expected: scale.dim(),
            got: sigma.dim(),
        });
    }
    let d = sigma.dim() as f64;
    let m = dof as f64;
    let ln_det = sigma.ln_det_pd()?;
    let inv = sigma.inverse_pd()?;
    let tr = (scale.as_matrix() * inv.as_matrix()).trace();
    let mut value = -(m + d + 1.0) / 2.0 * ln_det - tr / 2.0;
    if normalized {
        value += m / 2.0 * scale.ln_det_pd()?
            - m * d / 2.0 * std::f64::consts::LN_2
            - ln_multivariate_gamma(sigma.dim(), m / 2.0);
    }
    Ok(value)
}

/// Inverse-Wishart prior on the covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub scale: SymMatrix,
    pub dof: usize,
}

impl PriorSpec {
    /// Degrees of freedom of the standard prior in dimension `d`: `2d`,
    /// raised to `d + 2` when needed for the mean to exist.
    pub fn standard_dof(d: usize) -> usize {
        (2 * d).max(d + 2)
    }

    /// `W^{-1}(m I, m)` with `m = standard_dof(d)`.
    pub fn standard(d: usize) -> Self {
        let m = Self::standard_dof(d);
        Self {
            scale: SymMatrix::scaled_identity(d, m as f64),
            dof: m,
        }
    }

    pub fn new(scale: SymMatrix, dof: usize) -> Result<Self> {
        if !scale.is_positive_definite() {
            return Err(Error::NotPositiveDefinite);
        }
        if dof < scale.dim() + 2 {
            return Err(invalid("prior needs dof >= d + 2"));
        }
        Ok(Self { scale, dof })
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }

    pub fn mean(&self) -> SymMatrix {
        inverse_wishart_mean(&self.scale, self.dof).expect("validated prior")
    }

    pub fn sampler(&self) -> Result<InverseWishartSampler> {
        InverseWishartSampler::new(&self.scale, self.dof)
    }

    pub fn sample(&self, rng: &mut SimRng) -> Result<SymMatrix> {
        self.sampler()?.sample(rng)
    }
}

/// One draw from the standard prior in dimension `d`.
pub fn sample_prior(d: usize, rng: &mut SimRng) -> Result<SymMatrix> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    PriorSpec::standard(d).sample(rng)
}

/// Operator-norm tail bound for the standard prior: `(e^2 / x)^{d/2}`.
pub fn prior_tail_bound(d: usize, x: f64) -> f64 {
    (std::f64::consts::E.powi(2) / x).powf(d as f64 / 2.0)
}

/// Mixture placing weight `beta^{k/(k-1)}` on
/// `N(beta^{-1/(k-1)} mu, beta^{-2/(k-1)} I)` and the rest on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailSpec {
    pub k: u32,
    pub beta: f64,
    pub mu: Vector,
}

impl HeavyTailSpec {
    pub fn new(k: u32, beta: f64, mu: Vector) -> Result<Self> {
        let spec = Self { k, beta, mu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(invalid("moment order k must be at least 2"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid(format!(
                "beta must lie in (0, 1], got {}; alpha > 1/T falls outside the padding construction",
                self.beta
            )));
        }
        if self.mu.norm() > 1.0 + 1e-12 {
            return Err(invalid("mean vector must have norm at most 1"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Mixture weight `beta^{k/(k-1)}` of the Gaussian component.
    pub fn rate(&self) -> f64 {
        let k = f64::from(self.k);
        self.beta.powf(k / (k - 1.0))
    }

    /// Blow-up factor `beta^{-1/(k-1)}` applied to the mean and standard deviation.
    pub fn inflation(&self) -> f64 {
        self.beta.powf(-1.0 / (f64::from(self.k) - 1.0))
    }

    /// Mean of the Gaussian component.
    pub fn component_mean(&self) -> Vector {
        self.mu.scale(self.inflation())
    }

    /// `E[D_mu] = beta mu`.
    pub fn mean(&self) -> Vector {
        self.mu.scale(self.beta)
    }
}

/// I.i.d. mixture draws; each sample consumes one uniform and, on a hit, `d` normals.
pub fn sample_heavy_tailed(spec: &HeavyTailSpec, n: usize, rng: &mut SimRng) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty("requested sample count"));
    }
    let d = spec.dim();
    let rate = spec.rate();
    let s = spec.inflation();
    let center = spec.component_mean();
    let mut out = Dataset::zeros(n, d);
    for i in 0..n {
        if rng.bernoulli(rate) {
            let row = out.row_mut(i);
            for (j, x) in row.iter_mut().enumerate() {
                *x = center[j] + s * rng.standard_normal();
            }
        }
    }
    Ok(out)
}

/// Double factorial `n!!`, with `0!! = (-1)!! = 1`.
pub fn double_factorial(n: u32) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= f64::from(k);
        k -= 2;
    }
    acc
}

/// `C0(k) = 2^{k-1} (k-1)!!`, a bound on the `k`-th absolute moment of
/// `N(x, s^2)` with `|x| <= 1`, `s <= 1` from
/// `E|N(x, s^2)|^k <= 2^{k-1} (|x|^k + s^k (k-1)!!)`.
pub fn gaussian_moment_constant(k: u32) -> f64 {
    2f64.powi(k as i32 - 1) * double_factorial(k - 1)
}

/// Directional `k`-th moment bound of the mixture: `2^k C0(k) + 1`.
pub fn heavy_tail_moment_bound(k: u32) -> f64 {
    2f64.powi(k as i32) * gaussian_moment_constant(k) + 1.0
}

/// MC estimate of `E|<D_mu - E D_mu, v>|^k` over `trials` mixture draws.
pub fn kth_moment_estimate(
    spec: &HeavyTailSpec,
    v: &Vector,
    trials: usize,
    rng: &mut SimRng,
) -> Result<MeanSe> {
    if trials == 0 {
        return Err(Error::Empty("trial count"));
    }
    if v.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: v.dim(),
        });
    }
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(invalid("direction must be a unit vector"));
    }
    let center = spec.mean().dot(v)?;
    let x = sample_heavy_tailed(spec, trials, rng)?;
    let k = spec.k as i32;
    let vals: Vec<f64> = x
        .rows()
        .map(|r| {
            let proj: f64 = r.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
            (proj - center).abs().powi(k)
        })
        .collect();
    MeanSe::from_values(&vals)
}

/// Concentration bound `2 exp(-c1 min(t^2/||S||_F^2, t/||S||_op))` for `||X||^2 - tr(S)`.
pub fn hanson_wright_bound(sigma: &SymMatrix, t: f64, c1: f64) -> Result<f64> {
    let fro = frobenius_norm(sigma);
    let op = crate::linalg::operator_norm(sigma)?;
    if fro == 0.0 {
        return Ok(if t > 0.0 { 0.0 } else { 2.0 });
    }
    Ok(2.0 * (-c1 * (t * t / (fro * fro)).min(t / op)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub empirical: MeanSe,
    pub bound: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HansonWrightReport {
    pub c1: f64,
    pub trials: usize,
    pub rows: Vec<TailRow>,
}

impl HansonWrightReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| !r.violated)
    }
}

/// Empirical tails of `| ||X||^2 - tr(S) |` for `X ~ N(0, S)` on a grid of `t`,
/// each compared against [`hanson_wright_bound`].
pub fn hanson_wright_check(
    sigma: &SymMatrix,
    ts: &[f64],
    c1: f64,
    trials: usize,
    rng: &mut SimRng,
) -> Result<HansonWrightReport> {
    if trials == 0 {
        return Err(Error::Empty("trial count"));
    }
    let x = sample_gaussian(&Vector::zeros(sigma.dim()), sigma, trials, rng)?;
    let tr = sigma.trace();
    let devs: Vec<f64> = x
        .rows()
        .map(|r| (r.iter().map(|a| a * a).sum::<f64>() - tr).abs())
        .collect();
    let mut rows = Vec::with_capacity(ts.len());
    for &t in ts {
        let flags: Vec<bool> = devs.iter().map(|&v| v >= t).collect();
        let empirical = MeanSe::from_indicators(&flags)?;
        let bound = hanson_wright_bound(sigma, t, c1)?;
        let violated = empirical.mean > bound + crate::stats::SE_MULTIPLIER * empirical.se;
        rows.push(TailRow {
            t,
            empirical,
            bound,
            violated,
        });
    }
    Ok(HansonWrightReport { c1, trials, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigen_extremes;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from(seed)
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let mu = Vector::new(vec![1.0, -2.0, 0.5]).unwrap();
        let x = sample_gaussian(&mu, &SymMatrix::zeros(3), 7, &mut rng(1)).unwrap();
        assert!(x.rows().all(|r| r == mu.as_slice()));
        let cov = SymMatrix::diag(&[1.0, 2.0, 3.0]).unwrap();
        let a = sample_gaussian(&mu, &cov, 50, &mut rng(5)).unwrap();
        let b = sample_gaussian(&mu, &cov, 50, &mut rng(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_variance_in_range() {
        let x = sample_gaussian(
            &Vector::zeros(1),
            &SymMatrix::diag(&[4.0]).unwrap(),
            100_000,
            &mut rng(2),
        )
        .unwrap();
        let v: Vec<f64> = x.rows().map(|r| r[0]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((3.9..=4.1).contains(&var), "variance {var}");
    }

    #[test]
    fn gaussian_rejects_non_psd() {
        let bad = SymMatrix::diag(&[1.0, -1.0]).unwrap();
        assert!(matches!(
            sample_gaussian(&Vector::zeros(2), &bad, 3, &mut rng(0)),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn wishart_matches_outer_product_reference() {
        let v = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let w = sample_wishart(&v, 6, &mut rng(11)).unwrap();
        let g = sample_gaussian(&Vector::zeros(2), &v, 6, &mut rng(11)).unwrap();
        let mut reference = SymMatrix::zeros(2);
        for i in 0..g.len() {
            reference = &reference + &SymMatrix::outer(&g.sample(i));
        }
        assert_eq!(w, reference);
    }

    #[test]
    fn wishart_chi_squared_mean() {
        let s = WishartSampler::new(&SymMatrix::identity(1), 3).unwrap();
        let mut r = rng(3);
        let vals: Vec<f64> = (0..100_000).map(|_| s.sample(&mut r).get(0, 0)).collect();
        assert!(MeanSe::from_values(&vals).unwrap().within_4se(3.0));
    }

    #[test]
    fn wishart_independent_coordinates() {
        let s = WishartSampler::new(&SymMatrix::diag(&[1.0, 4.0]).unwrap(), 5).unwrap();
        let mut r = rng(4);
        let vals: Vec<f64> = (0..50_000).map(|_| s.sample(&mut r).get(0, 1)).collect();
        assert!(MeanSe::from_values(&vals).unwrap().within_4se(0.0));
    }

    #[test]
    fn inverse_wishart_scale_equivariance() {
        let v = SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.5]]).unwrap();
        let a = sample_inverse_wishart(&v, 7, &mut rng(9)).unwrap();
        let b = sample_inverse_wishart(&v.scale(3.0), 7, &mut rng(9)).unwrap();
        let diff = frobenius_norm(&(&b - &a.scale(3.0)));
        assert!(diff <= 1e-10 * frobenius_norm(&b), "diff {diff}");
    }

    #[test]
    fn inverse_wishart_requires_dof() {
        assert!(sample_inverse_wishart(&SymMatrix::identity(3), 4, &mut rng(0)).is_err());
    }

    #[test]
    fn log_density_plug_in() {
        let one = SymMatrix::identity(1);
        let v = log_density_inverse_wishart(&one, &one, 5, false).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
        assert!(log_density_inverse_wishart(&SymMatrix::zeros(1), &one, 5, false).is_err());
    }

    #[test]
    fn log_density_differences_match_formula() {
        let v = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let a = SymMatrix::from_rows(&[vec![1.0, 0.1], vec![0.1, 0.7]]).unwrap();
        let b = SymMatrix::from_rows(&[vec![0.4, -0.1], vec![-0.1, 2.0]]).unwrap();
        let m = 6.0;
        let raw = |s: &SymMatrix| {
            let det = s.get(0, 0) * s.get(1, 1) - s.get(0, 1) * s.get(1, 0);
            let inv = s.inverse_pd().unwrap();
            let tr = (v.as_matrix() * inv.as_matrix()).trace();
            -(m + 3.0) / 2.0 * det.ln() - tr / 2.0
        };
        let lhs = log_density_inverse_wishart(&a, &v, 6, true).unwrap()
            - log_density_inverse_wishart(&b, &v, 6, true).unwrap();
        assert!((lhs - (raw(&a) - raw(&b))).abs() < 1e-12);
    }

    #[test]
    fn normalized_density_integrates_to_one() {
        let one = SymMatrix::identity(1);
        let f = |x: f64| {
            if x <= 0.0 {
                return 0.0;
            }
            let s = SymMatrix::diag(&[x]).unwrap();
            log_density_inverse_wishart(&s, &one, 5, true).unwrap().exp()
        };
        let total = crate::stats::integrate(&f, 1e-9, 1.0, 1e-12)
            + crate::stats::integrate(&|u: f64| f(1.0 / u) / (u * u), 1e-9, 1.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-6, "mass {total}");
    }

    #[test]
    fn prior_shape() {
        let p = PriorSpec::standard(4);
        assert_eq!(p.dof, 8);
        assert!(frobenius_norm(&(&p.mean() - &SymMatrix::scaled_identity(4, 8.0 / 3.0))) < 1e-12);
        assert_eq!(PriorSpec::standard(1).dof, 3);
        let s = sample_prior(3, &mut rng(1)).unwrap();
        assert!(eigen_extremes(&s).unwrap().0 > 0.0);
    }

    #[test]
    fn heavy_tail_validation() {
        let mu = Vector::new(vec![0.6, 0.8]).unwrap();
        assert!(HeavyTailSpec::new(2, 1.5, mu.clone()).is_err());
        assert!(HeavyTailSpec::new(1, 0.5, mu.clone()).is_err());
        assert!(HeavyTailSpec::new(2, 0.5, mu.scale(1.1)).is_err());
        let spec = HeavyTailSpec::new(3, 0.25, mu).unwrap();
        assert!((spec.rate() - 0.125).abs() < 1e-15);
        assert!((spec.inflation() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn heavy_tail_degenerate_weight_is_standard_normal() {
        let spec = HeavyTailSpec::new(2, 1.0, Vector::zeros(2)).unwrap();
        let x = sample_heavy_tailed(&spec, 50_000, &mut rng(8)).unwrap();
        assert!(x.rows().all(|r| r.iter().any(|&v| v != 0.0)));
        let c00: Vec<f64> = x.rows().map(|r| r[0] * r[0]).collect();
        let c01: Vec<f64> = x.rows().map(|r| r[0] * r[1]).collect();
        assert!(MeanSe::from_values(&c00).unwrap().within_4se(1.0));
        assert!(MeanSe::from_values(&c01).unwrap().within_4se(0.0));
    }

    #[test]
    fn heavy_tail_zero_fraction() {
        let spec = HeavyTailSpec::new(2, 0.25, Vector::basis(4, 0)).unwrap();
        let x = sample_heavy_tailed(&spec, 100_000, &mut rng(12)).unwrap();
        let zeros: Vec<bool> = x.rows().map(|r| r.iter().all(|&v| v == 0.0)).collect();
        assert!(MeanSe::from_indicators(&zeros).unwrap().within_4se(1.0 - 0.0625));
    }

    #[test]
    fn moment_constants() {
        assert_eq!(double_factorial(3), 3.0);
        assert_eq!(double_factorial(0), 1.0);
        assert_eq!(gaussian_moment_constant(4), 24.0);
        assert_eq!(gaussian_moment_constant(2), 2.0);
        assert_eq!(heavy_tail_moment_bound(4), 385.0);
        assert_eq!(heavy_tail_moment_bound(2), 9.0);
    }

    #[test]
    fn second_moment_of_standard_normal_mixture() {
        let spec = HeavyTailSpec::new(2, 1.0, Vector::zeros(3)).unwrap();
        let v = Vector::new(vec![0.6, 0.0, 0.8]).unwrap();
        let est = kth_moment_estimate(&spec, &v, 100_000, &mut rng(14)).unwrap();
        assert!(est.within_4se(1.0));
        assert!(kth_moment_estimate(&spec, &v, 0, &mut rng(14)).is_err());
    }

    #[test]
    fn hanson_wright_trivial_cases() {
        let rep = hanson_wright_check(&SymMatrix::identity(3), &[0.0], 0.125, 100, &mut rng(1)).unwrap();
        assert_eq!(rep.rows[0].empirical.mean, 1.0);
        assert_eq!(rep.rows[0].bound, 2.0);
        assert!(rep.pass());
        let rep = hanson_wright_check(&SymMatrix::zeros(3), &[0.5, 1.0], 0.125, 100, &mut rng(1)).unwrap();
        assert!(rep.rows.iter().all(|r| r.empirical.mean == 0.0 && r.bound == 0.0));
    }

    #[test]
    fn hanson_wright_isotropic_against_chi_squared() {
        let rep = hanson_wright_check(&SymMatrix::identity(20), &[20.0], 0.125, 100_000, &mut rng(2)).unwrap();
        let row = &rep.rows[0];
        assert!((row.bound - 2.0 * (-2.5f64).exp()).abs() < 1e-12);
        assert!(rep.pass());
        // Exact two-sided chi-squared tail; the lower side is empty since chi2 >= 0 > 20 - 20.
        let chi = ChiSquared::new(20.0).unwrap();
        let exact = 1.0 - chi.cdf(40.0) + chi.cdf(0.0);
        assert!(row.empirical.within_4se(exact), "{:?} vs {exact}", row.empirical);
    }
}
