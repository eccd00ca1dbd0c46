//! Closed-form bounds on the optimal averaged excess risk.
//!
//! Every bound is a function of the effective spectrum `Σ_H` (eigenvalues
//! `μ_j`), the sample size `n` and the noise model. The building block is the
//! map `λ ↦ λ·df₁(Σ_H; λ)`, which is nondecreasing in `λ`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, not_applicable, Result};
use crate::quadrature::capacity_constant;
use crate::spectra::{tail_sums, Spectrum};

/// Noise level and the fourth-moment constant of the (transformed) covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Noise variance `σ²`.
    pub sigma2: f64,
    /// `L_H²` with `E[‖X̃‖² X̃X̃ᵀ] ⪯ L_H² Σ_H`.
    pub lh2: f64,
    /// Whether `‖X̃‖² ≤ L_H²` holds almost surely.
    pub bounded: bool,
    /// Kurtosis constant `κ` (3 for Gaussian covariates).
    pub kappa: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64, lh2: f64, bounded: bool, kappa: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(invalid(format!("sigma2 = {sigma2} must be >= 0")));
        }
        if !(lh2.is_finite() && lh2 > 0.0) {
            return Err(invalid(format!("L_H^2 = {lh2} must be > 0")));
        }
        if !(kappa.is_finite() && kappa >= 1.0) {
            return Err(invalid(format!("kappa = {kappa} must be >= 1")));
        }
        Ok(Self { sigma2, lh2, bounded, kappa })
    }

    /// Unbounded covariates with kurtosis constant `κ`: `L_H² = κ Tr(Σ_H)`.
    pub fn from_kurtosis(sigma2: f64, kappa: f64, effective: &Spectrum) -> Result<Self> {
        Self::new(sigma2, kappa * effective.trace(), false, kappa)
    }

    /// Gaussian covariates (`κ = 3`).
    pub fn gaussian(sigma2: f64, effective: &Spectrum) -> Result<Self> {
        Self::from_kurtosis(sigma2, 3.0, effective)
    }

    /// Covariates with `‖X̃‖² ≤ L_H²` almost surely.
    pub fn bounded(sigma2: f64, lh2: f64) -> Result<Self> {
        Self::new(sigma2, lh2, true, 1.0)
    }
}

/// Which bound produced a [`BoundReport`]. The string tags are the CSV values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundKind {
    #[serde(rename = "thm2")]
    NoisySandwich,
    #[serde(rename = "thm3")]
    VarianceLower,
    #[serde(rename = "thm4")]
    SupVarianceLower,
    #[serde(rename = "thm5")]
    NoiselessSandwich,
    #[serde(rename = "cor1")]
    CapacityNoiseless,
    #[serde(rename = "thm6")]
    FastDecay,
    #[serde(rename = "ex4")]
    CapacityRate,
    #[serde(rename = "lowdim")]
    Underparametrized,
}

impl BoundKind {
    pub const ALL: [BoundKind; 8] = [
        BoundKind::NoisySandwich,
        BoundKind::VarianceLower,
        BoundKind::SupVarianceLower,
        BoundKind::NoiselessSandwich,
        BoundKind::CapacityNoiseless,
        BoundKind::FastDecay,
        BoundKind::CapacityRate,
        BoundKind::Underparametrized,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            BoundKind::NoisySandwich => "thm2",
            BoundKind::VarianceLower => "thm3",
            BoundKind::SupVarianceLower => "thm4",
            BoundKind::NoiselessSandwich => "thm5",
            BoundKind::CapacityNoiseless => "cor1",
            BoundKind::FastDecay => "thm6",
            BoundKind::CapacityRate => "ex4",
            BoundKind::Underparametrized => "lowdim",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Lower/upper pair with the regularization levels that produced them.
///
/// One-sided bounds carry `0` (lower) or `+∞` (upper) on the missing side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub lower: f64,
    pub upper: f64,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    /// Minimizing split index, for the tail-sum bound.
    pub k_star: Option<usize>,
}

impl BoundReport {
    fn new(kind: BoundKind, lower: f64, upper: f64, lambda_lower: f64, lambda_upper: f64) -> Self {
        debug_assert!(lower <= upper, "{kind}: lower {lower} > upper {upper}");
        Self { kind, lower, upper, lambda_lower, lambda_upper, k_star: None }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("sample size n must be >= 1"));
    }
    Ok(())
}

/// `λ·df₁(Σ_H; λ)`, which is `0` at `λ = 0`.
pub fn penalized_df(s: &Spectrum, lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * s.df1(lambda)
    }
}

/// `λ df₁(Σ_H; λ) ≤ ε̄(Σ_H; σ²) ≤ (λ+λ₀) df₁(Σ_H; λ+λ₀)` with `λ = σ²/n`, `λ₀ = L_H²/n`.
pub fn noisy_sandwich(s: &Spectrum, n: usize, noise: &NoiseModel) -> Result<BoundReport> {
    check_n(n)?;
    let lambda = noise.sigma2 / n as f64;
    let lambda0 = noise.lh2 / n as f64;
    let lower = penalized_df(s, lambda);
    let upper = penalized_df(s, lambda + lambda0);
    Ok(BoundReport::new(BoundKind::NoisySandwich, lower, upper, lambda, lambda + lambda0))
}

/// Lower bound on the variance-like term `ε̄(Σ_H; σ²) − ε̄(Σ_H; 0)` through `df₂`.
///
/// * `L_H² < σ²`: `(1 − L_H²/σ²)(σ²/n) df₂(Σ_H; (σ² + L_H²)/n)`;
/// * otherwise, for a.s. bounded covariates: `(σ²/n) df₂(Σ_H; σ²/n) / (1 + L_H²/σ²)²`.
pub fn variance_lower_bound(s: &Spectrum, n: usize, noise: &NoiseModel) -> Result<f64> {
    Ok(variance_lower_report(s, n, noise)?.lower)
}

pub fn variance_lower_report(s: &Spectrum, n: usize, noise: &NoiseModel) -> Result<BoundReport> {
    check_n(n)?;
    let sigma2 = noise.sigma2;
    if sigma2 == 0.0 {
        return Err(not_applicable("variance-like lower bound needs sigma2 > 0"));
    }
    let nf = n as f64;
    let (lower, lambda) = if noise.lh2 < sigma2 {
        let lambda = (sigma2 + noise.lh2) / nf;
        ((1.0 - noise.lh2 / sigma2) * sigma2 / nf * s.df2(lambda), lambda)
    } else if noise.bounded {
        let lambda = sigma2 / nf;
        let c = 1.0 / (1.0 + noise.lh2 / sigma2).powi(2);
        (c * sigma2 / nf * s.df2(lambda), lambda)
    } else {
        return Err(not_applicable("L_H^2 >= sigma2 and covariates not almost surely bounded"));
    };
    Ok(BoundReport::new(BoundKind::VarianceLower, lower, f64::INFINITY, lambda, f64::NAN))
}

/// `(λ+λ₀) df₁(Σ_H; λ+λ₀) − λ₀ df₁(Σ_H; λ₀)`: lower bound on the supremum of
/// the variance-like term over covariate laws with the given `Σ_H` and `L_H²`.
pub fn sup_variance_lower_bound(s: &Spectrum, n: usize, noise: &NoiseModel) -> Result<f64> {
    check_n(n)?;
    let lambda = noise.sigma2 / n as f64;
    let lambda0 = noise.lh2 / n as f64;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let diff = penalized_df(s, lambda + lambda0) - penalized_df(s, lambda0);
    Ok(diff.max(0.0))
}

/// Implicit noise `σ₀² = max_{n+3 ≤ k ≤ d} (k−1)(k−n−2) / Σ_{j=2}^k μ_j^{-1}`.
pub fn implicit_noise_variance(s: &Spectrum, n: usize) -> Result<f64> {
    let d = s.dim();
    if d <= n + 2 {
        return Err(not_applicable(format!("implicit noise needs d > n + 2 (d = {d}, n = {n})")));
    }
    let mu = s.values();
    let mut inv_sum = 0.0;
    let mut best: f64 = 0.0;
    // k is 1-indexed; mu[k - 1] is μ_k
    for k in 2..=d {
        inv_sum += 1.0 / mu[k - 1];
        if k >= n + 3 {
            let kf = k as f64;
            let value = (kf - 1.0) * (kf - n as f64 - 2.0) / inv_sum;
            best = best.max(value);
        }
    }
    Ok(best)
}

/// Noiseless sandwich `λ̲₀ df₁(λ̲₀) ≤ ε̄(Σ_H; 0) ≤ λ̄₀ df₁(λ̄₀)` with
/// `λ̲₀ = σ₀²/n` and `λ̄₀ = 3 Tr(Σ_H)/n`.
pub fn noiseless_sandwich(s: &Spectrum, n: usize) -> Result<BoundReport> {
    check_n(n)?;
    let sigma02 = implicit_noise_variance(s, n)?;
    let lo = sigma02 / n as f64;
    let hi = 3.0 * s.trace() / n as f64;
    Ok(BoundReport::new(
        BoundKind::NoiselessSandwich,
        penalized_df(s, lo),
        penalized_df(s, hi),
        lo,
        hi,
    ))
}

/// Constant `c = (1 − (n+2)/d)(1+a)(1−a)/12` for a capacity spectrum `μ_j ∝ j^{-a}`, `a ∈ (0, 1)`.
pub fn capacity_noiseless_constant(a: f64, n: usize, d: usize) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(not_applicable(format!("capacity constant needs exponent in (0, 1), got {a}")));
    }
    if d <= n + 2 {
        return Err(not_applicable("capacity constant needs d > n + 2"));
    }
    Ok((1.0 - (n as f64 + 2.0) / d as f64) * (1.0 + a) * (1.0 - a) / 12.0)
}

/// `c·λ̄₀ df₁(λ̄₀) ≤ ε̄(Σ_H; 0) ≤ λ̄₀ df₁(λ̄₀)` for `μ_j ∝ j^{-a}`, `a ∈ (0, 1)`.
pub fn capacity_noiseless_sandwich(s: &Spectrum, n: usize, a: f64) -> Result<BoundReport> {
    check_n(n)?;
    let c = capacity_noiseless_constant(a, n, s.dim())?;
    let hi = 3.0 * s.trace() / n as f64;
    let upper = penalized_df(s, hi);
    Ok(BoundReport::new(BoundKind::CapacityNoiseless, c * upper, upper, hi, hi))
}

/// `R_n ≤ ε̄(Σ_H; 0) ≤ min_{0 ≤ k ≤ n−2} (n−1)/(n−k−1) R_k`, reporting the minimizing `k`.
pub fn fast_decay_sandwich(s: &Spectrum, n: usize) -> Result<BoundReport> {
    if n < 2 {
        return Err(invalid("tail-sum sandwich needs n >= 2"));
    }
    if s.dim() < n {
        return Err(invalid(format!("tail-sum sandwich needs d >= n (d = {}, n = {n})", s.dim())));
    }
    let tails = tail_sums(s);
    let (k_star, upper) = (0..=n - 2)
        .map(|k| (k, fast_decay_factor(n, k) * tails[k]))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let mut report = BoundReport::new(BoundKind::FastDecay, tails[n], upper, 0.0, 0.0);
    report.k_star = Some(k_star);
    Ok(report)
}

fn fast_decay_factor(n: usize, k: usize) -> f64 {
    (n as f64 - 1.0) / (n as f64 - k as f64 - 1.0)
}

/// Tail-sum upper bound at a forced split `k < n − 1`.
pub fn fast_decay_upper_at(s: &Spectrum, n: usize, k: usize) -> Result<f64> {
    if n < 2 || k + 1 >= n {
        return Err(invalid(format!("split k = {k} must satisfy k < n - 1 (n = {n})")));
    }
    if k > s.dim() {
        return Err(invalid("split exceeds dimension"));
    }
    Ok(fast_decay_factor(n, k) * tail_sums(s)[k])
}

/// Rate `C_{2αr} ρ² (σ²/(nρ²) + κ/n)^{1 − 1/(2αr)}` under source and capacity conditions.
pub fn capacity_rate(alpha: f64, r: f64, rho2: f64, sigma2: f64, kappa: f64, n: usize) -> Result<f64> {
    check_n(n)?;
    let a = 2.0 * alpha * r;
    if a.is_nan() || a <= 1.0 {
        return Err(not_applicable(format!("rate needs 2·alpha·r > 1, got {a}")));
    }
    if rho2.is_nan() || rho2 <= 0.0 {
        return Err(invalid("rho2 must be > 0"));
    }
    let c = capacity_constant(a)?;
    let nf = n as f64;
    Ok(c * rho2 * (sigma2 / (nf * rho2) + kappa / nf).powf(1.0 - 1.0 / a))
}

/// Least-squares risk bound `σ² d / (n − d − 1)` for Gaussian covariates, `n > d + 1`.
pub fn underparam_upper_bound(s: &Spectrum, n: usize, sigma2: f64) -> Result<f64> {
    let d = s.dim();
    if n <= d + 1 {
        return Err(not_applicable(format!("needs n > d + 1 (d = {d}, n = {n})")));
    }
    Ok(sigma2 * d as f64 / (n as f64 - d as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{capacity_spectrum, effective_spectrum, tail_sum, SourcePrior};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn one() -> Spectrum {
        Spectrum::new(vec![1.0]).unwrap()
    }

    #[test]
    fn noisy_sandwich_examples() {
        let r = noisy_sandwich(&one(), 1, &NoiseModel::new(1.0, 1.0, false, 3.0).unwrap()).unwrap();
        assert_relative_eq!(r.lower, 0.5, max_relative = 1e-15);
        assert_relative_eq!(r.upper, 2.0 / 3.0, max_relative = 1e-15);

        let s = capacity_spectrum(30, 1.2).unwrap();
        let noise = NoiseModel::gaussian(0.0, &s).unwrap();
        let r = noisy_sandwich(&s, 7, &noise).unwrap();
        assert_eq!(r.lower, 0.0);
        let l0 = 3.0 * s.trace() / 7.0;
        assert_relative_eq!(r.upper, l0 * s.df1(l0), max_relative = 1e-15);
        assert!(noisy_sandwich(&s, 0, &noise).is_err());
    }

    #[test]
    fn noisy_sandwich_on_the_sphere() {
        // r = 1/2 prior: Σ_H = ρ²Σ/Tr(Σ); upper = ((σ²+κρ²)/n)·df₁(Σ; λ'),
        // λ' = (Tr(Σ)/n)(σ²/ρ²) + κ/n·Tr(Σ)
        let base = capacity_spectrum(40, 0.7).unwrap();
        let (rho2, sigma2, n, kappa) = (2.0, 0.5, 25, 3.0);
        let mu = effective_spectrum(&base, &SourcePrior::new(0.5, rho2).unwrap()).unwrap();
        let r = noisy_sandwich(&mu, n, &NoiseModel::from_kurtosis(sigma2, kappa, &mu).unwrap()).unwrap();
        let tr = base.trace();
        let nf = n as f64;
        let lambda_prime = tr / nf * sigma2 / rho2 + kappa * tr / nf;
        let expect = (sigma2 + kappa * rho2) / nf * base.df1(lambda_prime);
        assert_relative_eq!(r.upper, expect, max_relative = 1e-12);
        // with Tr(Σ) ≥ 1 the shorter penalty Tr(Σ)σ²/(nρ²) + κ/n only loosens it
        assert!(tr >= 1.0);
        let loose = (sigma2 + kappa * rho2) / nf * base.df1(tr / nf * sigma2 / rho2 + kappa / nf);
        assert!(loose >= r.upper);
    }

    #[test]
    fn variance_lower_examples() {
        let s = one();
        let unbounded = NoiseModel::new(1.0, 1.0, false, 3.0).unwrap();
        assert!(matches!(
            variance_lower_bound(&s, 1, &unbounded),
            Err(crate::Error::NotApplicable(_))
        ));
        let first = NoiseModel::new(2.0, 1.0, false, 3.0).unwrap();
        assert_relative_eq!(variance_lower_bound(&s, 1, &first).unwrap(), 1.0 / 16.0, max_relative = 1e-15);
        let bounded = NoiseModel::bounded(1.0, 1.0).unwrap();
        assert_relative_eq!(variance_lower_bound(&s, 1, &bounded).unwrap(), 0.0625, max_relative = 1e-15);
        let quiet = NoiseModel::bounded(0.0, 1.0).unwrap();
        assert!(variance_lower_bound(&s, 1, &quiet).is_err());
    }

    #[test]
    fn sup_variance_examples() {
        let s = one();
        assert_eq!(sup_variance_lower_bound(&s, 1, &NoiseModel::bounded(0.0, 1.0).unwrap()).unwrap(), 0.0);
        let v = sup_variance_lower_bound(&s, 1, &NoiseModel::bounded(1.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(v, 1.0 / 6.0, max_relative = 1e-14);

        let s = capacity_spectrum(20, 1.0).unwrap();
        let mut prev = 0.0;
        for sigma2 in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let v = sup_variance_lower_bound(&s, 10, &NoiseModel::bounded(sigma2, 2.0).unwrap()).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn implicit_noise_isotropic() {
        let (d, n, c) = (40, 9, 0.3);
        let s = Spectrum::isotropic(d, c).unwrap();
        let v = implicit_noise_variance(&s, n).unwrap();
        assert_relative_eq!(v, (d - n - 2) as f64 * c, max_relative = 1e-12);
    }

    #[test]
    fn implicit_noise_harmonic_spectrum() {
        // Σ_{j=2}^k j = (k−1)(k+2)/2 gives σ₀² = max_k 2(k−n−2)/(k+2), attained at k = d.
        let (d, n) = (500, 20);
        let s = capacity_spectrum(d, 1.0).unwrap();
        let v = implicit_noise_variance(&s, n).unwrap();
        let exact = 2.0 * (d - n - 2) as f64 / (d + 2) as f64;
        assert_relative_eq!(v, exact, max_relative = 1e-10);
        // the leading-order form 2(1 − (n+2)/d)
        let approx_form = 2.0 * (1.0 - (n + 2) as f64 / d as f64);
        assert!((v - approx_form).abs() / approx_form < 3.0 / d as f64);
    }

    #[test]
    fn implicit_noise_degenerate_range() {
        let s = capacity_spectrum(8, 1.5).unwrap();
        let n = 5;
        let inv: f64 = s.values()[1..8].iter().map(|m| 1.0 / m).sum();
        assert_relative_eq!(implicit_noise_variance(&s, n).unwrap(), 7.0 / inv, max_relative = 1e-14);
        assert!(implicit_noise_variance(&s, 6).is_err());
    }

    #[test]
    fn noiseless_sandwich_examples() {
        let s = Spectrum::isotropic(10, 1.0).unwrap();
        let r = noiseless_sandwich(&s, 2).unwrap();
        assert_relative_eq!(r.lower, 7.5, max_relative = 1e-14);
        assert_relative_eq!(r.upper, 9.375, max_relative = 1e-14);

        for (d, n, rho2) in [(50, 10, 1.0), (200, 40, 2.5), (13, 10, 0.7)] {
            let s = Spectrum::isotropic(d, rho2 / d as f64).unwrap();
            let r = noiseless_sandwich(&s, n).unwrap();
            let exact = rho2 * (1.0 - n as f64 / d as f64);
            assert!(r.lower >= rho2 * (1.0 - (n + 2) as f64 / d as f64) * (1.0 - 1e-12));
            assert!(r.lower <= exact && exact <= r.upper && r.upper <= rho2);
        }
        assert!(noiseless_sandwich(&Spectrum::isotropic(5, 1.0).unwrap(), 3).is_err());
    }

    #[test]
    fn capacity_corollary() {
        let (d, n) = (1000, 100);
        for a in [0.3, 0.7] {
            let s = capacity_spectrum(d, a).unwrap();
            let c = capacity_noiseless_constant(a, n, d).unwrap();
            assert_relative_eq!(c, (1.0 - 102.0 / 1000.0) * (1.0 + a) * (1.0 - a) / 12.0);
            let cor = capacity_noiseless_sandwich(&s, n, a).unwrap();
            let thm = noiseless_sandwich(&s, n).unwrap();
            assert_eq!(cor.upper, thm.upper);
            // the corollary's lower bound is implied by the implicit-noise lower bound
            assert!(thm.lower >= cor.lower);
        }
        assert!(capacity_noiseless_constant(1.0, 10, 100).is_err());
    }

    #[test]
    fn fast_decay_examples() {
        // brute force over every split with directly summed tails
        let d = 10_000;
        let n = 4;
        let s = capacity_spectrum(d, 2.0).unwrap();
        let tail = |k: usize| -> f64 { (k + 1..=d).rev().map(|j| (j as f64).powi(-2)).sum() };
        let r = fast_decay_sandwich(&s, n).unwrap();
        assert_relative_eq!(r.lower, tail(n), max_relative = 1e-12);
        assert_relative_eq!(r.lower, 0.2212, max_relative = 1e-3);
        let brute = (0..=n - 2)
            .map(|k| (n - 1) as f64 / (n - k - 1) as f64 * tail(k))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(r.upper, brute, max_relative = 1e-12);
        let k = r.k_star.unwrap();
        assert_relative_eq!(fast_decay_upper_at(&s, n, k).unwrap(), r.upper, max_relative = 1e-14);

        let half = fast_decay_upper_at(&s, 40, 20).unwrap();
        assert_relative_eq!(half, 39.0 / 19.0 * tail_sum(&s, 20).unwrap(), max_relative = 1e-14);
        assert!(half <= 4.0 * tail_sum(&s, 20).unwrap());

        let full_rank = capacity_spectrum(6, 1.0).unwrap();
        assert_eq!(fast_decay_sandwich(&full_rank, 6).unwrap().lower, 0.0);
        assert!(fast_decay_sandwich(&full_rank, 1).is_err());
        assert!(fast_decay_upper_at(&full_rank, 6, 5).is_err());
    }

    #[test]
    fn capacity_rate_examples() {
        assert!(capacity_rate(1.0, 0.5, 1.0, 1.0, 3.0, 10).is_err());
        let (rho2, sigma2, kappa, n) = (1.5, 0.4, 3.0, 50);
        let v = capacity_rate(2.0, 0.5, rho2, sigma2, kappa, n).unwrap();
        let expect = std::f64::consts::FRAC_PI_2 * rho2 * (sigma2 / (n as f64 * rho2) + kappa / n as f64).sqrt();
        assert_relative_eq!(v, expect, max_relative = 1e-8);
        // large 2αr: exponent → 1
        let big = capacity_rate(500.0, 1.0, rho2, sigma2, kappa, n).unwrap();
        let limit = rho2 * (sigma2 / rho2 + kappa) / n as f64;
        assert_relative_eq!(big, limit, max_relative = 1e-2);
    }

    #[test]
    fn underparam_examples() {
        let s = Spectrum::isotropic(5, 1.0).unwrap();
        assert_relative_eq!(underparam_upper_bound(&s, 20, 1.0).unwrap(), 5.0 / 14.0);
        assert_eq!(underparam_upper_bound(&s, 20, 0.0).unwrap(), 0.0);
        assert_eq!(underparam_upper_bound(&s, 7, 2.0).unwrap(), 10.0);
        assert!(underparam_upper_bound(&s, 6, 1.0).is_err());
    }

    #[test]
    fn tags_round_trip() {
        for k in BoundKind::ALL {
            assert_eq!(BoundKind::from_tag(k.tag()), Some(k));
        }
    }

    fn arb_spectrum() -> impl Strategy<Value = Spectrum> {
        prop::collection::vec(1e-4f64..5.0, 8..60).prop_map(|v| Spectrum::from_unsorted(v).unwrap())
    }

    proptest! {
        #[test]
        fn reports_are_ordered(s in arb_spectrum(), n in 1usize..5, sigma2 in 0.0f64..5.0, kappa in 1.0f64..5.0) {
            let noise = NoiseModel::from_kurtosis(sigma2, kappa, &s).unwrap();
            let r = noisy_sandwich(&s, n, &noise).unwrap();
            prop_assert!(r.lower <= r.upper);
            let r = noiseless_sandwich(&s, n).unwrap();
            prop_assert!(r.lower <= r.upper);
            if n >= 2 {
                let r = fast_decay_sandwich(&s, n).unwrap();
                prop_assert!(r.lower <= r.upper);
                prop_assert!(r.upper <= s.trace() * (1.0 + 1e-12));
                prop_assert_eq!(fast_decay_upper_at(&s, n, 0).unwrap(), s.trace());
            }
        }

        #[test]
        fn zero_noise_lower_bounds_vanish(s in arb_spectrum(), n in 1usize..20) {
            let noise = NoiseModel::gaussian(0.0, &s).unwrap();
            prop_assert_eq!(noisy_sandwich(&s, n, &noise).unwrap().lower, 0.0);
            prop_assert_eq!(sup_variance_lower_bound(&s, n, &noise).unwrap(), 0.0);
        }

        #[test]
        fn implicit_noise_dominates_mu_n3(s in arb_spectrum(), n in 1usize..5) {
            let v = implicit_noise_variance(&s, n).unwrap();
            prop_assert!(v >= s.values()[n + 2] * (1.0 - 1e-12));
        }

        #[test]
        fn noiseless_ratio_is_controlled(s in arb_spectrum(), n in 1usize..5) {
            let r = noiseless_sandwich(&s, n).unwrap();
            let d = s.dim() as f64;
            let inv: f64 = s.values()[1..].iter().map(|m| 1.0 / m).sum();
            let cap = 3.0 / (1.0 - (n as f64 + 2.0) / d) * (s.trace() / d) * (inv / (d - 1.0));
            prop_assert!(r.upper / r.lower <= cap * (1.0 + 1e-10));
        }
    }
}
