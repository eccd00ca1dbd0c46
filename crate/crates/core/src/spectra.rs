//! Covariance spectra, ellipsoid priors and spectral functionals.
//!
//! All covariances live in the eigenbasis of the covariate covariance `Σ`, so a
//! covariance is represented by its eigenvalues only. The same type holds the
//! raw spectrum of `Σ`, the effective spectrum `Σ_H = H^{1/2} Σ H^{1/2}` and the
//! fixed-target spectrum `Σ_θ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Eigenvalues below this threshold are dropped from transformed spectra.
pub const EIGEN_FLOOR: f64 = 1e-300;

/// Nonincreasing list of strictly positive eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    /// Validates positivity, finiteness and nonincreasing order.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("spectrum must have dimension d >= 1"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("eigenvalue {v} is not finite and strictly positive")));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(invalid("eigenvalues must be sorted nonincreasing"));
        }
        Ok(Self { values })
    }

    /// Sorts the values nonincreasing before validating them.
    pub fn from_unsorted(mut values: Vec<f64>) -> Result<Self> {
        values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Self::new(values)
    }

    /// `d` copies of `value`.
    pub fn isotropic(d: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; d])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn trace(&self) -> f64 {
        // smallest first
        self.values.iter().rev().sum()
    }

    /// Multiplies every eigenvalue by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn df1(&self, lambda: f64) -> f64 {
        df_unchecked(self, 1, lambda)
    }

    pub fn df2(&self, lambda: f64) -> f64 {
        df_unchecked(self, 2, lambda)
    }
}

impl TryFrom<Vec<f64>> for Spectrum {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Spectrum> for Vec<f64> {
    fn from(s: Spectrum) -> Self {
        s.values
    }
}

/// Ellipsoid (source-condition) prior: `Σ^{1/2-r} θ ~ ρ_r U(S^{d-1})` with
/// `ρ_r² = d ρ² / Tr(Σ^{2r})`, so that the average explained variance is `ρ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePrior {
    pub r: f64,
    pub rho2: f64,
}

impl SourcePrior {
    pub fn new(r: f64, rho2: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid(format!("source exponent r = {r} must be finite and >= 0")));
        }
        if !(rho2.is_finite() && rho2 > 0.0) {
            return Err(invalid(format!("rho2 = {rho2} must be finite and > 0")));
        }
        Ok(Self { r, rho2 })
    }

    /// Normalized weights `λ_j^{2r} / Σ_k λ_k^{2r}`, computed in the log domain.
    fn normalized_powers(&self, base: &Spectrum) -> Result<Vec<f64>> {
        let logs: Vec<f64> = base.values.iter().map(|l| 2.0 * self.r * l.ln()).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NumericOverflow(format!("λ^(2r) with r = {}", self.r)));
        }
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().rev().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NumericOverflow(format!("Σ λ^(2r) with r = {}", self.r)));
        }
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    /// `ρ_r² = d ρ² / Tr(Σ^{2r})`.
    pub fn radius2(&self, base: &Spectrum) -> Result<f64> {
        let tr: f64 = base.values.iter().rev().map(|l| l.powf(2.0 * self.r)).sum();
        let out = base.dim() as f64 * self.rho2 / tr;
        if out.is_finite() && out > 0.0 {
            Ok(out)
        } else {
            Err(Error::NumericOverflow(format!("ρ_r² with r = {}", self.r)))
        }
    }

    /// Diagonal of the prior second moment `H_r = ρ² Σ^{2r-1} / Tr(Σ^{2r})`,
    /// in the eigenbasis order of `base` (not necessarily sorted).
    pub fn second_moment(&self, base: &Spectrum) -> Result<Vec<f64>> {
        let w = self.normalized_powers(base)?;
        let h: Vec<f64> = w
            .iter()
            .zip(&base.values)
            .map(|(w, l)| self.rho2 * w / l)
            .collect();
        if h.iter().all(|v| v.is_finite()) {
            Ok(h)
        } else {
            Err(Error::NumericOverflow("prior second moment".into()))
        }
    }
}

/// A fixed target `θ⋆` given by its coordinates in the eigenbasis of `Σ`.
///
/// The per-direction explained variances `λ_j θ_j²` are kept alongside the
/// coordinates so that targets built from them reproduce them bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTarget {
    coords: Vec<f64>,
    explained: Vec<f64>,
}

impl FixedTarget {
    pub fn new(base: &Spectrum, coords: Vec<f64>) -> Result<Self> {
        check_len(base, coords.len())?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("target coordinates must be finite"));
        }
        let explained = coords.iter().zip(&base.values).map(|(c, l)| l * c * c).collect();
        Ok(Self { coords, explained })
    }

    /// Target with prescribed explained variances `e_j = λ_j θ_j²`, `θ_j = sqrt(e_j / λ_j) ≥ 0`.
    pub fn from_explained(base: &Spectrum, explained: Vec<f64>) -> Result<Self> {
        check_len(base, explained.len())?;
        if explained.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(invalid("explained variances must be finite and >= 0"));
        }
        let coords = explained.iter().zip(&base.values).map(|(e, l)| (e / l).sqrt()).collect();
        Ok(Self { coords, explained })
    }

    /// `θ_j² = 1/λ_j`: every direction carries unit explained variance.
    pub fn whitened(base: &Spectrum) -> Self {
        Self::from_explained(base, vec![1.0; base.dim()]).expect("unit energies are valid")
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// `‖Σ^{1/2} θ⋆‖²`.
    pub fn explained_variance(&self) -> f64 {
        self.explained.iter().sum()
    }
}

fn check_len(base: &Spectrum, len: usize) -> Result<()> {
    if len != base.dim() {
        return Err(invalid(format!("target has length {len}, spectrum has dimension {}", base.dim())));
    }
    Ok(())
}

/// `λ_j = j^{-α}` for `j = 1..d`.
pub fn capacity_spectrum(d: usize, alpha: f64) -> Result<Spectrum> {
    if d == 0 {
        return Err(invalid("capacity spectrum needs d >= 1"));
    }
    // α = 0 (isotropic) is admitted as the degenerate member of the family.
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(invalid(format!("capacity exponent alpha = {alpha} must be finite and >= 0")));
    }
    Spectrum::new((1..=d).map(|j| (j as f64).powf(-alpha)).collect())
}

/// Effective spectrum `μ_j = ρ² λ_j^{2r} / Σ_k λ_k^{2r}` of `Σ_H` under the
/// ellipsoid prior. Its trace is `ρ²`.
pub fn effective_spectrum(base: &Spectrum, prior: &SourcePrior) -> Result<Spectrum> {
    let w = prior.normalized_powers(base)?;
    let mut mu: Vec<f64> = w.into_iter().map(|x| prior.rho2 * x).collect();
    drop_tiny(&mut mu);
    Spectrum::new(mu)
}

fn drop_tiny(values: &mut Vec<f64>) {
    let before = values.len();
    values.retain(|v| *v >= EIGEN_FLOOR);
    if values.len() < before {
        log::warn!(
            "dropped {} eigenvalues below {EIGEN_FLOOR:e} from a transformed spectrum",
            before - values.len()
        );
    }
}

/// Spectrum of `Σ_θ = Σ_j λ_j (v_jᵀθ⋆)² v_j v_jᵀ`, with zero directions removed.
/// The effective dimension is the returned spectrum's [`Spectrum::dim`].
pub fn sigma_theta_spectrum(base: &Spectrum, target: &FixedTarget) -> Result<Spectrum> {
    check_len(base, target.dim())?;
    let mut values: Vec<f64> = target.explained.iter().copied().filter(|v| *v > 0.0).collect();
    if values.is_empty() {
        return Err(invalid("fixed target is identically zero"));
    }
    drop_tiny(&mut values);
    Spectrum::from_unsorted(values)
}

/// Degrees of freedom `df_k(Σ; λ) = Σ_j (μ_j / (μ_j + λ))^k` for `k ∈ {1, 2}`.
pub fn df(spectrum: &Spectrum, k: u32, lambda: f64) -> Result<f64> {
    if k != 1 && k != 2 {
        return Err(invalid(format!("degrees of freedom order must be 1 or 2, got {k}")));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!("lambda = {lambda} must be finite and >= 0")));
    }
    Ok(df_unchecked(spectrum, k, lambda))
}

fn df_unchecked(spectrum: &Spectrum, k: u32, lambda: f64) -> f64 {
    spectrum
        .values
        .iter()
        .rev()
        .map(|m| {
            let ratio = m / (m + lambda);
            if k == 1 {
                ratio
            } else {
                ratio * ratio
            }
        })
        .sum()
}

/// Tail sum `R_k = Σ_{j>k} μ_j`, accumulated from the smallest eigenvalue up.
pub fn tail_sum(spectrum: &Spectrum, k: usize) -> Result<f64> {
    if k > spectrum.dim() {
        return Err(invalid(format!("tail index k = {k} exceeds dimension {}", spectrum.dim())));
    }
    Ok(spectrum.values[k..].iter().rev().sum())
}

/// All tail sums `R_0, …, R_d` in one reverse pass.
pub fn tail_sums(spectrum: &Spectrum) -> Vec<f64> {
    let d = spectrum.dim();
    let mut out = vec![0.0; d + 1];
    for k in (0..d).rev() {
        out[k] = out[k + 1] + spectrum.values[k];
    }
    out
}

/// Serializable spectrum generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpectrumSpec {
    Capacity { d: usize, alpha: f64 },
    Explicit { values: Vec<f64> },
}

impl SpectrumSpec {
    pub fn build(&self) -> Result<Spectrum> {
        match self {
            SpectrumSpec::Capacity { d, alpha } => capacity_spectrum(*d, *alpha),
            SpectrumSpec::Explicit { values } => Spectrum::new(values.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpectrumSpec::Capacity { d, .. } => *d,
            SpectrumSpec::Explicit { values } => values.len(),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            SpectrumSpec::Capacity { alpha, .. } => Some(*alpha),
            SpectrumSpec::Explicit { .. } => None,
        }
    }
}
