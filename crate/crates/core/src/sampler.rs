//! Seeded covariate, target and noise generation.
//!
//! Every draw comes from a [`SeedSpec`]: a master seed plus a replicate index.
//! The pair maps injectively to a ChaCha key/stream, so replicate `k` produces
//! the same numbers whichever worker runs it. Independent purposes (training
//! rows, test points, targets, noise) use separate keys so that, e.g., adding
//! test points never shifts the training draw.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::spectra::{SourcePrior, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Train,
    Test,
    Target,
    Noise,
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Train => 1,
            Purpose::Test => 2,
            Purpose::Target => 3,
            Purpose::Noise => 4,
        }
    }
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Same master seed, another replicate.
    pub fn replicate(self, stream_id: u64) -> Self {
        Self { stream_id, ..self }
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&purpose.code().to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Radius law of isotropic-latent covariates `X = Σ^{1/2} R U`, `U ~ U(S^{d-1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LatentRadius {
    /// `R ~ χ_d`, which makes `X` Gaussian.
    Chi,
    /// `R = r` for every row.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovariateKind {
    Gaussian,
    IsotropicLatent(LatentRadius),
    /// `P(X = L e_j) = μ_j / Tr(Σ)`.
    AdversarialDiscrete { scale: f64 },
}

/// Law of a covariate row, expressed in the eigenbasis of its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateLaw {
    pub kind: CovariateKind,
    pub spectrum: Spectrum,
}

impl CovariateLaw {
    pub fn gaussian(spectrum: Spectrum) -> Self {
        Self { kind: CovariateKind::Gaussian, spectrum }
    }

    pub fn latent(spectrum: Spectrum) -> Self {
        Self { kind: CovariateKind::IsotropicLatent(LatentRadius::Chi), spectrum }
    }

    pub fn latent_with_radius(spectrum: Spectrum, radius: LatentRadius) -> Self {
        Self { kind: CovariateKind::IsotropicLatent(radius), spectrum }
    }

    /// Discrete law on the scaled eigenvectors. With `L² = Tr(Σ)` its
    /// covariance is exactly `Σ` and `‖X‖² = L²` almost surely.
    pub fn adversarial(spectrum: Spectrum) -> Self {
        let scale = spectrum.trace().sqrt();
        Self { kind: CovariateKind::AdversarialDiscrete { scale }, spectrum }
    }

    pub fn adversarial_with_scale(spectrum: Spectrum, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid(format!("adversarial scale L = {scale} must be > 0")));
        }
        Ok(Self { kind: CovariateKind::AdversarialDiscrete { scale }, spectrum })
    }

    pub fn dim(&self) -> usize {
        self.spectrum.dim()
    }

    /// Same kind of law on another spectrum. The adversarial scale is reset to `sqrt(Tr)`.
    pub fn with_spectrum(&self, spectrum: Spectrum) -> Self {
        match self.kind {
            CovariateKind::AdversarialDiscrete { .. } => Self::adversarial(spectrum),
            kind => Self { kind, spectrum },
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            CovariateKind::Gaussian => "gaussian",
            CovariateKind::IsotropicLatent(_) => "latent",
            CovariateKind::AdversarialDiscrete { .. } => "adversarial",
        }
    }

    /// Parses `gaussian | latent | adversarial`.
    pub fn from_name(name: &str, spectrum: Spectrum) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::gaussian(spectrum)),
            "latent" => Ok(Self::latent(spectrum)),
            "adversarial" => Ok(Self::adversarial(spectrum)),
            other => Err(invalid(format!("unknown covariate law '{other}'"))),
        }
    }
}

/// `n` training rows (an `n × d` matrix) from the training stream of `seed`.
pub fn sample_covariates(law: &CovariateLaw, n: usize, seed: SeedSpec) -> DMatrix<f64> {
    sample_covariates_with(law, n, &mut seed.rng(Purpose::Train))
}

/// `n` rows drawn from an explicit generator, row by row.
pub fn sample_covariates_with<R: Rng + ?Sized>(law: &CovariateLaw, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = law.dim();
    let sd: Vec<f64> = law.spectrum.values().iter().map(|m| m.sqrt()).collect();
    let mut out = DMatrix::zeros(n, d);
    match law.kind {
        CovariateKind::Gaussian => {
            for i in 0..n {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    out[(i, j)] = sd[j] * z;
                }
            }
        }
        CovariateKind::IsotropicLatent(radius) => {
            let chi = ChiSquared::new(d as f64).expect("d >= 1");
            let mut g = vec![0.0f64; d];
            for i in 0..n {
                let mut norm2: f64 = 0.0;
                for gj in g.iter_mut() {
                    *gj = StandardNormal.sample(rng);
                    norm2 += *gj * *gj;
                }
                // drawn for every radius law so the directions stay aligned
                let chi_r = chi.sample(rng).sqrt();
                let r = match radius {
                    LatentRadius::Chi => chi_r,
                    LatentRadius::Fixed(r) => r,
                };
                let factor = r / norm2.sqrt();
                for j in 0..d {
                    out[(i, j)] = sd[j] * g[j] * factor;
                }
            }
        }
        CovariateKind::AdversarialDiscrete { scale } => {
            let index = WeightedIndex::new(law.spectrum.values()).expect("positive weights");
            for i in 0..n {
                out[(i, index.sample(rng))] = scale;
            }
        }
    }
    out
}

/// A target from the ellipsoid prior: `θ⋆ = ρ_r Σ^{r−1/2} u` with `u` uniform on the sphere.
pub fn sample_target(prior: &SourcePrior, base: &Spectrum, seed: SeedSpec) -> Result<Vec<f64>> {
    let radius = prior.radius2(base)?.sqrt();
    let mut rng = seed.rng(Purpose::Target);
    let u = uniform_sphere(base.dim(), &mut rng);
    Ok(u
        .iter()
        .zip(base.values())
        .map(|(u, l)| radius * l.powf(prior.r - 0.5) * u)
        .collect())
}

fn uniform_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Centered Gaussian noise of variance `σ²`; exact zeros when `σ² = 0`.
pub fn sample_noise(sigma2: f64, n: usize, seed: SeedSpec) -> Result<Vec<f64>> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(invalid(format!("sigma2 = {sigma2} must be >= 0")));
    }
    if sigma2 == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let sd = sigma2.sqrt();
    let mut rng = seed.rng(Purpose::Noise);
    Ok((0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect())
}
