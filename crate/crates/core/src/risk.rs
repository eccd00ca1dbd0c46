//! Monte Carlo estimators of the optimal averaged excess risk and of the
//! excess risk of individual rules.
//!
//! Replicate `k` of an estimate seeded with `seed` uses the streams of
//! `seed.replicate(seed.stream_id + k)`. Training rows are drawn row by row,
//! so estimates at different `n`, `σ²` or rules share their random numbers.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{cross, gram, pairwise_sum, row_space_basis, scale_columns, shifted_cholesky, weighted_residual_trace};
use crate::rules::{fit_with_prior, PriorContext, RuleSpec};
use crate::sampler::{sample_covariates, sample_covariates_with, CovariateLaw, Purpose, SeedSpec};
use crate::spectra::{FixedTarget, SourcePrior, Spectrum};

/// One risk evaluation: the law of the (transformed) covariates, `n` and `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub effective_spectrum: Spectrum,
    pub n: usize,
    pub sigma2: f64,
    /// Covariate law. For the optimal-risk estimators its spectrum is
    /// `effective_spectrum`; for [`rule_excess_risk`] it is the raw `Σ`.
    pub law: CovariateLaw,
}

impl ProblemInstance {
    /// Gaussian covariates with covariance `effective`.
    pub fn new(effective: Spectrum, n: usize, sigma2: f64) -> Result<Self> {
        let law = CovariateLaw::gaussian(effective.clone());
        Self::with_law(effective, n, sigma2, law)
    }

    pub fn with_law(effective: Spectrum, n: usize, sigma2: f64, law: CovariateLaw) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(invalid(format!("sigma2 = {sigma2} must be >= 0")));
        }
        if law.dim() != effective.dim() {
            return Err(invalid(format!("law has dimension {}, spectrum {}", law.dim(), effective.dim())));
        }
        Ok(Self { effective_spectrum: effective, n, sigma2, law })
    }

    pub fn dim(&self) -> usize {
        self.effective_spectrum.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    MatrixForm,
    VariationalForm,
    NoiselessProjection,
    VarianceLike,
    RuleMc,
}

impl EstimatorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::MatrixForm => "matrix_form",
            EstimatorTag::VariationalForm => "variational_form",
            EstimatorTag::NoiselessProjection => "noiseless_projection",
            EstimatorTag::VarianceLike => "variance_like",
            EstimatorTag::RuleMc => "rule_mc",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        [
            EstimatorTag::MatrixForm,
            EstimatorTag::VariationalForm,
            EstimatorTag::NoiselessProjection,
            EstimatorTag::VarianceLike,
            EstimatorTag::RuleMc,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    /// Sample standard deviation over replicates divided by `sqrt(reps)`.
    pub std_error: f64,
    pub reps: usize,
    pub tag: EstimatorTag,
}

impl RiskEstimate {
    pub fn from_values(values: &[f64], tag: EstimatorTag) -> Result<Self> {
        let reps = values.len();
        if reps == 0 {
            return Err(invalid("an estimate needs at least one replicate"));
        }
        let mean = pairwise_sum(values) / reps as f64;
        let std_error = if reps > 1 {
            let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            (pairwise_sum(&dev) / (reps - 1) as f64 / reps as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, std_error, reps, tag })
    }
}

/// Runs `f` on every replicate seed in parallel and collects the values in
/// replicate order.
pub fn replicate_values<F>(reps: usize, seed: SeedSpec, f: F) -> Result<Vec<f64>>
where
    F: Fn(SeedSpec) -> Result<f64> + Sync,
{
    if reps == 0 {
        return Err(invalid("reps must be >= 1"));
    }
    (0..reps as u64)
        .into_par_iter()
        .map(|k| f(seed.replicate(seed.stream_id.wrapping_add(k))))
        .collect()
}

fn estimate<F>(reps: usize, seed: SeedSpec, tag: EstimatorTag, f: F) -> Result<RiskEstimate>
where
    F: Fn(SeedSpec) -> Result<f64> + Sync,
{
    RiskEstimate::from_values(&replicate_values(reps, seed, f)?, tag)
}

/// `σ² Tr(Σ_H (ZᵀZ + σ²I)^{-1})` on one draw `Z` (`n × d`), through the
/// `n × n` system when `d > n` and the `d × d` one otherwise.
pub fn matrix_form_on(z: &DMatrix<f64>, mu: &[f64], sigma2: f64) -> Result<f64> {
    if z.ncols() > z.nrows() {
        matrix_form_dual(z, mu, sigma2)
    } else {
        matrix_form_primal(z, mu, sigma2)
    }
}

/// `Tr(Σ_H) − Tr(Z Σ_H Zᵀ (ZZᵀ + σ²I)^{-1})`.
pub fn matrix_form_dual(z: &DMatrix<f64>, mu: &[f64], sigma2: f64) -> Result<f64> {
    let trace = pairwise_sum(mu);
    if z.nrows() == 0 {
        return Ok(trace);
    }
    let chol = shifted_cholesky(gram(z), sigma2)?;
    let root: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    let l = chol.l();
    let mut y = scale_columns(z, &root);
    if !l.solve_lower_triangular_mut(&mut y) {
        return Err(crate::Error::Linalg("triangular solve failed".into()));
    }
    Ok(trace - y.norm_squared())
}

/// `σ² Σ_j μ_j [(ZᵀZ + σ²I)^{-1}]_jj`.
pub fn matrix_form_primal(z: &DMatrix<f64>, mu: &[f64], sigma2: f64) -> Result<f64> {
    let inv = shifted_cholesky(cross(z), sigma2)?.inverse();
    Ok(sigma2 * mu.iter().enumerate().map(|(j, m)| m * inv[(j, j)]).sum::<f64>())
}

/// `Tr(Σ_H (I − P))` where `P` projects onto the span of the rows of `z`.
pub fn noiseless_on(z: &DMatrix<f64>, mu: &[f64]) -> f64 {
    weighted_residual_trace(&row_space_basis(z), mu)
}

/// Optimal-rule objective `‖Zᵀl − x̃‖² + σ²‖l‖²` averaged over the rows of `tests`.
pub fn variational_on(z: &DMatrix<f64>, tests: &DMatrix<f64>, sigma2: f64) -> Result<f64> {
    let prior = PriorContext { h: vec![1.0; z.ncols()], sigma2 };
    let fitted = fit_with_prior(&RuleSpec::Optimal, z, &prior)?;
    let l = fitted.weights_many(tests)?;
    let residual = tests.transpose() - z.tr_mul(&l);
    let values: Vec<f64> = (0..tests.nrows())
        .map(|k| residual.column(k).norm_squared() + sigma2 * l.column(k).norm_squared())
        .collect();
    Ok(pairwise_sum(&values) / tests.nrows() as f64)
}

fn check_optimal_law(p: &ProblemInstance) -> Result<()> {
    if p.law.spectrum != p.effective_spectrum {
        return Err(invalid("optimal-risk estimators need law.spectrum == effective_spectrum"));
    }
    Ok(())
}

/// Matrix-form estimate of the optimal averaged excess risk. Requires `σ² > 0`.
pub fn optimal_risk_matrix_form(p: &ProblemInstance, reps: usize, seed: SeedSpec) -> Result<RiskEstimate> {
    check_optimal_law(p)?;
    if p.sigma2 <= 0.0 {
        return Err(invalid("matrix form needs sigma2 > 0; use optimal_risk_noiseless"));
    }
    let mu = p.effective_spectrum.values();
    estimate(reps, seed, EstimatorTag::MatrixForm, |s| {
        matrix_form_on(&sample_covariates(&p.law, p.n, s), mu, p.sigma2)
    })
}

/// Variational-form estimate: the attained objective of the optimal rule at
/// fresh test points.
pub fn optimal_risk_variational_form(
    p: &ProblemInstance,
    reps: usize,
    test_points_per_rep: usize,
    seed: SeedSpec,
) -> Result<RiskEstimate> {
    check_optimal_law(p)?;
    if test_points_per_rep == 0 {
        return Err(invalid("test_points_per_rep must be >= 1"));
    }
    estimate(reps, seed, EstimatorTag::VariationalForm, |s| {
        let z = sample_covariates(&p.law, p.n, s);
        let tests = sample_covariates_with(&p.law, test_points_per_rep, &mut s.rng(Purpose::Test));
        variational_on(&z, &tests, p.sigma2)
    })
}

/// Noiseless error `E Tr(Σ_H (I − P_n))`; `p.sigma2` is ignored.
pub fn optimal_risk_noiseless(p: &ProblemInstance, reps: usize, seed: SeedSpec) -> Result<RiskEstimate> {
    check_optimal_law(p)?;
    let mu = p.effective_spectrum.values();
    estimate(reps, seed, EstimatorTag::NoiselessProjection, |s| {
        Ok(noiseless_on(&sample_covariates(&p.law, p.n, s), mu))
    })
}

/// Variance-like term: matrix form minus noiseless error on the same draw;
/// exactly zero when `σ² = 0`.
pub fn variance_like_term(p: &ProblemInstance, reps: usize, seed: SeedSpec) -> Result<RiskEstimate> {
    check_optimal_law(p)?;
    let mu = p.effective_spectrum.values();
    estimate(reps, seed, EstimatorTag::VarianceLike, |s| {
        if p.sigma2 == 0.0 {
            return Ok(0.0);
        }
        let z = sample_covariates(&p.law, p.n, s);
        Ok(matrix_form_on(&z, mu, p.sigma2)? - noiseless_on(&z, mu))
    })
}

/// Target of a rule-risk evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `θ⋆` drawn from the ellipsoid prior; the risk is integrated over it.
    Prior(SourcePrior),
    Fixed(FixedTarget),
}

/// Excess risk of `rule` with noise integrated analytically:
/// `((x − Σ l_i x_i)ᵀθ⋆)² + σ²‖l‖²` for a fixed target, and
/// `Σ_j H_jj (x − Σ l_i x_i)_j² + σ²‖l‖²` under a prior. `p.law` is the law of
/// the raw covariates.
///
/// The optimal and transformed-ridge rules use `H = diag(θ⋆²)` for a fixed target.
pub fn rule_excess_risk(
    p: &ProblemInstance,
    rule: &RuleSpec,
    target: &Target,
    reps: usize,
    test_points_per_rep: usize,
    seed: SeedSpec,
) -> Result<RiskEstimate> {
    let d = p.law.dim();
    if test_points_per_rep == 0 {
        return Err(invalid("test_points_per_rep must be >= 1"));
    }
    let (h, theta) = match target {
        Target::Prior(prior) => (prior.second_moment(&p.law.spectrum)?, None),
        Target::Fixed(t) => {
            if t.dim() != d {
                return Err(invalid(format!("target has dimension {}, covariates {d}", t.dim())));
            }
            (t.coords().iter().map(|c| c * c).collect(), Some(t.coords().to_vec()))
        }
    };
    let prior = PriorContext { h, sigma2: p.sigma2 };
    estimate(reps, seed, EstimatorTag::RuleMc, |s| {
        let x = sample_covariates(&p.law, p.n, s);
        let tests = sample_covariates_with(&p.law, test_points_per_rep, &mut s.rng(Purpose::Test));
        let l = fit_with_prior(rule, &x, &prior)?.weights_many(&tests)?;
        let residual = tests.transpose() - x.tr_mul(&l);
        let values: Vec<f64> = (0..tests.nrows())
            .map(|k| {
                let r = residual.column(k);
                let bias = match &theta {
                    Some(theta) => r.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>().powi(2),
                    None => r.iter().zip(&prior.h).map(|(a, h)| h * a * a).sum(),
                };
                bias + p.sigma2 * l.column(k).norm_squared()
            })
            .collect();
        Ok(pairwise_sum(&values) / tests.nrows() as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use crate::sampler::LatentRadius;
    use crate::spectra::{capacity_spectrum, effective_spectrum};

    fn within(a: &RiskEstimate, b: &RiskEstimate, k: f64) -> bool {
        (a.mean - b.mean).abs() <= k * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
    }

    #[test]
    fn one_dimensional_matrix_form_matches_quadrature() {
        // d = n = 1, μ = σ² = 1: the per-draw risk is 1/(1+z²), i.e. Tr(Σ_H) minus
        // the subtracted term z²/(1+z²); oracle E[1/(1+z²)] by quadrature
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let subtracted: f64 = 2.0 * (0..12)
            .map(|k| adaptive_simpson(|z| z * z / (1.0 + z * z) * pdf(z), k as f64, k as f64 + 1.0, 1e-14))
            .sum::<f64>();
        assert!((subtracted - 0.344_320_457_581_201).abs() < 1e-10, "{subtracted}");
        let exact = 1.0 - subtracted;
        let p = ProblemInstance::new(Spectrum::new(vec![1.0]).unwrap(), 1, 1.0).unwrap();
        let est = optimal_risk_matrix_form(&p, 20_000, SeedSpec::new(1, 0)).unwrap();
        assert!((est.mean - exact).abs() < 3.0 * est.std_error, "{est:?} vs {exact}");
        let z = DMatrix::from_element(1, 1, 0.8);
        assert!((matrix_form_dual(&z, &[1.0], 1.0).unwrap() - 1.0 / 1.64).abs() < 1e-15);
        assert!((matrix_form_primal(&z, &[1.0], 1.0).unwrap() - 1.0 / 1.64).abs() < 1e-15);
    }

    #[test]
    fn huge_noise_approaches_trace() {
        let s = capacity_spectrum(10, 1.0).unwrap();
        let p = ProblemInstance::new(s.clone(), 1, 1e6).unwrap();
        let est = optimal_risk_matrix_form(&p, 50, SeedSpec::new(2, 0)).unwrap();
        assert!(est.mean <= s.trace());
        assert!(est.mean > s.trace() * (1.0 - 1e-4));
    }

    #[test]
    fn primal_and_dual_agree_per_draw() {
        let s = capacity_spectrum(50, 1.0).unwrap();
        let law = CovariateLaw::gaussian(s.clone());
        for k in 0..10 {
            let z = sample_covariates(&law, 20, SeedSpec::new(3, k));
            let a = matrix_form_dual(&z, s.values(), 0.5).unwrap();
            let b = matrix_form_primal(&z, s.values(), 0.5).unwrap();
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn variational_and_matrix_forms_agree() {
        let s = effective_spectrum(&capacity_spectrum(40, 1.0).unwrap(), &SourcePrior::new(0.5, 1.0).unwrap()).unwrap();
        let p = ProblemInstance::new(s, 10, 0.3).unwrap();
        let seed = SeedSpec::new(4, 0);
        let a = optimal_risk_matrix_form(&p, 400, seed).unwrap();
        let b = optimal_risk_variational_form(&p, 400, 32, seed).unwrap();
        assert!(within(&a, &b, 3.0), "{a:?} {b:?}");
    }

    #[test]
    fn variational_form_without_data_is_trace() {
        let s = capacity_spectrum(5, 1.0).unwrap();
        let p = ProblemInstance::new(s.clone(), 0, 1.0).unwrap();
        let est = optimal_risk_variational_form(&p, 2000, 8, SeedSpec::new(5, 0)).unwrap();
        assert!((est.mean - s.trace()).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn variational_form_interpolates_when_underparametrized() {
        let p = ProblemInstance::new(capacity_spectrum(4, 1.0).unwrap(), 10, 0.0).unwrap();
        let est = optimal_risk_variational_form(&p, 20, 8, SeedSpec::new(6, 0)).unwrap();
        assert!(est.mean.abs() < 1e-20);
    }

    #[test]
    fn isotropic_noiseless_error_is_exact() {
        let p = ProblemInstance::new(Spectrum::isotropic(12, 1.0).unwrap(), 5, 0.0).unwrap();
        let values = replicate_values(30, SeedSpec::new(7, 0), |s| {
            Ok(noiseless_on(&sample_covariates(&p.law, p.n, s), p.effective_spectrum.values()))
        })
        .unwrap();
        for v in values {
            assert!((v - 7.0).abs() < 1e-12);
        }
        let rank_deficient = ProblemInstance::new(Spectrum::isotropic(3, 1.0).unwrap(), 5, 0.0).unwrap();
        let est = optimal_risk_noiseless(&rank_deficient, 10, SeedSpec::new(7, 1)).unwrap();
        assert!(est.mean.abs() < 1e-12);
    }

    #[test]
    fn decomposition_holds_per_draw() {
        let s = capacity_spectrum(30, 1.0).unwrap();
        let p = ProblemInstance::new(s.clone(), 8, 0.7).unwrap();
        let seed = SeedSpec::new(8, 0);
        let m = replicate_values(40, seed, |sd| matrix_form_on(&sample_covariates(&p.law, 8, sd), s.values(), 0.7)).unwrap();
        let z = replicate_values(40, seed, |sd| Ok(noiseless_on(&sample_covariates(&p.law, 8, sd), s.values()))).unwrap();
        let v = replicate_values(40, seed, |sd| {
            let x = sample_covariates(&p.law, 8, sd);
            Ok(matrix_form_on(&x, s.values(), 0.7)? - noiseless_on(&x, s.values()))
        })
        .unwrap();
        for k in 0..40 {
            assert!((m[k] - z[k] - v[k]).abs() <= 1e-8);
        }
        let zero = ProblemInstance::new(s, 8, 0.0).unwrap();
        let est = variance_like_term(&zero, 10, seed).unwrap();
        assert_eq!((est.mean, est.std_error), (0.0, 0.0));
    }

    #[test]
    fn matrix_form_monotone_in_noise_per_draw() {
        let s = capacity_spectrum(25, 1.5).unwrap();
        let law = CovariateLaw::gaussian(s.clone());
        for k in 0..10 {
            let z = sample_covariates(&law, 10, SeedSpec::new(9, k));
            let mut prev = noiseless_on(&z, s.values());
            for sigma2 in [1e-3, 0.01, 0.1, 1.0, 10.0] {
                let v = matrix_form_on(&z, s.values(), sigma2).unwrap();
                assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn noiseless_error_ignores_row_scale() {
        let s = capacity_spectrum(20, 1.0).unwrap();
        let a = CovariateLaw::latent_with_radius(s.clone(), LatentRadius::Fixed(1.0));
        let b = CovariateLaw::latent_with_radius(s.clone(), LatentRadius::Fixed(37.0));
        let c = CovariateLaw::latent(s.clone());
        for k in 0..10 {
            let seed = SeedSpec::new(10, k);
            let va = noiseless_on(&sample_covariates(&a, 6, seed), s.values());
            let vb = noiseless_on(&sample_covariates(&b, 6, seed), s.values());
            let vc = noiseless_on(&sample_covariates(&c, 6, seed), s.values());
            assert!((va - vb).abs() <= 1e-10 && (va - vc).abs() <= 1e-10);
        }
    }

    #[test]
    fn optimal_rule_risk_matches_variational_form() {
        let base = capacity_spectrum(30, 1.0).unwrap();
        let prior = SourcePrior::new(1.0, 1.0).unwrap();
        let eff = effective_spectrum(&base, &prior).unwrap();
        let seed = SeedSpec::new(11, 0);
        let opt = optimal_risk_variational_form(&ProblemInstance::new(eff.clone(), 10, 0.5).unwrap(), 400, 16, seed).unwrap();
        let raw = ProblemInstance::with_law(eff, 10, 0.5, CovariateLaw::gaussian(base)).unwrap();
        let rule = rule_excess_risk(&raw, &RuleSpec::Optimal, &Target::Prior(prior), 400, 16, seed).unwrap();
        assert!(within(&opt, &rule, 3.0), "{opt:?} {rule:?}");
    }

    #[test]
    fn fixed_target_dimension_mismatch_is_rejected() {
        let base = capacity_spectrum(5, 1.0).unwrap();
        let other = capacity_spectrum(4, 1.0).unwrap();
        let p = ProblemInstance::new(base, 3, 0.1).unwrap();
        let t = Target::Fixed(FixedTarget::whitened(&other));
        assert!(rule_excess_risk(&p, &RuleSpec::MinNorm, &t, 2, 2, SeedSpec::new(0, 0)).is_err());
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let p = ProblemInstance::new(capacity_spectrum(30, 1.0).unwrap(), 10, 0.2).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| optimal_risk_matrix_form(&p, 64, SeedSpec::new(12, 0)).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn standard_error_of_single_replicate_is_zero() {
        let e = RiskEstimate::from_values(&[2.0], EstimatorTag::RuleMc).unwrap();
        assert_eq!((e.mean, e.std_error, e.reps), (2.0, 0.0, 1));
        let e = RiskEstimate::from_values(&[1.0, 3.0], EstimatorTag::RuleMc).unwrap();
        assert_eq!(e.std_error, 1.0);
        assert!(RiskEstimate::from_values(&[], EstimatorTag::RuleMc).is_err());
    }
}
