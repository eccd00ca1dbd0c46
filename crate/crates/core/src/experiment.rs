//! Config-driven experiment runner.
//!
//! A JSON config describes a Cartesian grid of problems. For every grid point
//! the runner evaluates the closed-form bounds (`bounds.csv`), the Monte Carlo
//! risk estimates (`risk.csv`) and the verdicts comparing the two
//! (`verdicts.csv`). All replicates of all estimators at all grid points share
//! the master seed, so comparisons use common random numbers, and the output is
//! byte-identical for any worker count.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    capacity_noiseless_sandwich, capacity_rate, fast_decay_sandwich, noiseless_sandwich, noisy_sandwich,
    sup_variance_lower_bound, underparam_upper_bound, variance_lower_report, BoundKind, BoundReport, NoiseModel,
};
use crate::error::{Error, Result};
use crate::risk::{
    optimal_risk_matrix_form, optimal_risk_noiseless, optimal_risk_variational_form, rule_excess_risk,
    variance_like_term, EstimatorTag, ProblemInstance, RiskEstimate, Target,
};
use crate::rules::RuleSpec;
use crate::sampler::{CovariateKind, CovariateLaw, SeedSpec};
use crate::spectra::{capacity_spectrum, effective_spectrum, sigma_theta_spectrum, FixedTarget, SourcePrior, Spectrum, SpectrumSpec};

/// Marker written in place of values that do not apply to a row.
pub const NOT_APPLICABLE: &str = "not_applicable";

/// Verdicts pass iff their margin is at least this many standard errors.
pub const PASS_MARGIN: f64 = -3.0;

pub const BOUNDS_HEADER: [&str; 13] = [
    "theorem", "d", "n", "alpha", "r", "rho2", "sigma2", "kappa", "lower", "upper", "lambda_lower", "lambda_upper",
    "k_star",
];
pub const RISK_HEADER: [&str; 11] =
    ["estimator", "d", "n", "alpha", "r", "rho2", "sigma2", "rule", "mean", "std_error", "reps"];
pub const VERDICT_HEADER: [&str; 14] = [
    "d", "n", "alpha", "r", "rho2", "sigma2", "kappa", "inequality", "rule", "estimate", "bound", "std_error", "margin",
    "pass",
];

/// Risk-table estimators beyond the optimal-risk ones.
pub const RULE_PRIOR: &str = "rule_mc";
pub const RULE_FIXED: &str = "rule_mc_fixed";
pub const SIGMA_THETA_OPTIMAL: &str = "sigma_theta_optimal";

fn default_r() -> Vec<f64> {
    vec![0.5]
}
fn default_one() -> Vec<f64> {
    vec![1.0]
}
fn default_kappa() -> Vec<f64> {
    vec![3.0]
}
fn default_estimators() -> Vec<EstimatorTag> {
    vec![
        EstimatorTag::MatrixForm,
        EstimatorTag::VariationalForm,
        EstimatorTag::NoiselessProjection,
        EstimatorTag::VarianceLike,
    ]
}
fn default_reps() -> usize {
    400
}
fn default_test_points() -> usize {
    64
}
fn default_law() -> String {
    "gaussian".into()
}

/// Lists of values per field; the grid is their Cartesian product.
///
/// Spectra are `capacity(d, alpha)` for every `d × alpha` pair followed by the
/// entries of `spectra`. A missing `d` or `n` list means an empty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub d: Vec<usize>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub spectra: Vec<SpectrumSpec>,
    #[serde(default = "default_r")]
    pub r: Vec<f64>,
    #[serde(default = "default_one")]
    pub rho2: Vec<f64>,
    #[serde(default = "default_one")]
    pub sigma2: Vec<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            d: vec![],
            n: vec![],
            alpha: vec![],
            spectra: vec![],
            r: default_r(),
            rho2: default_one(),
            sigma2: default_one(),
            kappa: default_kappa(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorTag>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    #[serde(default)]
    pub seed: u64,
    /// `gaussian`, `latent` or `adversarial`.
    #[serde(default = "default_law")]
    pub law: String,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            estimators: default_estimators(),
            rules: vec![],
            reps: default_reps(),
            test_points: default_test_points(),
            seed: 0,
            law: default_law(),
            output: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.test_points == 0 {
            return Err(Error::Config("test_points must be >= 1".into()));
        }
        if self.estimators.contains(&EstimatorTag::RuleMc) {
            return Err(Error::Config("rule_mc is selected through `rules`, not `estimators`".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        law_from_name(&self.law, Spectrum::isotropic(1, 1.0)?)?;
        Ok(())
    }

    /// SHA-256 of the compact JSON serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn law_from_name(name: &str, spectrum: Spectrum) -> Result<CovariateLaw> {
    CovariateLaw::from_name(name, spectrum).map_err(|e| Error::Config(e.to_string()))
}

/// Grid coordinates shared by bounds and risk rows.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
pub struct RiskKey {
    pub d: usize,
    pub n: usize,
    /// Capacity exponent, or `explicit#i` for the `i`-th explicit spectrum.
    pub alpha: String,
    pub r: f64,
    pub rho2: f64,
    pub sigma2: f64,
}

/// A grid point: risk coordinates plus the kurtosis constant used by the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PointKey {
    pub risk: RiskKey,
    pub kappa: f64,
}

/// One fully specified grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub key: PointKey,
    pub base: Spectrum,
    pub alpha: Option<f64>,
    pub prior: SourcePrior,
}

impl GridPoint {
    pub fn effective(&self) -> Result<Spectrum> {
        effective_spectrum(&self.base, &self.prior)
    }
}

/// Expands the grid in the order spectra, n, r, rho2, sigma2, kappa.
pub fn expand(config: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let g = &config.grid;
    let mut spectra: Vec<(String, Option<f64>, Spectrum)> = Vec::new();
    for &d in &g.d {
        for &alpha in &g.alpha {
            let s = capacity_spectrum(d, alpha).map_err(|e| Error::Config(e.to_string()))?;
            spectra.push((alpha.to_string(), Some(alpha), s));
        }
    }
    for (i, spec) in g.spectra.iter().enumerate() {
        let s = spec.build().map_err(|e| Error::Config(e.to_string()))?;
        let label = match spec.alpha() {
            Some(a) => a.to_string(),
            None => format!("explicit#{i}"),
        };
        spectra.push((label, spec.alpha(), s));
    }
    let mut points = Vec::new();
    for (label, alpha, base) in &spectra {
        for &n in &g.n {
            for &r in &g.r {
                for &rho2 in &g.rho2 {
                    let prior = SourcePrior::new(r, rho2).map_err(|e| Error::Config(e.to_string()))?;
                    for &sigma2 in &g.sigma2 {
                        if !(sigma2.is_finite() && sigma2 >= 0.0) {
                            return Err(Error::Config(format!("sigma2 = {sigma2} must be >= 0")));
                        }
                        for &kappa in &g.kappa {
                            let risk = RiskKey { d: base.dim(), n, alpha: label.clone(), r, rho2, sigma2 };
                            points.push(GridPoint {
                                key: PointKey { risk, kappa },
                                base: base.clone(),
                                alpha: *alpha,
                                prior,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

/// A bounds-table row; `report` is `None` when the bound does not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub theorem: BoundKind,
    pub key: PointKey,
    pub report: Option<BoundReport>,
}

/// A risk-table row; `estimate` is `None` when the estimator does not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub estimator: String,
    pub key: RiskKey,
    pub rule: Option<RuleSpec>,
    pub estimate: Option<RiskEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub key: PointKey,
    pub inequality: &'static str,
    pub rule: Option<RuleSpec>,
    pub estimate: f64,
    pub bound: f64,
    pub std_error: f64,
    pub margin: f64,
    pub pass: bool,
}

fn noise_model(law: &str, sigma2: f64, kappa: f64, effective: &Spectrum) -> Result<NoiseModel> {
    match law_from_name(law, effective.clone())?.kind {
        // ‖X̃‖² = L² = Tr(Σ_H) almost surely
        CovariateKind::AdversarialDiscrete { scale } => NoiseModel::new(sigma2, scale * scale, true, kappa),
        _ => NoiseModel::from_kurtosis(sigma2, kappa, effective),
    }
}

fn one_sided(kind: BoundKind, lower: f64, upper: f64) -> BoundReport {
    BoundReport { kind, lower, upper, lambda_lower: f64::NAN, lambda_upper: f64::NAN, k_star: None }
}

fn applicable(result: Result<BoundReport>) -> Result<Option<BoundReport>> {
    match result {
        Ok(r) => Ok(Some(r)),
        Err(Error::NotApplicable(_)) | Err(Error::InvalidArgument(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Every bound at one grid point, in [`BoundKind::ALL`] order.
pub fn point_bounds(point: &GridPoint, law: &str) -> Result<Vec<BoundRow>> {
    let key = &point.key;
    let eff = point.effective()?;
    let n = key.risk.n;
    let sigma2 = key.risk.sigma2;
    let noise = noise_model(law, sigma2, key.kappa, &eff)?;
    BoundKind::ALL
        .into_iter()
        .map(|kind| {
            let report = match kind {
                BoundKind::NoisySandwich => applicable(noisy_sandwich(&eff, n, &noise)),
                BoundKind::VarianceLower => applicable(variance_lower_report(&eff, n, &noise)),
                BoundKind::SupVarianceLower => applicable(sup_variance_lower_bound(&eff, n, &noise).map(|v| {
                    let mut r = one_sided(kind, v, f64::INFINITY);
                    r.lambda_lower = (sigma2 + noise.lh2) / n as f64;
                    r.lambda_upper = noise.lh2 / n as f64;
                    r
                })),
                BoundKind::NoiselessSandwich => applicable(noiseless_sandwich(&eff, n)),
                BoundKind::CapacityNoiseless => match point.alpha {
                    Some(alpha) => applicable(capacity_noiseless_sandwich(&eff, n, 2.0 * alpha * point.prior.r)),
                    None => Ok(None),
                },
                BoundKind::FastDecay => applicable(fast_decay_sandwich(&eff, n)),
                BoundKind::CapacityRate => match point.alpha {
                    Some(alpha) => applicable(
                        capacity_rate(alpha, point.prior.r, point.prior.rho2, sigma2, key.kappa, n)
                            .map(|v| one_sided(kind, 0.0, v)),
                    ),
                    None => Ok(None),
                },
                BoundKind::Underparametrized => {
                    applicable(underparam_upper_bound(&eff, n, sigma2).map(|v| one_sided(kind, 0.0, v)))
                }
            }?;
            Ok(BoundRow { theorem: kind, key: key.clone(), report })
        })
        .collect()
}

pub fn compute_bounds(config: &ExperimentConfig) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for point in expand(config)? {
        rows.extend(point_bounds(&point, &config.law)?);
    }
    Ok(rows)
}

/// Which parts of the risk table to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiskSelection {
    pub estimators: bool,
    pub rules: bool,
}

impl RiskSelection {
    pub const ALL: Self = Self { estimators: true, rules: true };
}

fn optional(result: Result<RiskEstimate>, what: &str) -> Result<Option<RiskEstimate>> {
    match result {
        Ok(e) => Ok(Some(e)),
        Err(Error::NotApplicable(msg)) | Err(Error::InvalidArgument(msg)) => {
            info!("{what}: {msg}");
            Ok(None)
        }
        Err(Error::DegenerateKernel) => {
            warn!("{what}: degenerate kernel weights; row marked not applicable");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Optimal risk of a problem: matrix form for `σ² > 0`, noiseless error otherwise.
fn optimal_reference(p: &ProblemInstance, reps: usize, seed: SeedSpec) -> Result<RiskEstimate> {
    if p.sigma2 > 0.0 {
        optimal_risk_matrix_form(p, reps, seed)
    } else {
        optimal_risk_noiseless(p, reps, seed)
    }
}

/// Risk rows at one grid point (ignoring `kappa`).
pub fn point_risk(point: &GridPoint, config: &ExperimentConfig, select: RiskSelection) -> Result<Vec<RiskRow>> {
    let key = &point.key.risk;
    let seed = SeedSpec::new(config.seed, 0);
    let (reps, tp) = (config.reps, config.test_points);
    let mut rows = Vec::new();
    let row = |estimator: &str, rule: Option<RuleSpec>, estimate: Option<RiskEstimate>| RiskRow {
        estimator: estimator.to_string(),
        key: key.clone(),
        rule,
        estimate,
    };
    if select.estimators {
        let eff = point.effective()?;
        let p = ProblemInstance::with_law(eff.clone(), key.n, key.sigma2, law_from_name(&config.law, eff)?)?;
        for tag in &config.estimators {
            let what = tag.as_str();
            let estimate = match tag {
                EstimatorTag::MatrixForm => optional(optimal_risk_matrix_form(&p, reps, seed), what)?,
                EstimatorTag::VariationalForm => optional(optimal_risk_variational_form(&p, reps, tp, seed), what)?,
                EstimatorTag::NoiselessProjection => optional(optimal_risk_noiseless(&p, reps, seed), what)?,
                EstimatorTag::VarianceLike => optional(variance_like_term(&p, reps, seed), what)?,
                EstimatorTag::RuleMc => unreachable!("rejected by validate"),
            };
            rows.push(row(what, None, estimate));
        }
    }
    if select.rules && !config.rules.is_empty() {
        let base = &point.base;
        let raw = ProblemInstance::with_law(base.clone(), key.n, key.sigma2, law_from_name(&config.law, base.clone())?)?;
        let prior_target = Target::Prior(point.prior);
        for rule in &config.rules {
            let what = format!("{RULE_PRIOR} {rule}");
            let estimate = optional(rule_excess_risk(&raw, rule, &prior_target, reps, tp, seed), &what)?;
            rows.push(row(RULE_PRIOR, Some(*rule), estimate));
        }
        // fixed target with Σ_θ = Σ_H, for the rotation-invariant rules
        let invariant: Vec<RuleSpec> = config.rules.iter().copied().filter(RuleSpec::is_rotation_invariant).collect();
        if !invariant.is_empty() {
            let coords = point.prior.second_moment(base)?.iter().map(|h| h.sqrt()).collect();
            let target = FixedTarget::new(base, coords)?;
            let sigma_theta = sigma_theta_spectrum(base, &target)?;
            let law = law_from_name(&config.law, sigma_theta.clone())?;
            let reference = ProblemInstance::with_law(sigma_theta, key.n, key.sigma2, law)?;
            let estimate = optional(optimal_reference(&reference, reps, seed), SIGMA_THETA_OPTIMAL)?;
            rows.push(row(SIGMA_THETA_OPTIMAL, None, estimate));
            let fixed = Target::Fixed(target);
            for rule in invariant {
                let what = format!("{RULE_FIXED} {rule}");
                let estimate = optional(rule_excess_risk(&raw, &rule, &fixed, reps, tp, seed), &what)?;
                rows.push(row(RULE_FIXED, Some(rule), estimate));
            }
        }
    }
    Ok(rows)
}

/// Risk rows for every distinct risk key of the grid, in grid order.
pub fn compute_risk(config: &ExperimentConfig, select: RiskSelection) -> Result<Vec<RiskRow>> {
    let mut seen: Vec<RiskKey> = Vec::new();
    let mut rows = Vec::new();
    for point in expand(config)? {
        if seen.contains(&point.key.risk) {
            continue;
        }
        seen.push(point.key.risk.clone());
        info!("risk at {:?}", point.key.risk);
        rows.extend(point_risk(&point, config, select)?);
    }
    Ok(rows)
}

/// Margin of `diff ≥ 0` in standard errors. The standard error is floored at
/// the floating-point resolution of the compared values; an exactly zero
/// standard error gives `±∞`.
pub fn margin(diff: f64, std_error: f64, scale: f64) -> f64 {
    let resolution = 1e-12 * scale.abs().max(f64::MIN_POSITIVE);
    if std_error == 0.0 {
        if diff >= -resolution {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        diff / std_error.max(resolution)
    }
}

fn verdict(key: &PointKey, inequality: &'static str, rule: Option<RuleSpec>, estimate: f64, bound: f64, se: f64, margin: f64) -> Verdict {
    Verdict { key: key.clone(), inequality, rule, estimate, bound, std_error: se, margin, pass: margin >= PASS_MARGIN }
}

fn lower_verdict(key: &PointKey, id: &'static str, e: &RiskEstimate, lower: f64) -> Verdict {
    let m = margin(e.mean - lower, e.std_error, e.mean.abs().max(lower.abs()));
    verdict(key, id, None, e.mean, lower, e.std_error, m)
}

fn upper_verdict(key: &PointKey, id: &'static str, e: &RiskEstimate, upper: f64) -> Verdict {
    let m = margin(upper - e.mean, e.std_error, e.mean.abs().max(upper.abs()));
    verdict(key, id, None, e.mean, upper, e.std_error, m)
}

/// `a ≥ b` for two estimates with combined standard error.
fn dominance(key: &PointKey, id: &'static str, rule: Option<RuleSpec>, a: &RiskEstimate, b: &RiskEstimate) -> Verdict {
    let se = a.std_error.hypot(b.std_error);
    let m = margin(a.mean - b.mean, se, a.mean.abs().max(b.mean.abs()));
    verdict(key, id, rule, a.mean, b.mean, se, m)
}

/// Compares the risk estimates at every grid point with the bounds there.
///
/// Every bounds point needs risk rows and vice versa; otherwise the tables come
/// from different configs and a config error is returned.
pub fn verify(bounds: &[BoundRow], risk: &[RiskRow]) -> Result<Vec<Verdict>> {
    let mut points: Vec<PointKey> = Vec::new();
    for row in bounds {
        if !points.contains(&row.key) {
            points.push(row.key.clone());
        }
    }
    for row in risk {
        if !points.iter().any(|p| p.risk == row.key) {
            return Err(Error::Config(format!("risk rows at {:?} have no matching bounds rows", row.key)));
        }
    }
    let mut out = Vec::new();
    for key in &points {
        let rows: Vec<&RiskRow> = risk.iter().filter(|r| r.key == key.risk).collect();
        if rows.is_empty() {
            return Err(Error::Config(format!("bounds rows at {:?} have no matching risk rows", key.risk)));
        }
        let find = |estimator: &str, rule: Option<RuleSpec>| {
            rows.iter().find(|r| r.estimator == estimator && r.rule == rule).and_then(|r| r.estimate.as_ref())
        };
        let bound = |kind: BoundKind| {
            bounds.iter().find(|b| b.key == *key && b.theorem == kind).and_then(|b| b.report.as_ref())
        };
        let optimal = if key.risk.sigma2 > 0.0 {
            find(EstimatorTag::MatrixForm.as_str(), None)
        } else {
            find(EstimatorTag::NoiselessProjection.as_str(), None)
        };
        let noiseless = find(EstimatorTag::NoiselessProjection.as_str(), None);
        if let (Some(e), Some(b)) = (optimal, bound(BoundKind::NoisySandwich)) {
            out.push(lower_verdict(key, "thm2_lower", e, b.lower));
            out.push(upper_verdict(key, "thm2_upper", e, b.upper));
        }
        if let (Some(e), Some(b)) = (find(EstimatorTag::VarianceLike.as_str(), None), bound(BoundKind::VarianceLower)) {
            out.push(lower_verdict(key, "thm3", e, b.lower));
        }
        if let (Some(e), Some(b)) = (noiseless, bound(BoundKind::NoiselessSandwich)) {
            out.push(lower_verdict(key, "thm5_lower", e, b.lower));
            out.push(upper_verdict(key, "thm5_upper", e, b.upper));
        }
        if let (Some(e), Some(b)) = (noiseless, bound(BoundKind::FastDecay)) {
            out.push(lower_verdict(key, "thm6_lower", e, b.lower));
            out.push(upper_verdict(key, "thm6_upper", e, b.upper));
        }
        if let Some(reference) = find(SIGMA_THETA_OPTIMAL, None) {
            for row in rows.iter().filter(|r| r.estimator == RULE_FIXED) {
                if let Some(e) = &row.estimate {
                    out.push(dominance(key, "prop8", row.rule, e, reference));
                }
            }
        }
        if let (Some(a), Some(b)) = (find(EstimatorTag::MatrixForm.as_str(), None), find(EstimatorTag::VariationalForm.as_str(), None)) {
            let se = a.std_error.hypot(b.std_error);
            let m = margin(-(a.mean - b.mean).abs(), se, a.mean.abs().max(b.mean.abs()));
            out.push(verdict(key, "prop1_equality", None, b.mean, a.mean, se, m));
        }
        if let Some(opt) = find(RULE_PRIOR, Some(RuleSpec::Optimal)) {
            for row in rows.iter().filter(|r| r.estimator == RULE_PRIOR && r.rule != Some(RuleSpec::Optimal)) {
                if let Some(e) = &row.estimate {
                    out.push(dominance(key, "optimal_lambda", row.rule, e, opt));
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- CSV

fn fmt_value(x: f64) -> String {
    if x.is_nan() {
        NOT_APPLICABLE.into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.16e}")
    }
}

fn parse_value(s: &str) -> Result<f64> {
    match s {
        NOT_APPLICABLE => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| Error::Config(format!("bad number '{s}'"))),
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config(format!("bad {what} '{s}'")))
}

fn key_fields(k: &RiskKey) -> [String; 6] {
    [k.d.to_string(), k.n.to_string(), k.alpha.clone(), k.r.to_string(), k.rho2.to_string(), k.sigma2.to_string()]
}

fn parse_key(f: &[&str]) -> Result<RiskKey> {
    Ok(RiskKey {
        d: parse_field(f[0], "d")?,
        n: parse_field(f[1], "n")?,
        alpha: f[2].to_string(),
        r: parse_field(f[3], "r")?,
        rho2: parse_field(f[4], "rho2")?,
        sigma2: parse_field(f[5], "sigma2")?,
    })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn write_table<I: IntoIterator<Item = Vec<String>>>(path: &Path, header: &[&str], rows: I) -> Result<()> {
    let mut w = csv_writer(fs::File::create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Config(format!("{} has unexpected columns {found:?}", path.display())));
    }
    r.records().map(|rec| Ok(rec?.iter().map(str::to_string).collect())).collect()
}

pub fn bound_record(row: &BoundRow) -> Vec<String> {
    let mut rec = vec![row.theorem.tag().to_string()];
    rec.extend(key_fields(&row.key.risk));
    rec.push(row.key.kappa.to_string());
    match &row.report {
        Some(b) => {
            rec.extend([b.lower, b.upper, b.lambda_lower, b.lambda_upper].map(fmt_value));
            rec.push(b.k_star.map_or_else(|| NOT_APPLICABLE.to_string(), |k| k.to_string()));
        }
        None => rec.extend(std::iter::repeat_n(NOT_APPLICABLE.to_string(), 5)),
    }
    rec
}

pub fn risk_record(row: &RiskRow) -> Vec<String> {
    let mut rec = vec![row.estimator.clone()];
    rec.extend(key_fields(&row.key));
    rec.push(row.rule.map(|r| r.to_string()).unwrap_or_default());
    match &row.estimate {
        Some(e) => rec.extend([fmt_value(e.mean), fmt_value(e.std_error), e.reps.to_string()]),
        None => rec.extend(std::iter::repeat_n(NOT_APPLICABLE.to_string(), 3)),
    }
    rec
}

pub fn verdict_record(v: &Verdict) -> Vec<String> {
    let mut rec: Vec<String> = key_fields(&v.key.risk).into();
    rec.push(v.key.kappa.to_string());
    rec.push(v.inequality.to_string());
    rec.push(v.rule.map(|r| r.to_string()).unwrap_or_default());
    rec.extend([v.estimate, v.bound, v.std_error, v.margin].map(fmt_value));
    rec.push(v.pass.to_string());
    rec
}

pub fn write_bounds(path: &Path, rows: &[BoundRow]) -> Result<()> {
    write_table(path, &BOUNDS_HEADER, rows.iter().map(bound_record))
}

pub fn write_risk(path: &Path, rows: &[RiskRow]) -> Result<()> {
    write_table(path, &RISK_HEADER, rows.iter().map(risk_record))
}

pub fn write_verdicts(path: &Path, rows: &[Verdict]) -> Result<()> {
    write_table(path, &VERDICT_HEADER, rows.iter().map(verdict_record))
}

pub fn read_bounds(path: &Path) -> Result<Vec<BoundRow>> {
    read_table(path, &BOUNDS_HEADER)?
        .iter()
        .map(|rec| {
            let f: Vec<&str> = rec.iter().map(String::as_str).collect();
            let theorem =
                BoundKind::from_tag(f[0]).ok_or_else(|| Error::Config(format!("unknown theorem '{}'", f[0])))?;
            let key = PointKey { risk: parse_key(&f[1..7])?, kappa: parse_field(f[7], "kappa")? };
            let report = if f[8] == NOT_APPLICABLE {
                None
            } else {
                Some(BoundReport {
                    kind: theorem,
                    lower: parse_value(f[8])?,
                    upper: parse_value(f[9])?,
                    lambda_lower: parse_value(f[10])?,
                    lambda_upper: parse_value(f[11])?,
                    k_star: if f[12] == NOT_APPLICABLE { None } else { Some(parse_field(f[12], "k_star")?) },
                })
            };
            Ok(BoundRow { theorem, key, report })
        })
        .collect()
}

pub fn read_risk(path: &Path) -> Result<Vec<RiskRow>> {
    read_table(path, &RISK_HEADER)?
        .iter()
        .map(|rec| {
            let f: Vec<&str> = rec.iter().map(String::as_str).collect();
            let tag = EstimatorTag::from_tag(f[0]);
            if tag.is_none() && ![RULE_PRIOR, RULE_FIXED, SIGMA_THETA_OPTIMAL].contains(&f[0]) {
                return Err(Error::Config(format!("unknown estimator '{}'", f[0])));
            }
            let rule = if f[7].is_empty() { None } else { Some(f[7].parse().map_err(|e: Error| Error::Config(e.to_string()))?) };
            let estimate = if f[8] == NOT_APPLICABLE {
                None
            } else {
                Some(RiskEstimate {
                    mean: parse_value(f[8])?,
                    std_error: parse_value(f[9])?,
                    reps: parse_field(f[10], "reps")?,
                    tag: tag.unwrap_or(EstimatorTag::RuleMc),
                })
            };
            Ok(RiskRow { estimator: f[0].to_string(), key: parse_key(&f[1..7])?, rule, estimate })
        })
        .collect()
}

// ---------------------------------------------------------------- runs

/// What a run computes and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Bounds,
    /// Optimal-risk estimators and rules.
    Risk,
    /// Rules only.
    RuleRisk,
    /// Verdicts from `bounds.csv` and `risk.csv` already in the output directory.
    Verify,
    All,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub bounds: Vec<BoundRow>,
    pub risk: Vec<RiskRow>,
    pub verdicts: Vec<Verdict>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.pass)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    reps: usize,
    test_points: usize,
    law: &'a str,
    stage: &'a str,
    files: Vec<&'static str>,
}

/// Runs `stage` for `config` on a pool of `workers` threads and writes the
/// artifacts into `out`.
pub fn run(config: &ExperimentConfig, stage: Stage, out: &Path, workers: usize) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut summary = RunSummary::default();
    let mut files = Vec::new();
    pool.install(|| -> Result<()> {
        if matches!(stage, Stage::Bounds | Stage::All) {
            summary.bounds = compute_bounds(config)?;
            write_bounds(&out.join("bounds.csv"), &summary.bounds)?;
            files.push("bounds.csv");
        }
        let select = match stage {
            Stage::Risk | Stage::All => Some(RiskSelection::ALL),
            Stage::RuleRisk => Some(RiskSelection { estimators: false, rules: true }),
            _ => None,
        };
        if let Some(select) = select {
            summary.risk = compute_risk(config, select)?;
            write_risk(&out.join("risk.csv"), &summary.risk)?;
            files.push("risk.csv");
        }
        if stage == Stage::Verify {
            summary.bounds = read_bounds(&out.join("bounds.csv"))?;
            summary.risk = read_risk(&out.join("risk.csv"))?;
        }
        if matches!(stage, Stage::Verify | Stage::All) {
            summary.verdicts = verify(&summary.bounds, &summary.risk)?;
            write_verdicts(&out.join("verdicts.csv"), &summary.verdicts)?;
            files.push("verdicts.csv");
        }
        Ok(())
    })?;
    let manifest = Manifest {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config.hash()?,
        seed: config.seed,
        reps: config.reps,
        test_points: config.test_points,
        law: &config.law,
        stage: stage_name(stage),
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join("manifest.json"), text)?;
    Ok(summary)
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Bounds => "bounds",
        Stage::Risk => "mc-risk",
        Stage::RuleRisk => "rule-risk",
        Stage::Verify => "verify",
        Stage::All => "all",
    }
}

/// Groups verdicts by inequality id: `(total, passed)`.
pub fn verdict_counts(verdicts: &[Verdict]) -> BTreeMap<&'static str, (usize, usize)> {
    let mut counts = BTreeMap::new();
    for v in verdicts {
        let e = counts.entry(v.inequality).or_insert((0, 0));
        e.0 += 1;
        e.1 += v.pass as usize;
    }
    counts
}
