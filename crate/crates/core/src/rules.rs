//! Linear prediction rules `f(x) = Σ_i l_i(x) Y_i` and their weight vectors.
//!
//! Rules are fitted once on the training rows and then evaluated at any number
//! of test points. Ridge keeps a Cholesky factor of the `n × n` kernel matrix
//! (or of the `d × d` covariance when `n > 2d`); min-norm and the
//! gradient methods are spectral filters on the eigendecomposition of the
//! smaller of `XXᵀ` and `XᵀX`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, not_applicable, Error, Result};
use crate::linalg::{cross, gram, rank_tolerance, scale_columns, shifted_cholesky};

/// Which rule to evaluate.
///
/// `Optimal` and `TransformedRidge` operate on covariates rescaled by the prior
/// second moment `H^{1/2}` and therefore need a [`PriorContext`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RuleSpec {
    /// Ridge on transformed covariates with `nλ = σ²`.
    Optimal,
    TransformedRidge { lambda: f64 },
    Ridge { lambda: f64 },
    MinNorm,
    GradientFlow { t: f64 },
    GradientDescent { eta: f64, steps: u32 },
    NadarayaWatson { h: f64 },
}

impl RuleSpec {
    /// Whether the rule needs the prior second moment.
    pub fn needs_prior(&self) -> bool {
        matches!(self, RuleSpec::Optimal | RuleSpec::TransformedRidge { .. })
    }

    /// Rules whose weights are unchanged by a common orthogonal map of all inputs.
    pub fn is_rotation_invariant(&self) -> bool {
        !self.needs_prior()
    }

    fn validate(self) -> Result<Self> {
        let ok = match self {
            RuleSpec::Optimal | RuleSpec::MinNorm => true,
            RuleSpec::TransformedRidge { lambda } | RuleSpec::Ridge { lambda } => lambda.is_finite() && lambda >= 0.0,
            RuleSpec::GradientFlow { t } => t.is_finite() && t >= 0.0,
            RuleSpec::GradientDescent { eta, .. } => eta.is_finite() && eta > 0.0,
            RuleSpec::NadarayaWatson { h } => h.is_finite() && h > 0.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(invalid(format!("bad rule parameters: {self}")))
        }
    }
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleSpec::Optimal => write!(f, "optimal"),
            RuleSpec::TransformedRidge { lambda } => write!(f, "tridge:lambda={lambda}"),
            RuleSpec::Ridge { lambda } => write!(f, "ridge:lambda={lambda}"),
            RuleSpec::MinNorm => write!(f, "minnorm"),
            RuleSpec::GradientFlow { t } => write!(f, "gf:t={t}"),
            RuleSpec::GradientDescent { eta, steps } => write!(f, "gd:eta={eta},steps={steps}"),
            RuleSpec::NadarayaWatson { h } => write!(f, "nw:h={h}"),
        }
    }
}

impl FromStr for RuleSpec {
    type Err = Error;

    /// Parses `optimal`, `minnorm`, `ridge:lambda=0.1`, `tridge:lambda=0.1`,
    /// `gf:t=100`, `gd:eta=0.5,steps=20`, `nw:h=1.0`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = match s.trim().split_once(':') {
            Some((name, params)) => (name, params),
            None => (s.trim(), ""),
        };
        let mut lambda = None;
        let mut t = None;
        let mut eta = None;
        let mut steps = None;
        let mut h = None;
        for kv in params.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("rule parameter '{kv}' is not key=value")))?;
            let num = || v.trim().parse::<f64>().map_err(|_| invalid(format!("bad number in '{kv}'")));
            match k.trim() {
                "lambda" => lambda = Some(num()?),
                "t" => t = Some(num()?),
                "eta" => eta = Some(num()?),
                "h" => h = Some(num()?),
                "steps" => {
                    steps = Some(v.trim().parse::<u32>().map_err(|_| invalid(format!("bad integer in '{kv}'")))?)
                }
                other => return Err(invalid(format!("unknown rule parameter '{other}'"))),
            }
        }
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| invalid(format!("rule '{name}' needs {key}=")));
        let rule = match name {
            "optimal" => RuleSpec::Optimal,
            "minnorm" | "min_norm" => RuleSpec::MinNorm,
            "ridge" => RuleSpec::Ridge { lambda: need(lambda, "lambda")? },
            "tridge" => RuleSpec::TransformedRidge { lambda: need(lambda, "lambda")? },
            "gf" => RuleSpec::GradientFlow { t: need(t, "t")? },
            "gd" => RuleSpec::GradientDescent {
                eta: need(eta, "eta")?,
                steps: steps.ok_or_else(|| invalid("rule 'gd' needs steps="))?,
            },
            "nw" => RuleSpec::NadarayaWatson { h: need(h, "h")? },
            other => return Err(invalid(format!("unknown rule '{other}'"))),
        };
        rule.validate()
    }
}

impl TryFrom<String> for RuleSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RuleSpec> for String {
    fn from(r: RuleSpec) -> String {
        r.to_string()
    }
}

/// Prior information used by the transformed rules: the diagonal of `H` in the
/// eigenbasis and the noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorContext {
    pub h: Vec<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone)]
enum Fitted {
    RidgeDual { x: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
    RidgePrimal { x: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
    /// `XXᵀ = U diag(e) Uᵀ`, `l = U diag(φ(e)) Uᵀ X x`.
    SpectralDual { x: DMatrix<f64>, u: DMatrix<f64>, phi: DVector<f64> },
    /// `XᵀX = V diag(e) Vᵀ`, `l = X V diag(φ(e)) Vᵀ x`.
    SpectralPrimal { x: DMatrix<f64>, v: DMatrix<f64>, phi: DVector<f64> },
    /// Training rows stored as columns (`d × n`).
    Kernel { xt: DMatrix<f64>, h: f64 },
    Empty { d: usize },
}

/// A rule fitted on training rows; cheap to evaluate at new points.
#[derive(Debug, Clone)]
pub struct FittedRule {
    rule: RuleSpec,
    /// `H^{1/2}` diagonal for the transformed rules.
    transform: Option<Vec<f64>>,
    inner: Fitted,
}

/// Fits a rule that needs no prior information.
pub fn fit(rule: &RuleSpec, x: &DMatrix<f64>) -> Result<FittedRule> {
    if rule.needs_prior() {
        return Err(not_applicable(format!("rule '{rule}' needs the prior second moment")));
    }
    fit_inner(rule.validate()?, x, None, 0.0)
}

/// Fits any rule; plain rules ignore `prior`.
pub fn fit_with_prior(rule: &RuleSpec, x: &DMatrix<f64>, prior: &PriorContext) -> Result<FittedRule> {
    let rule = rule.validate()?;
    if !rule.needs_prior() {
        return fit_inner(rule, x, None, 0.0);
    }
    if prior.h.len() != x.ncols() {
        return Err(invalid(format!("prior has {} coordinates, covariates have {}", prior.h.len(), x.ncols())));
    }
    if !(prior.sigma2.is_finite() && prior.sigma2 >= 0.0) {
        return Err(invalid(format!("sigma2 = {} must be >= 0", prior.sigma2)));
    }
    let root: Vec<f64> = prior.h.iter().map(|v| v.sqrt()).collect();
    let xt = scale_columns(x, &root);
    fit_inner(rule, &xt, Some(root), prior.sigma2)
}

fn fit_inner(rule: RuleSpec, x: &DMatrix<f64>, transform: Option<Vec<f64>>, sigma2: f64) -> Result<FittedRule> {
    let (n, d) = x.shape();
    if d == 0 {
        return Err(invalid("covariates must have at least one column"));
    }
    let inner = if n == 0 {
        Fitted::Empty { d }
    } else {
        let nf = n as f64;
        match rule {
            RuleSpec::Optimal if sigma2 > 0.0 => ridge(x, sigma2)?,
            RuleSpec::TransformedRidge { lambda } | RuleSpec::Ridge { lambda } if lambda > 0.0 => ridge(x, nf * lambda)?,
            RuleSpec::Optimal | RuleSpec::TransformedRidge { .. } | RuleSpec::Ridge { .. } | RuleSpec::MinNorm => {
                spectral(x, |e| 1.0 / e)
            }
            RuleSpec::GradientFlow { t } => spectral(x, |e| -(-t * e / nf).exp_m1() / e),
            RuleSpec::GradientDescent { eta, steps } => spectral(x, |e| {
                let a = eta * e / nf;
                let filt = if a < 1.0 {
                    -(steps as f64 * (-a).ln_1p()).exp_m1()
                } else {
                    1.0 - (1.0 - a).powi(steps as i32)
                };
                filt / e
            }),
            RuleSpec::NadarayaWatson { h } => Fitted::Kernel { xt: x.transpose(), h },
        }
    };
    Ok(FittedRule { rule, transform, inner })
}

fn ridge(x: &DMatrix<f64>, shift: f64) -> Result<Fitted> {
    let (n, d) = x.shape();
    Ok(if n > 2 * d {
        Fitted::RidgePrimal { x: x.clone(), chol: shifted_cholesky(cross(x), shift)? }
    } else {
        Fitted::RidgeDual { x: x.clone(), chol: shifted_cholesky(gram(x), shift)? }
    })
}

/// Filter `φ` on the eigenvalues of `XXᵀ` (equivalently `XᵀX`) above the
/// cutoff `max(n, d) · ε · e_max`, zero below.
fn spectral(x: &DMatrix<f64>, phi: impl Fn(f64) -> f64) -> Fitted {
    let (n, d) = x.shape();
    let primal = n > d;
    let eig = if primal { cross(x) } else { gram(x) }.symmetric_eigen();
    let e_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cut = rank_tolerance(n, d, e_max);
    let phi = eig.eigenvalues.map(|e| if e > cut { phi(e) } else { 0.0 });
    if primal {
        Fitted::SpectralPrimal { x: x.clone(), v: eig.eigenvectors, phi }
    } else {
        Fitted::SpectralDual { x: x.clone(), u: eig.eigenvectors, phi }
    }
}

fn scale_rows(mut m: DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    for (mut row, ci) in m.row_iter_mut().zip(c.iter()) {
        row *= *ci;
    }
    m
}

impl FittedRule {
    pub fn rule(&self) -> RuleSpec {
        self.rule
    }

    pub fn n(&self) -> usize {
        match &self.inner {
            Fitted::RidgeDual { x, .. }
            | Fitted::RidgePrimal { x, .. }
            | Fitted::SpectralDual { x, .. }
            | Fitted::SpectralPrimal { x, .. } => x.nrows(),
            Fitted::Kernel { xt, .. } => xt.ncols(),
            Fitted::Empty { .. } => 0,
        }
    }

    fn d(&self) -> usize {
        match &self.inner {
            Fitted::RidgeDual { x, .. }
            | Fitted::RidgePrimal { x, .. }
            | Fitted::SpectralDual { x, .. }
            | Fitted::SpectralPrimal { x, .. } => x.ncols(),
            Fitted::Kernel { xt, .. } => xt.nrows(),
            Fitted::Empty { d } => *d,
        }
    }

    /// Weight vector `l(x)` in raw (untransformed) coordinates.
    pub fn weights(&self, x: &[f64]) -> Result<DVector<f64>> {
        let t = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.weights_many(&t)?.column(0).into_owned())
    }

    /// Weights for every row of `tests` (`m × d`), one column per test point (`n × m`).
    pub fn weights_many(&self, tests: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if tests.ncols() != self.d() {
            return Err(invalid(format!("test points have {} coordinates, expected {}", tests.ncols(), self.d())));
        }
        let scaled;
        let t = match &self.transform {
            Some(root) => {
                scaled = scale_columns(tests, root);
                &scaled
            }
            None => tests,
        };
        let m = t.nrows();
        Ok(match &self.inner {
            Fitted::Empty { .. } => DMatrix::zeros(0, m),
            Fitted::RidgeDual { x, chol } => chol.solve(&(x * t.transpose())),
            Fitted::RidgePrimal { x, chol } => x * chol.solve(&t.transpose()),
            Fitted::SpectralDual { x, u, phi } => u * scale_rows(u.tr_mul(&(x * t.transpose())), phi),
            Fitted::SpectralPrimal { x, v, phi } => x * (v * scale_rows(v.tr_mul(&t.transpose()), phi)),
            Fitted::Kernel { xt, h } => {
                let tt = t.transpose();
                let mut out = DMatrix::zeros(xt.ncols(), m);
                for k in 0..m {
                    out.set_column(k, &nadaraya_watson(xt, tt.column(k).as_slice(), *h)?);
                }
                out
            }
        })
    }
}

fn nadaraya_watson(xt: &DMatrix<f64>, point: &[f64], h: f64) -> Result<DVector<f64>> {
    let inv = 1.0 / (2.0 * h * h);
    let mut w = DVector::from_iterator(
        xt.ncols(),
        xt.column_iter().map(|col| {
            let dist2: f64 = col.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
            (-dist2 * inv).exp()
        }),
    );
    let mass = w.sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::DegenerateKernel);
    }
    w /= mass;
    Ok(w)
}

/// Weights of rule `rule` fitted on `x` at the single point `point`.
pub fn weights(rule: &RuleSpec, x: &DMatrix<f64>, point: &[f64]) -> Result<DVector<f64>> {
    fit(rule, x)?.weights(point)
}

/// Optimal rule: ridge with `nλ = σ²` after rescaling rows and the test point
/// by `H^{1/2}`; min-norm on the transformed rows when `σ² = 0`.
pub fn optimal_rule_weights(x: &DMatrix<f64>, h: &[f64], sigma2: f64, point: &[f64]) -> Result<DVector<f64>> {
    let prior = PriorContext { h: h.to_vec(), sigma2 };
    fit_with_prior(&RuleSpec::Optimal, x, &prior)?.weights(point)
}

/// Weight matrix (`d × n`) after `steps` full-batch gradient steps from zero,
/// built by the recursion `W_t = (I − ηΣ̂) W_{t−1} + (η/n) Xᵀ`, so that
/// `θ_K = W_K Y` and `l^{(K)}(x) = W_Kᵀ x`.
pub fn gradient_descent_recursion(x: &DMatrix<f64>, eta: f64, steps: u32) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let nf = n as f64;
    let step = x.transpose() * (eta / nf);
    let mut contraction = DMatrix::<f64>::identity(d, d) - cross(x) * (eta / nf);
    if n == 0 {
        contraction = DMatrix::identity(d, d);
    }
    let mut w = DMatrix::zeros(d, n);
    for _ in 0..steps {
        w = &contraction * w + &step;
    }
    w
}
