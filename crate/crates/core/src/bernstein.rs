//! Closed-form catalog of driftless Laplace exponents and the derived
//! calculus: `φ`, `φ'`, `H = φ - λφ'`, the scale functions
//! `Φ(r) = 1/φ(r⁻²)` and `ψ(r) = 1/H(r⁻²)`, their inverses, and empirical
//! certificates for the weak scaling conditions.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};

/// Gregory coefficients: `λ / ln(1+λ) = Σ G_n λ^n`.
const GREGORY: [f64; 11] = [
    1.0,
    1.0 / 2.0,
    -1.0 / 12.0,
    1.0 / 24.0,
    -19.0 / 720.0,
    3.0 / 160.0,
    -863.0 / 60480.0,
    275.0 / 24192.0,
    -33953.0 / 3628800.0,
    8183.0 / 1036800.0,
    -3250433.0 / 479001600.0,
];

const SERIES_CUTOFF: f64 = 1e-2;

const INVERSE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelKind {
    /// `φ(λ) = λ^{α/2}`, `α ∈ (0, 2)`.
    Stable { alpha: f64 },
    /// `φ(λ) = λ / ln(1 + λ^{β/2})`, `β ∈ (0, 2)`.
    LogExampleI { beta: f64 },
    /// `φ(λ) = λ / ln(1 + λ) - 1`.
    LogExampleII,
}

/// A catalog Laplace exponent, optionally rescaled so that `φ(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorModel {
    kind: ModelKind,
    scale: f64,
    normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingTarget {
    Phi,
    H,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCertificate {
    pub target: ScalingTarget,
    pub a: f64,
    pub gamma_hat: f64,
    pub c_l_hat: f64,
    pub delta_hat: f64,
    pub c_u_hat: f64,
    pub grid: Vec<(f64, f64)>,
}

impl SubordinatorModel {
    pub fn new(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::Stable { alpha } if !(alpha > 0.0 && alpha < 2.0) => {
                return Err(Error::Domain(format!(
                    "stable index alpha={alpha} not in (0,2)"
                )));
            }
            ModelKind::LogExampleI { beta } if !(beta > 0.0 && beta < 2.0) => {
                return Err(Error::Domain(format!("beta={beta} not in (0,2)")));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            scale: 1.0,
            normalized: false,
        })
    }

    pub fn stable(alpha: f64) -> Result<Self> {
        Self::new(ModelKind::Stable { alpha })
    }

    pub fn log_example_i(beta: f64) -> Result<Self> {
        Self::new(ModelKind::LogExampleI { beta })
    }

    pub fn log_example_ii() -> Self {
        Self {
            kind: ModelKind::LogExampleII,
            scale: 1.0,
            normalized: false,
        }
    }

    /// Returns the rescaled exponent `φ / φ(1)`.
    pub fn normalized(self) -> Self {
        let raw = Self {
            scale: 1.0,
            normalized: false,
            ..self
        };
        Self {
            scale: 1.0 / raw.phi(1.0),
            normalized: true,
            ..self
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Multiplicative factor applied to the raw catalog exponent.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn drift(&self) -> f64 {
        0.0
    }

    pub fn is_stable(&self) -> bool {
        matches!(self.kind, ModelKind::Stable { .. })
    }

    /// The catalog id, e.g. `stable:alpha=1.2`.
    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn phi(&self, lambda: f64) -> f64 {
        self.scale * self.raw_phi(lambda)
    }

    pub fn phi_prime(&self, lambda: f64) -> f64 {
        self.scale * self.raw_phi_prime(lambda)
    }

    /// `H(λ) = φ(λ) - λφ'(λ)` in a cancellation-free closed form.
    pub fn h(&self, lambda: f64) -> f64 {
        self.scale * self.raw_h(lambda)
    }

    /// `H(λ)/λ` evaluated from `ℓ = ln λ` without forming `λ`.
    pub fn h_over_lambda_log(&self, ell: f64) -> f64 {
        let v = match self.kind {
            ModelKind::Stable { alpha } => {
                let a = 0.5 * alpha;
                (1.0 - a) * ((a - 1.0) * ell).exp()
            }
            ModelKind::LogExampleI { beta } => {
                let b = 0.5 * beta;
                let e = (-b * ell).exp();
                let l = if b * ell > 30.0 {
                    b * ell + e.ln_1p()
                } else {
                    (b * ell).exp().ln_1p()
                };
                b / ((1.0 + e) * l * l)
            }
            ModelKind::LogExampleII => {
                if ell < SERIES_CUTOFF.ln() {
                    let lambda = ell.exp();
                    self.raw_h(lambda) / lambda
                } else {
                    let e = (-ell).exp();
                    let l = if ell > 30.0 {
                        ell + e.ln_1p()
                    } else {
                        ell.exp().ln_1p()
                    };
                    1.0 / ((1.0 + e) * l * l) - e
                }
            }
        };
        self.scale * v
    }

    /// `Φ(r) = 1/φ(r⁻²)`.
    pub fn big_phi(&self, r: f64) -> f64 {
        1.0 / self.phi(1.0 / (r * r))
    }

    /// `ψ(r) = 1/H(r⁻²)`.
    pub fn psi(&self, r: f64) -> f64 {
        1.0 / self.h(1.0 / (r * r))
    }

    /// Monotone inverse of `φ` by bracketed bisection in log space.
    pub fn phi_inv(&self, y: f64) -> Result<f64> {
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Domain(format!("phi inverse needs y > 0, got {y}")));
        }
        let mut lo = 1e-12_f64;
        let mut hi = 1e12_f64;
        while self.phi(lo) > y {
            lo *= 1e-4;
            if lo < 1e-300 {
                return Err(Error::Range(format!("y={y:e} below the range of phi")));
            }
        }
        while self.phi(hi) < y {
            hi *= 1e4;
            if hi > 1e300 {
                return Err(Error::Range(format!("y={y:e} above the range of phi")));
            }
        }
        let (mut llo, mut lhi) = (lo.ln(), hi.ln());
        for _ in 0..200 {
            let mid = 0.5 * (llo + lhi);
            if self.phi(mid.exp()) < y {
                llo = mid;
            } else {
                lhi = mid;
            }
            if lhi - llo <= 1e-16 * mid.abs().max(1.0) {
                break;
            }
        }
        let x = (0.5 * (llo + lhi)).exp();
        let resid = (self.phi(x) - y).abs();
        if resid > INVERSE_RTOL * y {
            return Err(Error::Range(format!(
                "phi inverse residual {resid:e} exceeds tolerance at y={y:e}"
            )));
        }
        Ok(x)
    }

    /// `Φ⁻¹(s) = φ⁻¹(1/s)^{-1/2}`.
    pub fn big_phi_inv(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!("Phi inverse needs s > 0, got {s}")));
        }
        Ok(1.0 / self.phi_inv(1.0 / s)?.sqrt())
    }

    /// `Φ'(r) = 2 r⁻³ φ'(r⁻²) / φ(r⁻²)²`.
    pub fn big_phi_prime(&self, r: f64) -> f64 {
        let lambda = 1.0 / (r * r);
        let p = self.phi(lambda);
        2.0 * self.phi_prime(lambda) / (r * r * r * p * p)
    }

    /// Density of the Stieltjes measure `ν` in `φ(λ) = ∫ λ/(λ+x) ν(dx)`,
    /// read off the boundary value `Im φ(-x + i0) / (π x)`.
    pub fn stieltjes_density(&self, x: f64) -> f64 {
        let x0 = self.stieltjes_support_start();
        if x <= x0 {
            return 0.0;
        }
        self.stieltjes_density_log((x - x0).ln())
    }

    /// `ν` at `x = x0 + e^ℓ`, where `x0` is the left end of the support.
    fn stieltjes_density_log(&self, ell: f64) -> f64 {
        use std::f64::consts::PI;
        let v = match self.kind {
            ModelKind::Stable { alpha } => {
                let a = 0.5 * alpha;
                (PI * a).sin() * ((a - 1.0) * ell).exp() / PI
            }
            ModelKind::LogExampleI { beta } => {
                let b = 0.5 * beta;
                // L = ln(1 + w), w = x^b e^{iπb}
                let l = if b * ell > 30.0 {
                    let inv = Complex64::from_polar((-b * ell).exp(), -PI * b);
                    Complex64::new(b * ell, PI * b) + (Complex64::new(1.0, 0.0) + inv).ln()
                } else {
                    (Complex64::new(1.0, 0.0) + Complex64::from_polar((b * ell).exp(), PI * b)).ln()
                };
                l.im / (PI * l.norm_sqr())
            }
            ModelKind::LogExampleII => 1.0 / (ell * ell + PI * PI),
        };
        self.scale * v
    }

    /// Left end of the support of the Stieltjes measure.
    pub fn stieltjes_support_start(&self) -> f64 {
        match self.kind {
            ModelKind::LogExampleII => 1.0,
            _ => 0.0,
        }
    }

    /// Integrates `g(x) ν(dx)` over the Stieltjes support in the variable
    /// `ℓ = ln(x - x0)`. The closure receives `(x, ℓ)` and must return
    /// `g(x) e^ℓ`, written so that it stays finite when `x` overflows.
    pub fn stieltjes_integral<G: Fn(f64, f64) -> f64>(&self, g: G, center: f64) -> Result<f64> {
        let x0 = self.stieltjes_support_start();
        let r = quadrature::integrate_log_axis_ln(
            |ell| {
                let x = x0 + ell.exp();
                g(x, ell) * self.stieltjes_density_log(ell)
            },
            center.max(1e-300).ln(),
            Tolerance::new(0.0, 1e-11),
        )?;
        Ok(r.value)
    }

    /// Lévy density `μ(t)` of the subordinator.
    pub fn levy_density_mu(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("Levy density needs t > 0, got {t}")));
        }
        match self.kind {
            ModelKind::Stable { alpha } => {
                let a = 0.5 * alpha;
                Ok(self.scale * a / gamma(1.0 - a) * t.powf(-1.0 - a))
            }
            _ if !(1e-250..=1e250).contains(&t) => Err(Error::Range(format!(
                "Levy density not evaluated at t={t:e}"
            ))),
            _ => {
                let x0 = self.stieltjes_support_start();
                self.stieltjes_integral(
                    |x, ell| {
                        let ln_x = ell + (x0 * (-ell).exp()).ln_1p();
                        (ln_x + ell - x * t).exp()
                    },
                    1.0 / t,
                )
            }
        }
    }

    /// Tail mass `μ(ε, ∞)`.
    pub fn levy_tail(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("tail needs eps > 0, got {eps}")));
        }
        match self.kind {
            ModelKind::Stable { alpha } => {
                let a = 0.5 * alpha;
                Ok(self.scale * eps.powf(-a) / gamma(1.0 - a))
            }
            _ => self.stieltjes_integral(|x, ell| (ell - x * eps).exp(), 1.0 / eps),
        }
    }

    /// Mean of the jumps below `ε`: `∫_0^ε t μ(t) dt`.
    pub fn small_jump_mean(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!(
                "compensation needs eps > 0, got {eps}"
            )));
        }
        match self.kind {
            ModelKind::Stable { alpha } => {
                let a = 0.5 * alpha;
                Ok(self.scale * a / gamma(1.0 - a) * eps.powf(1.0 - a) / (1.0 - a))
            }
            _ => {
                let x0 = self.stieltjes_support_start();
                self.stieltjes_integral(
                    |x, ell| one_minus_exp_poly(x * eps) / (1.0 + x0 * (-ell).exp()),
                    1.0 / eps,
                )
            }
        }
    }

    /// Checks positivity, monotonicity and concavity of `φ` and the sign
    /// and monotonicity of `H` on the given grid.
    pub fn check_invariants(&self, grid: &[f64]) -> Result<()> {
        let mut sorted: Vec<f64> = grid.iter().copied().filter(|&l| l > 0.0).collect();
        sorted.sort_by(f64::total_cmp);
        for &l in &sorted {
            let (p, dp, h) = (self.phi(l), self.phi_prime(l), self.h(l));
            if !(p > 0.0 && dp > 0.0) {
                return Err(Error::ModelConsistency(format!(
                    "phi({l:e})={p:e}, phi'({l:e})={dp:e} must be positive"
                )));
            }
            if h < -1e-12 * p {
                return Err(Error::ModelConsistency(format!("H({l:e})={h:e} < 0")));
            }
            // second difference on a local log stencil
            let (lm, lp) = (l / 1.01, l * 1.01);
            let (fm, f0, fp) = (self.phi(lm), p, self.phi(lp));
            let chord = fm + (fp - fm) * (l - lm) / (lp - lm);
            if f0 < chord - 1e-10 * f0 {
                return Err(Error::ModelConsistency(format!(
                    "phi not concave near {l:e}"
                )));
            }
        }
        for w in sorted.windows(2) {
            if self.h(w[1]) < self.h(w[0]) * (1.0 - 1e-12) {
                return Err(Error::ModelConsistency(format!(
                    "H decreases between {:e} and {:e}",
                    w[0], w[1]
                )));
            }
        }
        if self.normalized && (self.phi(1.0) - 1.0).abs() > 1e-12 {
            return Err(Error::ModelConsistency(
                "normalized model with phi(1) != 1".into(),
            ));
        }
        Ok(())
    }

    fn raw_phi(&self, lambda: f64) -> f64 {
        match self.kind {
            ModelKind::Stable { alpha } => lambda.powf(0.5 * alpha),
            ModelKind::LogExampleI { beta } => lambda / lambda.powf(0.5 * beta).ln_1p(),
            ModelKind::LogExampleII => {
                if lambda < SERIES_CUTOFF {
                    series(lambda, |n, g| g * lambda.powi(n as i32), 1)
                } else {
                    lambda / lambda.ln_1p() - 1.0
                }
            }
        }
    }

    fn raw_phi_prime(&self, lambda: f64) -> f64 {
        match self.kind {
            ModelKind::Stable { alpha } => {
                let a = 0.5 * alpha;
                a * lambda.powf(a - 1.0)
            }
            ModelKind::LogExampleI { beta } => {
                let b = 0.5 * beta;
                let w = lambda.powf(b);
                let l = w.ln_1p();
                1.0 / l - b * w / ((1.0 + w) * l * l)
            }
            ModelKind::LogExampleII => {
                if lambda < SERIES_CUTOFF {
                    series(lambda, |n, g| n as f64 * g * lambda.powi(n as i32 - 1), 1)
                } else {
                    let l = lambda.ln_1p();
                    1.0 / l - lambda / ((1.0 + lambda) * l * l)
                }
            }
        }
    }

    fn raw_h(&self, lambda: f64) -> f64 {
        match self.kind {
            ModelKind::Stable { alpha } => (1.0 - 0.5 * alpha) * lambda.powf(0.5 * alpha),
            ModelKind::LogExampleI { beta } => {
                let b = 0.5 * beta;
                let w = lambda.powf(b);
                let l = w.ln_1p();
                b * lambda * w / ((1.0 + w) * l * l)
            }
            ModelKind::LogExampleII => {
                if lambda < SERIES_CUTOFF {
                    series(
                        lambda,
                        |n, g| -((n as f64) - 1.0) * g * lambda.powi(n as i32),
                        2,
                    )
                } else {
                    let l = lambda.ln_1p();
                    lambda * lambda / ((1.0 + lambda) * l * l) - 1.0
                }
            }
        }
    }
}

fn series(_lambda: f64, term: impl Fn(usize, f64) -> f64, start: usize) -> f64 {
    // sum smallest terms first
    (start..GREGORY.len())
        .rev()
        .map(|n| term(n, GREGORY[n]))
        .sum()
}

/// `1 - e^{-y}(1 + y)` without cancellation for small `y`.
pub(crate) fn one_minus_exp_poly(y: f64) -> f64 {
    if y > 700.0 {
        1.0
    } else if y < 1e-2 {
        // Σ_{k≥2} (-1)^k (k-1) y^k / k!
        let mut term = y * y / 2.0;
        let mut sum = 0.0;
        for k in 2..12 {
            sum += term * (k as f64 - 1.0);
            term *= -y / (k as f64 + 1.0);
        }
        sum
    } else {
        -(-y).exp_m1() - y * (-y).exp()
    }
}

impl fmt::Display for SubordinatorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModelKind::Stable { alpha } => write!(f, "stable:alpha={alpha}")?,
            ModelKind::LogExampleI { beta } => write!(f, "log-example-i:beta={beta}")?,
            ModelKind::LogExampleII => write!(f, "log-example-ii")?,
        }
        if self.normalized {
            let sep = if matches!(self.kind, ModelKind::LogExampleII) {
                ':'
            } else {
                ','
            };
            write!(f, "{sep}normalized=true")?;
        }
        Ok(())
    }
}

impl FromStr for SubordinatorModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (family, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = std::collections::BTreeMap::new();
        for kv in rest.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("malformed model parameter '{kv}' in '{s}'"))
            })?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take_f64 = |key: &str| -> Result<f64> {
            let v = params
                .remove(key)
                .ok_or_else(|| Error::Config(format!("model '{s}' needs parameter '{key}'")))?;
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad value '{v}' for '{key}' in '{s}'")))
        };
        let model = match family.trim() {
            "stable" => Self::stable(take_f64("alpha")?),
            "log-example-i" => Self::log_example_i(take_f64("beta")?),
            "log-example-ii" => Ok(Self::log_example_ii()),
            other => return Err(Error::Config(format!("unknown model family '{other}'"))),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        let normalize = match params.remove("normalized").as_deref() {
            None | Some("false") => false,
            Some("true") => true,
            Some(v) => return Err(Error::Config(format!("bad value '{v}' for 'normalized'"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(Error::Config(format!(
                "unknown parameter '{k}' for model '{family}'"
            )));
        }
        Ok(if normalize { model.normalized() } else { model })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn finite_or_range(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Range(format!("{name} overflowed to {v:e}")))
    }
}

pub fn eval_phi(model: &SubordinatorModel, lambda: f64) -> Result<f64> {
    check_positive("lambda", lambda)?;
    Ok(model.phi(lambda))
}

/// `H(λ)`; the closed form is cross-checked against `φ - λφ'`.
pub fn eval_h(model: &SubordinatorModel, lambda: f64) -> Result<f64> {
    check_positive("lambda", lambda)?;
    let p = model.phi(lambda);
    let direct = p - lambda * model.phi_prime(lambda);
    if direct < -1e-12 * p.max(1.0) {
        return Err(Error::ModelConsistency(format!(
            "phi - lambda phi' = {direct:e} < 0 at lambda={lambda:e}"
        )));
    }
    let h = model.h(lambda);
    if h < -1e-12 {
        return Err(Error::ModelConsistency(format!(
            "H({lambda:e}) = {h:e} < 0"
        )));
    }
    Ok(h.max(0.0))
}

pub fn eval_big_phi(model: &SubordinatorModel, r: f64) -> Result<f64> {
    check_positive("r", r)?;
    finite_or_range("Phi(r)", model.big_phi(r))
}

pub fn eval_psi(model: &SubordinatorModel, r: f64) -> Result<f64> {
    check_positive("r", r)?;
    finite_or_range("psi(r)", model.psi(r))
}

pub fn invert_phi(model: &SubordinatorModel, y: f64) -> Result<f64> {
    model.phi_inv(y)
}

pub fn invert_big_phi(model: &SubordinatorModel, s: f64) -> Result<f64> {
    model.big_phi_inv(s)
}

/// Fits weak lower/upper scaling witnesses for `φ` or `H` on a grid.
///
/// The exponents are the extreme grid values of `ln(f(λt)/f(λ)) / ln t`
/// widened by a `1e-9` multiplicative slack; the prefactors are then set so
/// the certificate holds exactly at every grid point.
pub fn estimate_scaling(
    model: &SubordinatorModel,
    target: ScalingTarget,
    a: f64,
    lambda_grid: &[f64],
    t_grid: &[f64],
) -> Result<ScalingCertificate> {
    if !(a >= 0.0) {
        return Err(Error::Domain(format!("cutoff a={a} must be >= 0")));
    }
    if lambda_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Domain("empty scaling grid".into()));
    }
    let f = |l: f64| match target {
        ScalingTarget::Phi => model.phi(l),
        ScalingTarget::H => model.h(l),
    };
    let mut grid = Vec::with_capacity(lambda_grid.len() * t_grid.len());
    let mut inf = f64::INFINITY;
    let mut sup = f64::NEG_INFINITY;
    for &l in lambda_grid {
        if !(l > a) {
            return Err(Error::Domain(format!("grid lambda={l} must exceed a={a}")));
        }
        let base = f(l);
        for &t in t_grid {
            if !(t >= 1.0) {
                return Err(Error::Domain(format!("grid t={t} must be >= 1")));
            }
            let ratio = f(l * t) / base;
            if !(ratio >= 1.0 - 1e-12) || !ratio.is_finite() {
                return Err(Error::ModelConsistency(format!(
                    "{target:?} not monotone: f({:e})/f({l:e}) = {ratio:e}",
                    l * t
                )));
            }
            grid.push((l, t));
            if t > 1.0 {
                let idx = ratio.ln() / t.ln();
                inf = inf.min(idx);
                sup = sup.max(idx);
            }
        }
    }
    if !inf.is_finite() {
        return Err(Error::Domain("t grid needs at least one t > 1".into()));
    }
    let slack = 1e-9;
    let gamma_hat = inf - slack * inf.abs();
    let delta_hat = sup + slack * sup.abs();
    let mut c_l_hat: f64 = 1.0;
    let mut c_u_hat: f64 = 1.0;
    for &(l, t) in &grid {
        let ratio = f(l * t) / f(l);
        c_l_hat = c_l_hat.min(ratio / t.powf(gamma_hat));
        c_u_hat = c_u_hat.max(ratio / t.powf(delta_hat));
    }
    Ok(ScalingCertificate {
        target,
        a,
        gamma_hat,
        c_l_hat,
        delta_hat,
        c_u_hat,
        grid,
    })
}

impl ScalingCertificate {
    /// Re-evaluates the certificate inequality at every grid point.
    pub fn holds_for(&self, model: &SubordinatorModel) -> bool {
        let f = |l: f64| match self.target {
            ScalingTarget::Phi => model.phi(l),
            ScalingTarget::H => model.h(l),
        };
        self.grid.iter().all(|&(l, t)| {
            let ratio = f(l * t) / f(l);
            self.c_l_hat * t.powf(self.gamma_hat) <= ratio
                && ratio <= self.c_u_hat * t.powf(self.delta_hat)
        })
    }
}

/// `∫_0^r s/ψ(s) ds`, computed in `w = ln(r/s)` folded onto `(0, 1]`.
pub fn integral_s_over_psi(model: &SubordinatorModel, r: f64) -> Result<f64> {
    check_positive("r", r)?;
    let ell0 = -2.0 * r.ln();
    // with s = r e^{-w}: s H(s^{-2}) ds = (H/λ)(ln λ) dw, λ = r^{-2} e^{2w}
    let res = quadrature::integrate(
        |u: f64| {
            let w = (1.0 - u) / u;
            model.h_over_lambda_log(ell0 + 2.0 * w) / (u * u)
        },
        0.0,
        1.0,
        Tolerance::new(0.0, 1e-12),
    )?;
    Ok(res.value)
}

/// Relative discrepancy between `Φ(r)` and `r² / (2 ∫_0^r s/ψ(s) ds)`.
pub fn check_identity_phi_psi(model: &SubordinatorModel, r: f64) -> Result<f64> {
    let phi_r = eval_big_phi(model, r)?;
    let integral = integral_s_over_psi(model, r)?;
    let rhs = r * r / (2.0 * integral);
    Ok((phi_r - rhs).abs() / phi_r)
}

/// Two-sided envelope `(c⁻¹ Φ(r)^{1/2}, c Φ(r)^{1/2})` for the renewal
/// function of the ladder-height process.
pub fn renewal_envelope(model: &SubordinatorModel, r: f64, c: f64) -> Result<(f64, f64)> {
    let root = eval_big_phi(model, r)?.sqrt();
    Ok((root / c, root * c))
}

/// The three catalog families at representative parameters.
pub fn catalog() -> Vec<SubordinatorModel> {
    vec![
        SubordinatorModel::stable(0.6).unwrap(),
        SubordinatorModel::stable(1.0).unwrap(),
        SubordinatorModel::stable(1.4).unwrap(),
        SubordinatorModel::log_example_i(1.0).unwrap(),
        SubordinatorModel::log_example_ii(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    #[test]
    fn phi_examples() {
        let st = SubordinatorModel::stable(1.0).unwrap();
        assert!(close(eval_phi(&st, 4.0).unwrap(), 2.0, 1e-15));
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        assert!(close(eval_phi(&ex, 1.0).unwrap(), 1.0 / 2f64.ln(), 1e-14));
        assert!(matches!(eval_phi(&st, 0.0), Err(Error::Domain(_))));
        assert!(matches!(eval_phi(&st, -1.0), Err(Error::Domain(_))));
        for m in catalog() {
            let vals: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8].iter().map(|&l| m.phi(l)).collect();
            assert!(
                vals.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0),
                "{m}: {vals:?}"
            );
            assert!(m.phi(1e-40) < 1e-6);
        }
    }

    #[test]
    fn h_examples() {
        let st = SubordinatorModel::stable(1.0).unwrap();
        assert!(close(eval_h(&st, 4.0).unwrap(), 1.0, 1e-14));
        let st = SubordinatorModel::stable(1.99).unwrap();
        assert!(close(eval_h(&st, 1.0).unwrap(), 0.005, 1e-10));
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        let ratios: Vec<f64> = log_grid(2.0, 1e6, 60)
            .into_iter()
            .map(|l| ex.h(l) * l.ln().powi(2) / l)
            .collect();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(lo > 0.0 && hi.is_finite());
        // H(λ) ≍ λ/(log λ)²
        assert!(hi / lo < 20.0, "{lo} {hi}");
    }

    #[test]
    fn closed_form_h_matches_difference() {
        for m in catalog() {
            for l in log_grid(1e-6, 1e6, 49) {
                let direct = m.phi(l) - l * m.phi_prime(l);
                let h = m.h(l);
                assert!(
                    (h - direct).abs() <= 1e-9 * m.phi(l),
                    "{m} at {l}: {h} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn gregory_series_matches_direct_formula() {
        let m = SubordinatorModel::log_example_ii();
        let l = SERIES_CUTOFF * (1.0 - 1e-12);
        let direct = l / l.ln_1p() - 1.0;
        assert!(close(m.phi(l), direct, 1e-11));
        let ld = l.ln_1p();
        assert!(close(
            m.phi_prime(l),
            1.0 / ld - l / ((1.0 + l) * ld * ld),
            1e-10
        ));
        // H ≈ λ²/12 for small λ
        assert!(close(m.h(1e-6), 1e-12 / 12.0, 1e-5));
    }

    #[test]
    fn h_over_lambda_log_agrees() {
        for m in catalog() {
            for l in log_grid(1e-3, 1e8, 23) {
                let a = m.h_over_lambda_log(l.ln());
                let b = m.h(l) / l;
                assert!(close(a, b, 1e-9), "{m} at {l}: {a} vs {b}");
            }
            assert!(m.h_over_lambda_log(5000.0).is_finite());
        }
    }

    #[test]
    fn scale_function_examples() {
        let st = SubordinatorModel::stable(1.0).unwrap();
        assert!(close(eval_big_phi(&st, 0.3).unwrap(), 0.3, 1e-14));
        // H(λ) = λ^{1/2}/2 gives ψ(r) = 2r
        assert!(close(eval_psi(&st, 0.3).unwrap(), 0.6, 1e-14));
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        let q: Vec<f64> = log_grid(1e-12, 0.5, 80)
            .into_iter()
            .map(|r| ex.big_phi(r) / (r * r * (1.0 / r).ln()))
            .collect();
        let max = q.iter().cloned().fold(0.0, f64::max);
        let min = q.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0 && max / min < 5.0);
        assert!(matches!(eval_big_phi(&st, 0.0), Err(Error::Domain(_))));
        assert!(matches!(eval_big_phi(&st, 1e-200), Err(Error::Range(_))));
    }

    #[test]
    fn inverse_examples() {
        let st = SubordinatorModel::stable(1.0).unwrap();
        assert!(close(invert_phi(&st, 2.0).unwrap(), 4.0, 1e-12));
        assert!(close(invert_big_phi(&st, 0.07).unwrap(), 0.07, 1e-12));
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        let l = invert_phi(&ex, 100.0).unwrap();
        // y log(1 + λ^{1/2}) = λ
        assert!((100.0 * l.sqrt().ln_1p() - l).abs() < 1e-8 * l);
        assert!(matches!(invert_phi(&st, 0.0), Err(Error::Domain(_))));
        assert!(matches!(invert_phi(&st, 1e200), Err(Error::Range(_))));
    }

    #[test]
    fn inverse_roundtrip_all_models() {
        for m in catalog() {
            for l in log_grid(1e-4, 1e6, 41) {
                let back = m.phi_inv(m.phi(l)).unwrap();
                assert!(close(back, l, 1e-8), "{m} {l} {back}");
            }
        }
    }

    #[test]
    fn scaling_certificates_for_power_laws() {
        let st = SubordinatorModel::stable(1.2).unwrap();
        let lg = log_grid(1e-3, 1e4, 15);
        let tg = log_grid(1.0, 1e3, 12);
        for target in [ScalingTarget::Phi, ScalingTarget::H] {
            let cert = estimate_scaling(&st, target, 0.0, &lg, &tg).unwrap();
            assert!((cert.gamma_hat - 0.6).abs() < 1e-3);
            assert!((cert.delta_hat - 0.6).abs() < 1e-3);
            assert!(cert.holds_for(&st));
        }
    }

    #[test]
    fn scaling_certificate_log_example() {
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        let lg = log_grid(2.0 * 1.0001, 1e6, 30);
        let tg = log_grid(1.0, 1e4, 20);
        let cert = estimate_scaling(&ex, ScalingTarget::H, 2.0, &lg, &tg).unwrap();
        assert!(cert.gamma_hat > 0.5, "{}", cert.gamma_hat);
        assert!(cert.delta_hat < 2.0, "{}", cert.delta_hat);
        assert!(cert.holds_for(&ex));
    }

    #[test]
    fn scaling_rejects_bad_grids() {
        let st = SubordinatorModel::stable(1.2).unwrap();
        assert!(estimate_scaling(&st, ScalingTarget::Phi, 1.0, &[0.5], &[2.0]).is_err());
        assert!(estimate_scaling(&st, ScalingTarget::Phi, 0.0, &[0.5], &[0.5]).is_err());
    }

    #[test]
    fn identity_examples() {
        let st = SubordinatorModel::stable(1.0).unwrap();
        assert!(check_identity_phi_psi(&st, 0.3).unwrap() < 1e-10);
        let st = SubordinatorModel::stable(0.5).unwrap();
        assert!(check_identity_phi_psi(&st, 1.0).unwrap() < 1e-8);
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        assert!(check_identity_phi_psi(&ex, 0.25).unwrap() < 1e-6);
    }

    #[test]
    fn identity_on_log_grid_all_models() {
        for m in catalog() {
            for r in log_grid(1e-3, 1.0, 13) {
                let e = check_identity_phi_psi(&m, r).unwrap();
                assert!(e < 1e-6, "{m} r={r} err={e}");
            }
        }
    }

    #[test]
    fn renewal_examples() {
        let st = SubordinatorModel::stable(1.0).unwrap();
        let (lo, hi) = renewal_envelope(&st, 0.09, 1.0).unwrap();
        assert!(close(lo, 0.3, 1e-14) && close(hi, 0.3, 1e-14));
        let (_, a) = renewal_envelope(&st, 0.1, 2.0).unwrap();
        let (_, b) = renewal_envelope(&st, 0.2, 2.0).unwrap();
        assert!(a <= b);
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        let (lo, _) = renewal_envelope(&ex, 0.1, 1.0).unwrap();
        assert!((lo * lo - eval_big_phi(&ex, 0.1).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn stieltjes_representation_reproduces_phi() {
        for m in catalog() {
            for l in [0.01, 0.5, 3.0, 200.0] {
                let x0 = m.stieltjes_support_start();
                let v = m
                    .stieltjes_integral(|_, ell| l / ((l + x0) * (-ell).exp() + 1.0), l)
                    .unwrap();
                assert!(close(v, m.phi(l), 1e-8), "{m} at {l}: {v} vs {}", m.phi(l));
            }
        }
    }

    #[test]
    fn levy_measure_reproduces_h() {
        // H(λ) = ∫ (1 - e^{-λt}(1 + λt)) μ(t) dt, computed from μ on a log axis
        for m in catalog() {
            for l in [0.5, 2.0, 40.0] {
                let v = quadrature::integrate_log_axis(
                    |t| one_minus_exp_poly(l * t) * m.levy_density_mu(t).unwrap_or(f64::NAN),
                    1.0 / l,
                    Tolerance::new(0.0, 1e-9),
                )
                .unwrap()
                .value;
                assert!(close(v, m.h(l), 1e-6), "{m} {l}: {v} vs {}", m.h(l));
            }
        }
    }

    #[test]
    fn stable_levy_closed_forms_match_stieltjes_route() {
        let m = SubordinatorModel::stable(1.0).unwrap();
        for t in [1e-3, 0.1, 2.0] {
            let via = m
                .stieltjes_integral(|x, ell| x * (ell - x * t).exp(), 1.0 / t)
                .unwrap();
            assert!(close(via, m.levy_density_mu(t).unwrap(), 1e-8));
            let tail = m
                .stieltjes_integral(|x, ell| (ell - x * t).exp(), 1.0 / t)
                .unwrap();
            assert!(close(tail, m.levy_tail(t).unwrap(), 1e-8));
            let mean = m
                .stieltjes_integral(
                    |x, ell| one_minus_exp_poly(x * t) * (ell.exp() / x),
                    1.0 / t,
                )
                .unwrap();
            assert!(close(mean, m.small_jump_mean(t).unwrap(), 1e-8));
        }
    }

    #[test]
    fn parse_and_display() {
        let m: SubordinatorModel = "stable:alpha=1.2".parse().unwrap();
        assert_eq!(m, SubordinatorModel::stable(1.2).unwrap());
        assert_eq!(m.id(), "stable:alpha=1.2");
        let m: SubordinatorModel = "log-example-i:beta=1.0".parse().unwrap();
        assert_eq!(m.id(), "log-example-i:beta=1");
        let m: SubordinatorModel = "log-example-ii:normalized=true".parse().unwrap();
        assert!(m.is_normalized());
        assert!(close(m.phi(1.0), 1.0, 1e-14));
        assert_eq!(m.id().parse::<SubordinatorModel>().unwrap(), m);
        assert!("stable".parse::<SubordinatorModel>().is_err());
        assert!("stable:alpha=2.5".parse::<SubordinatorModel>().is_err());
        assert!("gamma:a=1".parse::<SubordinatorModel>().is_err());
        assert!("stable:alpha=1,foo=2".parse::<SubordinatorModel>().is_err());
    }

    #[test]
    fn invariants_hold_on_catalog() {
        let grid = log_grid(1e-6, 1e8, 60);
        for m in catalog() {
            m.check_invariants(&grid).unwrap();
            m.normalized().check_invariants(&grid).unwrap();
            assert_eq!(m.drift(), 0.0);
        }
    }

    #[test]
    fn psi_dominates_phi_and_both_increase() {
        for m in catalog() {
            let rs = log_grid(1e-4, 10.0, 50);
            for w in rs.windows(2) {
                assert!(m.big_phi(w[1]) > m.big_phi(w[0]));
                assert!(m.psi(w[1]) > m.psi(w[0]));
            }
            for &r in &rs {
                assert!(m.psi(r) >= m.big_phi(r));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_model() -> impl Strategy<Value = SubordinatorModel> {
            prop_oneof![
                (0.05f64..1.95).prop_map(|a| SubordinatorModel::stable(a).unwrap()),
                (0.05f64..1.95).prop_map(|b| SubordinatorModel::log_example_i(b).unwrap()),
                Just(SubordinatorModel::log_example_ii()),
            ]
        }

        proptest! {
            #[test]
            fn sub_linear_growth(m in any_model(), ll in -8.0f64..8.0, lx in 0.0f64..6.0) {
                let (l, x) = (10f64.powf(ll), 10f64.powf(lx));
                prop_assert!(m.phi(l * x) <= x * m.phi(l) * (1.0 + 1e-12));
                prop_assert!(m.h(l * x) <= x * x * m.h(l) * (1.0 + 1e-12) + 1e-300);
            }

            #[test]
            fn phi_inverse_roundtrip(m in any_model(), ll in -4.0f64..6.0) {
                let l = 10f64.powf(ll);
                let back = m.phi_inv(m.phi(l)).unwrap();
                prop_assert!((back - l).abs() <= 1e-8 * l);
            }
        }
    }
}
