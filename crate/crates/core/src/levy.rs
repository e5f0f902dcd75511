//! Jump density of the subordinate process and samplers for subordinator
//! increments.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Open01, Poisson};
use serde::{Deserialize, Serialize};

use crate::bernstein::{ModelKind, SubordinatorModel};
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::rng::{self, CHUNK};

/// Default small-jump cutoff for the compound-Poisson scheme.
pub const DEFAULT_EPSILON: f64 = 1e-4;

const TABLE_POINTS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Exact one-sided stable draws (stable models only).
    ExactStable,
    /// Jumps of size at least `epsilon` plus the mean of the smaller ones.
    CppTruncation { epsilon: f64 },
}

/// Draws subordinator increments from a fixed `(seed, stream_id)` stream.
#[derive(Debug, Clone)]
pub struct SubordinatorSampler {
    model: SubordinatorModel,
    scheme: Scheme,
    seed: u64,
    stream_id: u64,
    cpp: Option<Arc<Truncation>>,
}

#[derive(Debug)]
struct Truncation {
    epsilon: f64,
    rate: f64,
    drift: f64,
    /// `None` for stable models, whose large jumps are Pareto.
    table: Option<MixingTable>,
}

/// Inverse-CDF table for the mixing variable `x` in the representation
/// `μ(t) = ∫ x e^{-xt} ν(dx)`: a jump above `ε` is `ε + E/x` with `x`
/// drawn from `e^{-xε} ν(dx)`.
#[derive(Debug)]
struct MixingTable {
    x0: f64,
    ell: Vec<f64>,
    cdf: Vec<f64>,
}

impl MixingTable {
    fn build(model: &SubordinatorModel, eps: f64) -> Result<Self> {
        let x0 = model.stieltjes_support_start();
        let weight = |ell: f64| {
            let x = x0 + ell.exp();
            let w = (ell - x * eps).exp() * model.stieltjes_density(x);
            if w.is_finite() {
                w
            } else {
                0.0
            }
        };
        let hi = (60.0 / eps).ln();
        let peak = (1.0 / eps).ln().max(0.0);
        let mut lo = peak - 40.0;
        let ref_w = weight(peak).max(weight(0.0)).max(f64::MIN_POSITIVE);
        while lo > -700.0 && weight(lo) > 1e-14 * ref_w {
            lo -= 40.0;
        }
        let h = (hi - lo) / (TABLE_POINTS - 1) as f64;
        let ell: Vec<f64> = (0..TABLE_POINTS).map(|i| lo + h * i as f64).collect();
        let w: Vec<f64> = ell.iter().map(|&l| weight(l)).collect();
        let mut cdf = vec![0.0; TABLE_POINTS];
        for i in 1..TABLE_POINTS {
            cdf[i] = cdf[i - 1] + 0.5 * h * (w[i - 1] + w[i]);
        }
        let total = cdf[TABLE_POINTS - 1];
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numeric(format!(
                "empty jump table for {model} at eps={eps:e}"
            )));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { x0, ell, cdf })
    }

    fn draw_x(&self, u: f64) -> f64 {
        let i = self
            .cdf
            .partition_point(|&c| c < u)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        let ell = self.ell[i - 1] + frac * (self.ell[i] - self.ell[i - 1]);
        self.x0 + ell.exp()
    }
}

impl SubordinatorSampler {
    pub fn new(
        model: SubordinatorModel,
        scheme: Scheme,
        seed: u64,
        stream_id: u64,
    ) -> Result<Self> {
        let cpp = match scheme {
            Scheme::ExactStable => {
                if !model.is_stable() {
                    return Err(Error::Unsupported(format!(
                        "exact sampling needs a stable model, got {model}"
                    )));
                }
                None
            }
            Scheme::CppTruncation { epsilon } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::Domain(format!("epsilon={epsilon} must be positive")));
                }
                let table = if model.is_stable() {
                    None
                } else {
                    Some(MixingTable::build(&model, epsilon)?)
                };
                Some(Arc::new(Truncation {
                    epsilon,
                    rate: model.levy_tail(epsilon)?,
                    drift: model.small_jump_mean(epsilon)?,
                    table,
                }))
            }
        };
        Ok(Self {
            model,
            scheme,
            seed,
            stream_id,
            cpp,
        })
    }

    /// Exact sampling for stable models, truncation at the default cutoff
    /// otherwise.
    pub fn for_model(model: SubordinatorModel, seed: u64) -> Result<Self> {
        let scheme = if model.is_stable() {
            Scheme::ExactStable
        } else {
            Scheme::CppTruncation {
                epsilon: DEFAULT_EPSILON,
            }
        };
        Self::new(model, scheme, seed, 0)
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn model(&self) -> &SubordinatorModel {
        &self.model
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Draws one increment `S_{t+dt} - S_t`.
    pub fn increment<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64) -> f64 {
        if dt <= 0.0 {
            return 0.0;
        }
        match (&self.scheme, &self.cpp) {
            (Scheme::ExactStable, _) => {
                let ModelKind::Stable { alpha } = self.model.kind() else {
                    unreachable!("checked at construction")
                };
                let a = 0.5 * alpha;
                (self.model.scale() * dt).powf(1.0 / a) * stable_unit(rng, a)
            }
            (Scheme::CppTruncation { .. }, Some(tr)) => {
                let mut s = tr.drift * dt;
                let mean = tr.rate * dt;
                let count = if mean > 0.0 {
                    Poisson::new(mean)
                        .map(|p| p.sample(rng) as u64)
                        .unwrap_or(0)
                } else {
                    0
                };
                for _ in 0..count {
                    s += self.large_jump(rng, tr);
                }
                s
            }
            (Scheme::CppTruncation { .. }, None) => unreachable!("built at construction"),
        }
    }

    fn large_jump<R: Rng + ?Sized>(&self, rng: &mut R, tr: &Truncation) -> f64 {
        match (&tr.table, self.model.kind()) {
            (None, ModelKind::Stable { alpha }) => {
                let u: f64 = rng.sample(Open01);
                tr.epsilon * u.powf(-2.0 / alpha)
            }
            (Some(table), _) => {
                let x = table.draw_x(rng.sample(Open01));
                let e: f64 = rng.sample(Exp1);
                tr.epsilon + e / x
            }
            (None, _) => unreachable!("non-stable models carry a table"),
        }
    }

    /// Values of one path at the (strictly increasing) times `t_grid`.
    pub fn path<R: Rng + ?Sized>(&self, rng: &mut R, t_grid: &[f64]) -> Vec<f64> {
        let mut s = 0.0;
        let mut prev = 0.0;
        t_grid
            .iter()
            .map(|&t| {
                s += self.increment(rng, t - prev);
                prev = t;
                s
            })
            .collect()
    }

    /// `n` independent draws of `S_t`.
    pub fn sample_s(&self, t: f64, n: usize) -> Result<Vec<f64>> {
        if !(t > 0.0) || n == 0 {
            return Err(Error::Domain(format!(
                "need t > 0 and n >= 1, got t={t}, n={n}"
            )));
        }
        let chunks = rng::par_chunks(self.seed, self.stream_id, n, CHUNK, |r, _, len| {
            (0..len).map(|_| self.increment(r, t)).collect::<Vec<_>>()
        });
        Ok(chunks.concat())
    }

    /// `n` independent paths observed on `t_grid`.
    pub fn sample_path_increments(&self, t_grid: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
        check_grid(t_grid)?;
        let chunks = rng::par_chunks(self.seed, self.stream_id, n, CHUNK, |r, _, len| {
            (0..len).map(|_| self.path(r, t_grid)).collect::<Vec<_>>()
        });
        Ok(chunks.concat())
    }

    /// A generator for chunk `index` of this sampler's stream.
    pub fn chunk_rng(&self, index: u64) -> ChaCha8Rng {
        rng::stream_rng(self.seed, rng::derive_stream(self.stream_id, index))
    }
}

pub fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || !(t_grid[0] > 0.0) {
        return Err(Error::Domain(
            "time grid must be nonempty and start after 0".into(),
        ));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// One-sided stable variable with `E e^{-λS} = e^{-λ^a}`, `0 < a < 1`,
/// from a uniform angle and an exponential (Kanter's representation).
pub fn stable_unit<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    let u: f64 = PI * rng.sample::<f64, _>(Open01);
    let e: f64 = rng.sample(Exp1);
    let ln_a = (a * (a * u).sin().ln() + (1.0 - a) * ((1.0 - a) * u).sin().ln() - u.sin().ln())
        / (1.0 - a);
    ((1.0 - a) / a * (ln_a - e.ln())).exp()
}

/// `j(r) = ∫_0^∞ (4πs)^{-d/2} e^{-r²/(4s)} μ(s) ds`.
pub fn levy_density_j(model: &SubordinatorModel, r: f64, d: usize) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) || d == 0 {
        return Err(Error::Domain(format!(
            "need r > 0 and d >= 1, got r={r}, d={d}"
        )));
    }
    let half_d = 0.5 * d as f64;
    let res = quadrature::integrate_log_axis(
        |s| {
            let g = (-half_d * (4.0 * PI * s).ln() - r * r / (4.0 * s)).exp();
            if g == 0.0 {
                return 0.0;
            }
            match model.levy_density_mu(s) {
                Ok(m) => g * m,
                Err(_) => f64::NAN,
            }
        },
        0.25 * r * r,
        Tolerance::new(0.0, 1e-9),
    )?;
    if !(res.value > 0.0) {
        return Err(Error::Numeric(format!(
            "jump density non-positive at r={r}"
        )));
    }
    Ok(res.value)
}

/// `max_r j(r) / j(r+1)` over a grid in `(1, ∞)`.
pub fn check_jdouble(model: &SubordinatorModel, d: usize, r_grid: &[f64]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &r in r_grid {
        if !(r > 1.0) {
            return Err(Error::Domain(format!("doubling grid needs r > 1, got {r}")));
        }
        c = c.max(levy_density_j(model, r, d)? / levy_density_j(model, r + 1.0, d)?);
    }
    if !c.is_finite() {
        return Err(Error::Numeric("doubling ratio is not finite".into()));
    }
    Ok(c)
}

/// `sup_r j(r) r^d / φ(r⁻²)` over a grid.
pub fn jump_upper_constant(model: &SubordinatorModel, d: usize, r_grid: &[f64]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for &r in r_grid {
        let j = levy_density_j(model, r, d)?;
        c = c.max(j * r.powi(d as i32) / model.phi(1.0 / (r * r)));
    }
    Ok(c)
}

/// One cell of the concentration surface for `S_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCell {
    pub rho: f64,
    pub t: f64,
    pub probability: f64,
}

/// Empirical `P(1/(2φ⁻¹(1/t)) ≤ S_t ≤ 1/φ⁻¹(ρ/t))` over `ρ × t`.
pub fn concentration_surface(
    sampler: &SubordinatorSampler,
    rhos: &[f64],
    ts: &[f64],
    n: usize,
) -> Result<Vec<ConcentrationCell>> {
    let model = sampler.model();
    let mut out = Vec::with_capacity(rhos.len() * ts.len());
    for (k, &t) in ts.iter().enumerate() {
        let draws = sampler
            .clone()
            .with_stream(rng::derive_stream(sampler.stream_id(), k as u64))
            .sample_s(t, n)?;
        let lower = 0.5 / model.phi_inv(1.0 / t)?;
        for &rho in rhos {
            let upper = 1.0 / model.phi_inv(rho / t)?;
            let hits = draws.iter().filter(|&&s| s >= lower && s <= upper).count();
            out.push(ConcentrationCell {
                rho,
                t,
                probability: hits as f64 / n as f64,
            });
        }
    }
    Ok(out)
}

/// The exponent actually simulated by the truncation scheme:
/// `λ m(ε) + ∫_ε^∞ (1 - e^{-λt}) μ(t) dt`.
pub fn truncated_exponent(model: &SubordinatorModel, epsilon: f64, lambda: f64) -> Result<f64> {
    // φ minus ∫_0^ε (1 - e^{-λt} - λt) μ(t) dt, taken on a log axis below ε
    let ln_eps = epsilon.ln();
    let defect = quadrature::integrate_to_infinity(
        |w| {
            let t = (ln_eps - w).exp();
            let y = lambda * t;
            // 1 - e^{-y} - y = -(y²/2 - y³/6 + ...)
            let g = if y < 1e-3 {
                -y * y * (0.5 - y / 6.0 + y * y / 24.0)
            } else {
                -(-y).exp_m1() - y
            };
            match model.levy_density_mu(t) {
                Ok(m) if (g * m * t).is_finite() => g * m * t,
                // only reachable deep in the t → 0 tail, where g vanishes
                _ => 0.0,
            }
        },
        0.0,
        Tolerance::new(0.0, 1e-10),
    )?;
    Ok(model.phi(lambda) + defect.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Moments;

    #[test]
    fn cauchy_jump_density() {
        let m = SubordinatorModel::stable(1.0).unwrap();
        for r in [0.05, 0.3, 1.0, 4.0] {
            let j = levy_density_j(&m, r, 1).unwrap();
            assert!(
                (j * PI * r * r - 1.0).abs() < 1e-6,
                "r={r}: {}",
                j * PI * r * r
            );
        }
        let js: Vec<f64> = [0.1, 0.2, 0.4]
            .iter()
            .map(|&r| levy_density_j(&m, r, 1).unwrap())
            .collect();
        assert!(js[0] > js[1] && js[1] > js[2]);
    }

    #[test]
    fn stable_jump_density_closed_form_d3() {
        // j(r) = α 2^{α-1} Γ((d+α)/2) / (π^{d/2} Γ(1-α/2)) r^{-d-α}
        use statrs::function::gamma::gamma;
        let alpha = 1.4;
        let m = SubordinatorModel::stable(alpha).unwrap();
        let r: f64 = 0.7;
        let exact = alpha * 2f64.powf(alpha - 1.0) * gamma((3.0 + alpha) / 2.0)
            / (PI.powf(1.5) * gamma(1.0 - alpha / 2.0))
            * r.powf(-3.0 - alpha);
        let j = levy_density_j(&m, r, 3).unwrap();
        assert!((j / exact - 1.0).abs() < 1e-6);
    }

    #[test]
    fn doubling_examples() {
        let m = SubordinatorModel::stable(1.0).unwrap();
        assert!((check_jdouble(&m, 1, &[2.0]).unwrap() - 2.25).abs() < 1e-3);
        let c2 = check_jdouble(&m, 1, &[2.0]).unwrap();
        let c10 = check_jdouble(&m, 1, &[10.0]).unwrap();
        assert!(c10 < c2);
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        let grid: Vec<f64> = (1..=10).map(|i| 1.0 + 1.9 * i as f64).collect();
        assert!(check_jdouble(&ex, 1, &grid).unwrap().is_finite());
    }

    #[test]
    fn jump_upper_constant_finite_and_stable() {
        let ex = SubordinatorModel::log_example_i(1.0).unwrap();
        let grid = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| 1e-3 * 1e4f64.powf(i as f64 / (n - 1) as f64))
                .collect()
        };
        let c1 = jump_upper_constant(&ex, 2, &grid(9)).unwrap();
        let c2 = jump_upper_constant(&ex, 2, &grid(17)).unwrap();
        assert!(c1.is_finite() && c1 > 0.0);
        assert!((c2 / c1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn stable_unit_half_is_levy() {
        // a = 1/2: S = 1/(2Z²), so P(S ≤ s) = 2(1 - Φ_N(1/√(2s)))
        let mut rng = rng::stream_rng(5, 0);
        let n = 20000;
        let below = (0..n).filter(|_| stable_unit(&mut rng, 0.5) <= 1.0).count() as f64 / n as f64;
        let exact = statrs::function::erf::erfc(0.5);
        assert!((below - exact).abs() < 4.0 * (exact * (1.0 - exact) / n as f64).sqrt());
    }

    fn laplace_ok(s: &SubordinatorSampler, t: f64, lambda: f64, n: usize) -> (bool, f64, f64) {
        let draws = s.sample_s(t, n).unwrap();
        let m: Moments = draws.iter().map(|&x| (-lambda * x).exp()).collect();
        let target = (-t * s.model().phi(lambda)).exp();
        (
            (m.mean - target).abs() <= 3.0 * m.stderr() + 1e-12,
            m.mean,
            target,
        )
    }

    #[test]
    fn laplace_transform_small() {
        for m in crate::bernstein::catalog() {
            let s = SubordinatorSampler::for_model(m, 11).unwrap();
            let (ok, got, want) = laplace_ok(&s, 1.0, 1.0, 20000);
            assert!(ok, "{m}: {got} vs {want}");
        }
    }

    #[test]
    fn samples_nonnegative_and_paths_monotone() {
        for m in crate::bernstein::catalog() {
            let s = SubordinatorSampler::for_model(m, 3).unwrap();
            let paths = s
                .sample_path_increments(&[0.1, 0.2, 0.5, 1.0], 200)
                .unwrap();
            assert!(paths
                .iter()
                .all(|p| p[0] >= 0.0 && p.windows(2).all(|w| w[1] >= w[0])));
        }
    }

    #[test]
    fn exact_scheme_rejects_non_stable() {
        let ex = SubordinatorModel::log_example_ii();
        assert!(matches!(
            SubordinatorSampler::new(ex, Scheme::ExactStable, 0, 0),
            Err(Error::Unsupported(_))
        ));
        assert!(
            SubordinatorSampler::new(ex, Scheme::CppTruncation { epsilon: 0.0 }, 0, 0).is_err()
        );
    }

    #[test]
    fn truncation_bias_shrinks_with_epsilon() {
        for m in crate::bernstein::catalog() {
            let bias: Vec<f64> = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&e| (truncated_exponent(&m, e, 2.0).unwrap() - m.phi(2.0)).abs())
                .collect();
            assert!(bias[0] > bias[1] && bias[1] > bias[2], "{m}: {bias:?}");
        }
    }

    #[test]
    fn stable_truncation_matches_closed_form_rate() {
        let m = SubordinatorModel::stable(1.0).unwrap();
        let s = SubordinatorSampler::new(m, Scheme::CppTruncation { epsilon: 1e-3 }, 1, 0).unwrap();
        let tr = s.cpp.as_ref().unwrap();
        assert!((tr.rate - 1e-3f64.powf(-0.5) / PI.sqrt()).abs() < 1e-9);
    }
}
