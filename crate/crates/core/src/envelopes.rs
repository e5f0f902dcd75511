//! Explicit two-sided envelopes: boundary factors, the factorized killed
//! kernel bound, Green function estimates, the `h_{T,d}` comparison, the
//! log-corrected closed forms for `λ/log(1+λ^{β/2})`-type exponents, the
//! principal-value identity, and a Monte Carlo Green function.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bernstein::SubordinatorModel;
use crate::dirichlet::{fit_decay, KillOptions};
use crate::domain::{distance, Domain};
use crate::error::{Error, Result};
use crate::free_kernel::{gaussian_kernel, global_term};
use crate::levy::SubordinatorSampler;
use crate::quadrature::{self, Tolerance};
use crate::rng::{self, CHUNK};
use crate::stats::Moments;

const ENV_TOL: Tolerance = Tolerance::new(0.0, 1e-8);

/// `1 ∧ √(Φ(δ)/t)`, zero at `δ = 0`.
pub fn boundary_factor(model: &SubordinatorModel, t: f64, delta: f64) -> Result<f64> {
    if !(t > 0.0) || !(delta >= 0.0) {
        return Err(Error::Domain(format!(
            "need t > 0, delta >= 0 (t={t}, delta={delta})"
        )));
    }
    if delta == 0.0 {
        return Ok(0.0);
    }
    if delta.is_infinite() {
        return Ok(1.0);
    }
    Ok((model.big_phi(delta) / t).sqrt().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeValues {
    pub lower: f64,
    pub upper: f64,
    pub a_l: f64,
    pub a_u: f64,
}

/// Factorized envelope from the boundary distances and `r = |x - y|`.
pub fn dirichlet_envelope_from_deltas(
    model: &SubordinatorModel,
    t: f64,
    r: f64,
    delta_x: f64,
    delta_y: f64,
    d: usize,
    a_l: f64,
    a_u: f64,
) -> Result<EnvelopeValues> {
    let f = boundary_factor(model, t, delta_x)? * boundary_factor(model, t, delta_y)?;
    Ok(EnvelopeValues {
        lower: f * global_term(model, t, r, d, a_l)?,
        upper: f * global_term(model, t, r, d, a_u)?,
        a_l,
        a_u,
    })
}

pub fn dirichlet_envelope(
    model: &SubordinatorModel,
    domain: &Domain,
    t: f64,
    x: &[f64],
    y: &[f64],
    a_l: f64,
    a_u: f64,
) -> Result<EnvelopeValues> {
    domain.require_inside(x)?;
    domain.require_inside(y)?;
    dirichlet_envelope_from_deltas(
        model,
        t,
        distance(x, y),
        domain.delta(x),
        domain.delta(y),
        domain.dim(),
        a_l,
        a_u,
    )
}

/// `a(x,y) = √(Φ(δ_D(x)) Φ(δ_D(y)))`.
pub fn a_xy(model: &SubordinatorModel, domain: &Domain, x: &[f64], y: &[f64]) -> Result<f64> {
    domain.require_inside(x)?;
    domain.require_inside(y)?;
    Ok(a_from_deltas(model, domain.delta(x), domain.delta(y)))
}

fn a_from_deltas(model: &SubordinatorModel, dx: f64, dy: f64) -> f64 {
    (model.big_phi(dx) * model.big_phi(dy)).sqrt()
}

/// `∫_lo^hi Φ(s)/s^{d+1} ds` in `v = ln s`; zero for an empty range.
fn phi_over_power_integral(model: &SubordinatorModel, lo: f64, hi: f64, d: usize) -> Result<f64> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    let res = quadrature::integrate(
        |v: f64| {
            let s = v.exp();
            model.big_phi(s) / s.powi(d as i32)
        },
        lo.ln(),
        hi.ln(),
        ENV_TOL,
    )?;
    Ok(res.value.max(0.0))
}

/// `c/r^d ∧ (c/Φ⁻¹(c)^d + (∫_r^{Φ⁻¹(c)} Φ(s)/s^{d+1} ds)₊)`.
pub fn h_comparison(model: &SubordinatorModel, b: f64, r: f64, d: usize) -> Result<f64> {
    if !(b > 0.0 && r > 0.0) {
        return Err(Error::Domain(format!("need b, r > 0 (b={b}, r={r})")));
    }
    let q = model.big_phi_inv(b)?;
    let near = b / r.powi(d as i32);
    let far = b / q.powi(d as i32) + phi_over_power_integral(model, r, q, d)?;
    Ok(near.min(far))
}

/// Green function envelope `g(x,y)` from boundary distances.
pub fn green_envelope_from_deltas(
    model: &SubordinatorModel,
    r: f64,
    delta_x: f64,
    delta_y: f64,
    d: usize,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Singularity(format!(
            "Green envelope needs x != y, got r={r}"
        )));
    }
    if d > 2 {
        let p = model.big_phi(r);
        let fx = (model.big_phi(delta_x) / p).min(1.0).sqrt();
        let fy = (model.big_phi(delta_y) / p).min(1.0).sqrt();
        Ok(p / r.powi(d as i32) * fx * fy)
    } else {
        h_comparison(model, a_from_deltas(model, delta_x, delta_y), r, d)
    }
}

pub fn green_envelope(
    model: &SubordinatorModel,
    domain: &Domain,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    domain.require_inside(x)?;
    domain.require_inside(y)?;
    green_envelope_from_deltas(
        model,
        distance(x, y),
        domain.delta(x),
        domain.delta(y),
        domain.dim(),
    )
}

/// Upper bound `a(x,y)/|x-y|^d`, valid without connectedness.
pub fn green_upper_disconnected(
    model: &SubordinatorModel,
    domain: &Domain,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let r = distance(x, y);
    if r == 0.0 {
        return Err(Error::Singularity("x = y".into()));
    }
    Ok(a_xy(model, domain, x, y)? / r.powi(domain.dim() as i32))
}

fn check_h_range(model: &SubordinatorModel, b: f64, r: f64, t_cap: f64, d: usize) -> Result<()> {
    if d != 1 && d != 2 {
        return Err(Error::Domain(format!(
            "h_Td is defined for d = 1, 2, got {d}"
        )));
    }
    if !(b > 0.0 && b <= 0.5 * t_cap * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "need 0 < b <= T/2 (b={b}, T={t_cap})"
        )));
    }
    if !(r > 0.0 && model.big_phi(r) <= 0.5 * t_cap * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!(
            "need 0 < r <= Phi^-1(T/2), got r={r}"
        )));
    }
    Ok(())
}

/// `h_{T,d}(b,r) = b + Φ(r) ∫_{Φ(r)/T}^1 (1 ∧ ub/Φ(r)) du / (u² Φ⁻¹(Φ(r)/u)^d)
/// + Φ(r)/r^d (1 ∧ b/Φ(r))`.
pub fn h_td(model: &SubordinatorModel, b: f64, r: f64, t_cap: f64, d: usize) -> Result<f64> {
    check_h_range(model, b, r, t_cap, d)?;
    let pr = model.big_phi(r);
    let lo = (pr / t_cap).ln();
    let kink = (pr / b).ln();
    let err = std::cell::Cell::new(None);
    // in w = ln u the measure du/u² becomes e^{-w} dw
    let integrand = |w: f64| {
        let u = w.exp();
        match model.big_phi_inv(pr / u) {
            Ok(s) => (1.0f64).min(u * b / pr) / (u * s.powi(d as i32)),
            Err(e) => {
                err.set(Some(e));
                0.0
            }
        }
    };
    let breaks: Vec<f64> = if kink > lo && kink < 0.0 {
        vec![kink]
    } else {
        vec![]
    };
    let res = quadrature::integrate_pieces(integrand, lo, 0.0, &breaks, ENV_TOL)?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(b + pr * res.value + pr / r.powi(d as i32) * (1.0f64).min(b / pr))
}

/// `b(x,y) = δx δy √(log(1/δx) log(1/δy))`.
pub fn log_corrected_b(delta_x: f64, delta_y: f64) -> f64 {
    delta_x * delta_y * ((1.0 / delta_x).ln() * (1.0 / delta_y).ln()).sqrt()
}

fn log_plus(z: f64) -> f64 {
    z.max(1.0).ln()
}

/// `1 ∧ (δ/√t) √log(1/δ)`.
pub fn log_corrected_boundary_factor(t: f64, delta: f64) -> f64 {
    if delta <= 0.0 {
        0.0
    } else {
        (delta / t.sqrt() * (1.0 / delta).ln().sqrt()).min(1.0)
    }
}

/// Closed-form envelopes for `φ(λ) = λ/log(1 + λ^{β/2})` on domains of
/// diameter below 1/2, with `t < 1/2`.
pub fn example8_envelopes(
    t: f64,
    x: &[f64],
    y: &[f64],
    delta_x: f64,
    delta_y: f64,
    d: usize,
    a_l: f64,
    a_u: f64,
) -> Result<EnvelopeValues> {
    if !(t > 0.0 && t < 0.5) {
        return Err(Error::Domain(format!("need 0 < t < 1/2, got {t}")));
    }
    let r = distance(x, y);
    for (name, v) in [("delta_x", delta_x), ("delta_y", delta_y), ("|x-y|", r)] {
        if !(v >= 0.0 && v < 0.5) {
            return Err(Error::Domain(format!("need 0 <= {name} < 1/2, got {v}")));
        }
    }
    let f = log_corrected_boundary_factor(t, delta_x) * log_corrected_boundary_factor(t, delta_y);
    if f == 0.0 {
        return Ok(EnvelopeValues {
            lower: 0.0,
            upper: 0.0,
            a_l,
            a_u,
        });
    }
    let lt = (1.0 / t).ln();
    let dd = 0.5 * d as f64;
    let diag = t.powf(-dd) * lt.powf(dd);
    let global = |a: f64| {
        if r == 0.0 {
            return diag;
        }
        let jump = t / ((1.0 / r).ln().powi(2) * r.powi(d as i32 + 2));
        let gauss = diag * (-a * r * r / t * lt).exp();
        diag.min(jump + gauss)
    };
    Ok(EnvelopeValues {
        lower: f * global(a_l),
        upper: f * global(a_u),
        a_l,
        a_u,
    })
}

/// Closed-form planar Green function estimate for the same exponents.
pub fn example8_green_d2(x: &[f64], y: &[f64], delta_x: f64, delta_y: f64) -> Result<f64> {
    let r = distance(x, y);
    if r == 0.0 {
        return Err(Error::Singularity("x = y".into()));
    }
    for (name, v) in [("delta_x", delta_x), ("delta_y", delta_y), ("|x-y|", r)] {
        if !(v > 0.0 && v < 0.5) {
            return Err(Error::Domain(format!("need 0 < {name} < 1/2, got {v}")));
        }
    }
    let b = log_corrected_b(delta_x, delta_y);
    let l = (1.0 / b).ln();
    let r2 = r * r;
    Ok((b / r2).min(log_plus(b / (r2 * l)) * log_plus(l / (r2 * b)) + l))
}

/// A nonnegative piecewise polynomial on `[0, ∞)`; zero past the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePoly {
    pub knots: Vec<f64>,
    /// Coefficients in powers of `(u - knots[i])` on `[knots[i], knots[i+1])`.
    pub coeffs: Vec<Vec<f64>>,
}

impl PiecewisePoly {
    /// Random pieces with nonnegative coefficients covering `[0, len]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: f64, pieces: usize, degree: usize) -> Self {
        let mut cuts: Vec<f64> = (1..pieces).map(|_| rng.random::<f64>() * len).collect();
        cuts.sort_by(f64::total_cmp);
        let mut knots = vec![0.0];
        knots.extend(cuts);
        knots.push(len);
        let coeffs = (0..pieces)
            .map(|_| (0..=degree).map(|_| rng.random::<f64>() * 2.0).collect())
            .collect();
        Self { knots, coeffs }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u < 0.0 {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k <= u);
        if i == 0 || i >= self.knots.len() {
            return 0.0;
        }
        let z = u - self.knots[i - 1];
        self.coeffs[i - 1]
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * z + c)
    }
}

/// Relative discrepancy of the principal-value identity
/// `P.V.∫_{s-R}^{s+R} ((t₊)² - s²) k(|t-s|) dt = ∫_0^R w_s(u) k(u) du`,
/// with `w_s(u) = 2u²` for `u < s` and `u² + s(2u - s)` otherwise.
///
/// `breaks` lists points in `u` where `k` is not smooth.
pub fn pv_identity_check<K: Fn(f64) -> f64>(
    k: K,
    breaks: &[f64],
    big_r: f64,
    s: f64,
) -> Result<f64> {
    if !(s > 0.0 && s < 0.5 * big_r) {
        return Err(Error::Domain(format!(
            "need 0 < s < R/2 (s={s}, R={big_r})"
        )));
    }
    let tol = Tolerance::new(0.0, 1e-13);
    let mut u_breaks: Vec<f64> = breaks.to_vec();
    u_breaks.push(s);
    let rhs = quadrature::integrate_pieces(
        |u| {
            let w = if u < s {
                2.0 * u * u
            } else {
                u * u + s * (2.0 * u - s)
            };
            w * k(u)
        },
        0.0,
        big_r,
        &u_breaks,
        tol,
    )?
    .value;
    let lhs_at = |eps: f64| -> Result<f64> {
        let right_breaks: Vec<f64> = breaks.iter().map(|b| s + b).collect();
        let right = quadrature::integrate_pieces(
            |t| (t * t - s * s) * k(t - s),
            s + eps,
            big_r + s,
            &right_breaks,
            tol,
        )?;
        let mut left_breaks: Vec<f64> = breaks.iter().map(|b| s - b).collect();
        left_breaks.push(0.0);
        let left = quadrature::integrate_pieces(
            |t| {
                let tp = t.max(0.0);
                (tp * tp - s * s) * k(s - t)
            },
            s - big_r,
            s - eps,
            &left_breaks,
            tol,
        )?;
        Ok(right.value + left.value)
    };
    // the truncation defect is ∫_0^ε 2u² k(u) du = O(ε³)
    let eps = 1e-6 * s;
    let (l1, l2) = (lhs_at(eps)?, lhs_at(0.5 * eps)?);
    let lhs = (8.0 * l2 - l1) / 7.0;
    Ok((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Extrapolated contribution beyond `t_max`.
    pub tail: f64,
    pub tail_fraction: f64,
    /// Set when the tail exceeds 10% of the total or could not be fitted.
    pub tail_flagged: bool,
    pub decay_rate: Option<f64>,
    pub n: usize,
}

/// `G_D(x,y) = ∫_0^∞ p_D(t,x,y) dt` for every `y`, from one set of paths
/// monitored on a uniform grid of `m` steps up to `t_max`. Each path
/// contributes the trapezoid integral of its killed-kernel sample plus an
/// exponential tail fitted from the survival curve of the same paths.
pub fn green_mc_multi(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    ys: &[Vec<f64>],
    t_max: f64,
    n: usize,
    m: usize,
) -> Result<Vec<GreenEstimate>> {
    if !domain.is_bounded() {
        return Err(Error::Unsupported(
            "Green function needs a bounded domain".into(),
        ));
    }
    domain.require_inside(x)?;
    for y in ys {
        domain.require_inside(y)?;
        if distance(x, y) == 0.0 {
            return Err(Error::Singularity("x = y".into()));
        }
    }
    if !(t_max > 0.0) || n == 0 || m < 2 {
        return Err(Error::Domain(format!(
            "need t_max > 0, n >= 1, m >= 2 (got {t_max}, {n}, {m})"
        )));
    }
    let d = domain.dim();
    let h = t_max / m as f64;
    let r0: Vec<f64> = ys.iter().map(|y| distance(x, y)).collect();
    let opts = KillOptions::default();

    struct ChunkOut {
        body: Vec<Moments>,
        last: Vec<Moments>,
        exits: Vec<Option<usize>>,
    }

    let chunks = rng::par_chunks(
        sampler.seed(),
        sampler.stream_id(),
        n,
        CHUNK,
        |rng, _, len| {
            let mut out = ChunkOut {
                body: vec![Moments::default(); ys.len()],
                last: vec![Moments::default(); ys.len()],
                exits: Vec::with_capacity(len),
            };
            let mut integral = vec![0.0; ys.len()];
            let mut y_k = vec![0.0; ys.len()];
            for _ in 0..len {
                integral.iter_mut().for_each(|v| *v = 0.0);
                let mut pos = x.to_vec();
                let mut s = 0.0;
                let mut exit: Option<(usize, f64, Vec<f64>)> = None;
                for k in 1..=m {
                    let ds = sampler.increment(rng, h);
                    s += ds;
                    if exit.is_none() {
                        let sd = (2.0 * ds).sqrt();
                        for p in pos.iter_mut() {
                            let z: f64 = rng.sample(rand_distr::StandardNormal);
                            *p += sd * z;
                        }
                        if !domain.contains(&pos) {
                            exit = Some((k, s, pos.clone()));
                        }
                    }
                    for (j, y) in ys.iter().enumerate() {
                        let free = gaussian_kernel(s, r0[j], d);
                        y_k[j] = match &exit {
                            Some((_, se, xe)) => free - gaussian_kernel(s - se, distance(xe, y), d),
                            None => free,
                        };
                        let w = if k == m { 0.5 } else { 1.0 };
                        integral[j] += w * h * y_k[j];
                    }
                }
                for j in 0..ys.len() {
                    out.body[j].push(integral[j]);
                    out.last[j].push(y_k[j]);
                }
                out.exits.push(exit.map(|e| e.0));
            }
            let _ = opts;
            out
        },
    );

    let mut body = vec![Moments::default(); ys.len()];
    let mut last = vec![Moments::default(); ys.len()];
    let mut exits = Vec::with_capacity(n);
    for c in &chunks {
        for j in 0..ys.len() {
            body[j].merge(&c.body[j]);
            last[j].merge(&c.last[j]);
        }
        exits.extend_from_slice(&c.exits);
    }
    // decay rate from the survival curve over the second half of the window
    let survival: Vec<(f64, f64)> = (0..=5)
        .map(|i| {
            let k = m / 2 + i * (m - m / 2) / 5;
            let alive = exits.iter().filter(|e| e.is_none_or(|j| j > k)).count();
            (k as f64 * h, alive as f64 / n as f64)
        })
        .collect();
    let decay = fit_decay(&survival, n)
        .ok()
        .filter(|f| f.rate > 0.0 && f.survivors_at_max >= 50)
        .map(|f| f.rate);
    Ok((0..ys.len())
        .map(|j| {
            let tail = decay.map_or(0.0, |lam| last[j].mean.max(0.0) / lam);
            let value = body[j].mean + tail;
            let tail_fraction = if value > 0.0 { tail / value } else { 0.0 };
            let tail_se = decay.map_or(0.0, |lam| last[j].stderr() / lam);
            GreenEstimate {
                value,
                stderr: (body[j].variance() / n as f64 + tail_se * tail_se).sqrt(),
                tail,
                tail_fraction,
                tail_flagged: decay.is_none() || tail_fraction > 0.1,
                decay_rate: decay,
                n,
            }
        })
        .collect())
}

pub fn green_mc(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    y: &[f64],
    t_max: f64,
    n: usize,
    m: usize,
) -> Result<GreenEstimate> {
    Ok(green_mc_multi(sampler, domain, x, &[y.to_vec()], t_max, n, m)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cauchy() -> SubordinatorModel {
        SubordinatorModel::stable(1.0).unwrap()
    }

    #[test]
    fn boundary_factor_examples() {
        let m = cauchy();
        assert!((boundary_factor(&m, 0.2, 0.05).unwrap() - 0.5).abs() < 1e-14);
        assert!((boundary_factor(&m, 0.4, 0.1).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(boundary_factor(&m, 0.2, 0.3).unwrap(), 1.0);
        assert_eq!(boundary_factor(&m, 0.2, 0.0).unwrap(), 0.0);
        for m in crate::bernstein::catalog() {
            for t in [1e-3, 0.1, 1.0] {
                for delta in [1e-4, 1e-2, 0.5, 3.0] {
                    let f = boundary_factor(&m, t, delta).unwrap();
                    assert!(f * f * t <= m.big_phi(delta).max(t) * (1.0 + 1e-15));
                }
            }
        }
    }

    #[test]
    fn dirichlet_envelope_examples() {
        let m = cauchy();
        let ball = Domain::ball(1, 1.0);
        // tH(r⁻²)/r = 0.01 · 1 / 0.5
        let e = dirichlet_envelope(&m, &ball, 0.01, &[0.0], &[0.5], 1.0, 1.0).unwrap();
        assert!((e.upper - 0.02).abs() < 1e-12 && (e.lower - 0.02).abs() < 1e-12);
        let e = dirichlet_envelope(&m, &ball, 0.3, &[0.2], &[0.2], 0.5, 0.5).unwrap();
        let diag = m.phi_inv(1.0 / 0.3).unwrap().sqrt();
        assert!((e.upper - diag).abs() < 1e-12);
        assert!(dirichlet_envelope(&m, &ball, 0.3, &[1.0], &[0.2], 0.5, 0.5).is_err());
        let z = dirichlet_envelope_from_deltas(&m, 0.3, 0.1, 0.0, 0.4, 1, 0.5, 0.5).unwrap();
        assert_eq!((z.lower, z.upper), (0.0, 0.0));
        let e = dirichlet_envelope(&m, &ball, 0.05, &[0.1], &[-0.4], 1.0, 0.5).unwrap();
        assert!(e.lower <= e.upper);
    }

    #[test]
    fn a_xy_examples() {
        let m = cauchy();
        let ball = Domain::ball(1, 1.0);
        let v = a_xy(&m, &ball, &[0.96], &[-0.91]).unwrap();
        assert!((v - 0.06).abs() < 1e-12);
        assert_eq!(v, a_xy(&m, &ball, &[-0.91], &[0.96]).unwrap());
        let w = a_xy(&m, &ball, &[0.9], &[-0.9]).unwrap();
        assert!((w - m.big_phi(0.1)).abs() < 1e-15);
    }

    #[test]
    fn green_envelope_examples() {
        let m = cauchy();
        // a = 0.01, r = 0.1
        let v = green_envelope_from_deltas(&m, 0.1, 0.01, 0.01, 1).unwrap();
        assert!((v - 0.1).abs() < 1e-12, "{v}");
        let v = green_envelope_from_deltas(&m, 0.1, 0.5, 0.5, 1).unwrap();
        assert!((v - (1.0 + 5f64.ln())).abs() < 1e-7, "{v}");
        let r: f64 = 0.2;
        let v = green_envelope_from_deltas(&m, r, r, r, 3).unwrap();
        assert!((v - m.big_phi(r) / r.powi(3)).abs() < 1e-12);
        assert!(matches!(
            green_envelope_from_deltas(&m, 0.0, 0.1, 0.1, 1),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn green_envelope_monotone_in_deltas() {
        let m = SubordinatorModel::log_example_i(1.0).unwrap();
        for d in [1, 2] {
            let mut prev = 0.0;
            for delta in [1e-4, 1e-3, 1e-2, 0.1, 0.3] {
                let g = green_envelope_from_deltas(&m, 0.05, delta, 0.2, d).unwrap();
                let a = a_from_deltas(&m, delta, 0.2);
                assert!(
                    g >= prev * (1.0 - 1e-9) && g <= a / 0.05f64.powi(d as i32) * (1.0 + 1e-12)
                );
                prev = g;
            }
        }
    }

    #[test]
    fn h_comparison_examples() {
        let m = cauchy();
        assert!((h_comparison(&m, 0.01, 0.1, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((h_comparison(&m, 0.5, 0.1, 2).unwrap() - 10.0).abs() < 1e-7);
    }

    /// `h_{T,d}` through the substitution `u = Φ(r)/Φ(s)`.
    fn h_td_in_s(model: &SubordinatorModel, b: f64, r: f64, t_cap: f64, d: usize) -> f64 {
        let pr = model.big_phi(r);
        let top = model.big_phi_inv(t_cap).unwrap();
        let knee = model.big_phi_inv(b).unwrap().clamp(r, top);
        let mid = quadrature::integrate_pieces(
            |v: f64| {
                let s = v.exp();
                (1.0f64).min(b / model.big_phi(s)) * model.big_phi_prime(s) * s / s.powi(d as i32)
            },
            r.ln(),
            top.ln(),
            &[knee.ln()],
            Tolerance::new(0.0, 1e-11),
        )
        .unwrap()
        .value;
        b + mid + pr / r.powi(d as i32) * (1.0f64).min(b / pr)
    }

    #[test]
    fn h_td_matches_substituted_form() {
        for m in crate::bernstein::catalog() {
            let t_cap = 2.0 * m.big_phi(0.5);
            for d in [1, 2] {
                for (bf, r) in [(0.3, 0.01), (0.01, 0.2), (0.49, 0.49), (1e-4, 1e-3)] {
                    let b = bf * t_cap;
                    let lit = h_td(&m, b, r, t_cap, d).unwrap();
                    let sub = h_td_in_s(&m, b, r, t_cap, d);
                    assert!(
                        (lit / sub - 1.0).abs() < 1e-6,
                        "{m} d={d} b={b} r={r}: {lit} {sub}"
                    );
                }
            }
        }
    }

    #[test]
    fn h_td_range_checks() {
        let m = cauchy();
        assert!(h_td(&m, 0.6, 0.1, 1.0, 1).is_err());
        assert!(h_td(&m, 0.1, 0.6, 1.0, 1).is_err());
        assert!(h_td(&m, 0.1, 0.1, 1.0, 3).is_err());
    }

    #[test]
    fn example8_examples() {
        let e = (-1.0f64).exp();
        let b = log_corrected_b(e, e);
        assert!((b - (-2.0f64).exp()).abs() < 1e-15);
        let z = example8_envelopes(0.1, &[0.2], &[0.2], 0.0, 0.0, 1, 0.5, 0.5).unwrap();
        assert_eq!((z.lower, z.upper), (0.0, 0.0));
        assert_eq!(log_corrected_boundary_factor(0.01, 0.3), 1.0);
        assert!(example8_envelopes(0.6, &[0.2], &[0.2], 0.1, 0.1, 1, 0.5, 0.5).is_err());
        // far apart relative to b: the b/r² branch
        let g = example8_green_d2(&[0.0, 0.0], &[0.3, 0.0], 1e-3, 1e-3).unwrap();
        let b = log_corrected_b(1e-3, 1e-3);
        assert!((g - b / 0.09).abs() < 1e-15);
    }

    #[test]
    fn pv_identity_constant_and_reciprocal() {
        let e = pv_identity_check(|_| 1.0, &[], 1.0, 0.25).unwrap();
        assert!(e < 1e-8, "{e}");
        let e = pv_identity_check(|u| 1.0 / u, &[], 1.0, 0.25).unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn pv_identity_random_polynomials() {
        let mut rng = rng::stream_rng(17, 0);
        for _ in 0..5 {
            let k = PiecewisePoly::random(&mut rng, 1.5, 3, 3);
            let e = pv_identity_check(|u| k.eval(u), &k.knots, 1.0, 0.3).unwrap();
            assert!(e < 1e-6, "{e}");
        }
    }

    #[test]
    fn ball_green_oracle_integrates_to_mean_exit_time() {
        // ∫_{-1}^{1} G(0,y) dy = E_0 τ = 1 for the Cauchy process on (-1, 1)
        let g = |y: f64| {
            let x = 0.0f64;
            ((1.0 - x * y + ((1.0 - x * x) * (1.0 - y * y)).sqrt()) / (x - y).abs()).ln() / PI
        };
        let v = quadrature::integrate_pieces(g, -1.0, 1.0, &[0.0], Tolerance::new(0.0, 1e-10))
            .unwrap()
            .value;
        assert!((v - 1.0).abs() < 1e-8, "{v}");
    }
}
