//! Globally adaptive Gauss–Kronrod (10/21 point) quadrature.
//!
//! The error estimate follows the QUADPACK `qk21` rescaling. Intervals are
//! bisected in order of decreasing error estimate until the combined
//! estimate drops below `max(abs_tol, rel_tol * |I|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651146,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            max_intervals: 4000,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-10, 1e-10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let f_center = f(center);
    let mut res_k = f_center * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }

    if !res_k.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite integrand on [{a:e}, {b:e}]"
        )));
    }

    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (f_center - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Segment { a, b, value, err })
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            abs_err: 0.0,
            intervals: 0,
        });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!(
            "finite limits required, got [{a}, {b}]"
        )));
    }

    let first = gk21(&f, a, b)?;
    let mut total = first.value;
    let mut total_err = first.err;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    // segments too narrow to bisect further
    let mut frozen_err = 0.0;

    while total_err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() >= tol.max_intervals {
            return Err(Error::Quadrature {
                a,
                b,
                value: total,
                abs_err: total_err,
                intervals: heap.len(),
            });
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if (worst.b - worst.a).abs() <= 4.0 * f64::EPSILON * mid.abs().max(f64::MIN_POSITIVE) {
            frozen_err += worst.err;
            if heap.is_empty() || frozen_err > tol.abs.max(tol.rel * total.abs()) {
                return Err(Error::Quadrature {
                    a,
                    b,
                    value: total,
                    abs_err: total_err,
                    intervals: heap.len() + 1,
                });
            }
            continue;
        }
        let left = gk21(&f, worst.a, mid)?;
        let right = gk21(&f, mid, worst.b)?;
        total += left.value + right.value - worst.value;
        total_err += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
    }

    // re-sum to shed the drift of the running updates
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let abs_err: f64 = heap.iter().map(|s| s.err).sum::<f64>() + frozen_err;
    Ok(QuadResult {
        value,
        abs_err,
        intervals: heap.len(),
    })
}

/// Integrates over `[a, b]` split at the given interior points.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<QuadResult> {
    let mut pts = vec![a];
    pts.extend(
        breaks
            .iter()
            .copied()
            .filter(|&p| p > a.min(b) && p < a.max(b)),
    );
    pts.push(b);
    let n = pts.len();
    if a > b {
        pts[1..n - 1].sort_by(|x, y| y.total_cmp(x));
    } else {
        pts[1..n - 1].sort_by(|x, y| x.total_cmp(y));
    }
    let mut out = QuadResult {
        value: 0.0,
        abs_err: 0.0,
        intervals: 0,
    };
    for w in pts.windows(2) {
        let r = integrate(&f, w[0], w[1], tol)?;
        out.value += r.value;
        out.abs_err += r.abs_err;
        out.intervals += r.intervals;
    }
    Ok(out)
}

/// Integrates `f` over `[a, ∞)` through the map `x = a + (1 - u) / u`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    tol: Tolerance,
) -> Result<QuadResult> {
    integrate(
        |u: f64| {
            let x = a + (1.0 - u) / u;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v / (u * u)
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integrates a positive-axis integrand `f` over `(0, ∞)` in the variable
/// `v = ln s`, splitting at `ln(center)`.
pub fn integrate_log_axis<F: Fn(f64) -> f64>(
    f: F,
    center: f64,
    tol: Tolerance,
) -> Result<QuadResult> {
    if !(center > 0.0 && center.is_finite()) {
        return Err(Error::Domain(format!(
            "log-axis center must be positive, got {center}"
        )));
    }
    integrate_log_axis_ln(
        |v: f64| {
            let s = v.exp();
            if s == 0.0 || !s.is_finite() {
                0.0
            } else {
                f(s) * s
            }
        },
        center.ln(),
        tol,
    )
}

/// Integrates `g(v)` over the whole real line, splitting at `c` and folding
/// each half-line onto `(0, 1]` through `v = c ± (1 - u)/u`. Algebraic
/// tails in `v` are therefore captured as well as exponential ones.
pub fn integrate_log_axis_ln<G: Fn(f64) -> f64>(
    g: G,
    c: f64,
    tol: Tolerance,
) -> Result<QuadResult> {
    if !c.is_finite() {
        return Err(Error::Domain(format!(
            "split point must be finite, got {c}"
        )));
    }
    let half = |sign: f64| {
        integrate(
            |u: f64| {
                let w = (1.0 - u) / u;
                let v = g(c + sign * w);
                // far tails may underflow into 0 * inf
                if v == 0.0 || (w > 40.0 && !v.is_finite()) {
                    0.0
                } else {
                    v / (u * u)
                }
            },
            0.0,
            1.0,
            tol,
        )
    };
    let right = half(1.0)?;
    let left = half(-1.0)?;
    Ok(QuadResult {
        value: left.value + right.value,
        abs_err: left.abs_err + right.abs_err,
        intervals: left.intervals + right.intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x - x + 1.0, -1.0, 2.0, Tolerance::default()).unwrap();
        assert!((r.value - (8.0 + 1.0 - 1.5 + 3.0)).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let r = integrate(
            |x: f64| x.powf(-0.5),
            0.0,
            1.0,
            Tolerance::new(1e-12, 1e-12),
        )
        .unwrap();
        assert!((r.value - 2.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn jump_discontinuity_converges() {
        let f = |x: f64| if x < 0.3 { 1.0 } else { 2.0 };
        let r = integrate(f, 0.0, 1.0, Tolerance::new(1e-12, 1e-12)).unwrap();
        assert!((r.value - 1.7).abs() < 1e-10);
    }

    #[test]
    fn semi_infinite() {
        let r = integrate_to_infinity(|x: f64| (-x).exp(), 0.0, Tolerance::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-10);
        let r =
            integrate_to_infinity(|x: f64| 1.0 / (1.0 + x * x), 0.0, Tolerance::default()).unwrap();
        assert!((r.value - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }

    #[test]
    fn log_axis_gamma_integral() {
        // ∫_0^∞ s^{-2} e^{-1/s} ds = 1
        let r = integrate_log_axis(
            |s: f64| (-1.0 / s).exp() / (s * s),
            1.0,
            Tolerance::default(),
        )
        .unwrap();
        assert!((r.value - 1.0).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let r = integrate(|x: f64| x.exp(), 1.0, 0.0, Tolerance::default()).unwrap();
        assert!((r.value + (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_integrand_reports() {
        let e = integrate(|_x| f64::NAN, 0.0, 1.0, Tolerance::default()).unwrap_err();
        assert!(matches!(e, Error::Numeric(_)));
    }
}
