//! Free-space transition density: conditional-Gaussian Monte Carlo and the
//! two-sided analytic envelope.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bernstein::SubordinatorModel;
use crate::error::{Error, Result};
use crate::levy::SubordinatorSampler;
use crate::rng::{self, CHUNK};
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ConditionalGaussian,
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    /// Query points `(t, r)`.
    pub points: Vec<(f64, f64)>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: usize,
    pub method: Method,
}

/// Gaussian kernel of `B_s` with generator `Δ`: `(4πs)^{-d/2} e^{-r²/(4s)}`.
pub fn gaussian_kernel(s: f64, r: f64, d: usize) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    (-0.5 * d as f64 * (4.0 * PI * s).ln() - r * r / (4.0 * s)).exp()
}

/// Estimates `p(t, r)` for every radius by averaging the Gaussian kernel
/// over draws of `S_t`.
pub fn free_kernel_mc(
    sampler: &SubordinatorSampler,
    t: f64,
    r_list: &[f64],
    d: usize,
    n: usize,
) -> Result<DensityEstimate> {
    if !(t > 0.0) || n == 0 || d == 0 {
        return Err(Error::Domain(format!(
            "need t > 0, n >= 1, d >= 1 (t={t}, n={n}, d={d})"
        )));
    }
    if r_list.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::Domain("radii must be nonnegative".into()));
    }
    let chunks = rng::par_chunks(
        sampler.seed(),
        sampler.stream_id(),
        n,
        CHUNK,
        |rng, _, len| {
            let mut acc = vec![Moments::default(); r_list.len()];
            for _ in 0..len {
                let s = sampler.increment(rng, t);
                for (a, &r) in acc.iter_mut().zip(r_list) {
                    a.push(gaussian_kernel(s, r, d));
                }
            }
            acc
        },
    );
    let mut acc = vec![Moments::default(); r_list.len()];
    for c in &chunks {
        for (a, b) in acc.iter_mut().zip(c) {
            a.merge(b);
        }
    }
    Ok(DensityEstimate {
        points: r_list.iter().map(|&r| (t, r)).collect(),
        values: acc.iter().map(|m| m.mean).collect(),
        stderr: acc.iter().map(|m| m.stderr()).collect(),
        n,
        method: Method::ConditionalGaussian,
    })
}

/// `φ⁻¹(1/t)^{d/2} ∧ (tH(r⁻²)/r^d + φ⁻¹(1/t)^{d/2} e^{-a r² φ⁻¹(1/t)})`.
pub fn global_term(model: &SubordinatorModel, t: f64, r: f64, d: usize, a: f64) -> Result<f64> {
    if !(t > 0.0) || !(r >= 0.0) || !(a > 0.0) {
        return Err(Error::Domain(format!(
            "need t > 0, r >= 0, a > 0 (t={t}, r={r}, a={a})"
        )));
    }
    let q = model.phi_inv(1.0 / t)?;
    let diag = q.powf(0.5 * d as f64);
    if r == 0.0 {
        return Ok(diag);
    }
    let off = t * model.h(1.0 / (r * r)) / r.powi(d as i32) + diag * (-a * r * r * q).exp();
    Ok(diag.min(off))
}

pub fn free_envelope_upper(
    model: &SubordinatorModel,
    t: f64,
    r: f64,
    d: usize,
    a_u: f64,
) -> Result<f64> {
    global_term(model, t, r, d, a_u)
}

pub fn free_envelope_lower(
    model: &SubordinatorModel,
    t: f64,
    r: f64,
    d: usize,
    a_l: f64,
) -> Result<f64> {
    global_term(model, t, r, d, a_l)
}

/// Upper envelope divided by `φ⁻¹(1/t)^{d/2} ∧ t r^{-d} φ(r⁻²)`.
pub fn uppcom_check(model: &SubordinatorModel, t: f64, r: f64, d: usize, b: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("need r > 0, got {r}")));
    }
    let upper = global_term(model, t, r, d, b)?;
    let diag = model.phi_inv(1.0 / t)?.powf(0.5 * d as f64);
    let reference = diag.min(t * model.phi(1.0 / (r * r)) / r.powi(d as i32));
    Ok(upper / reference)
}
