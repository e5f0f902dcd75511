//! The process killed on leaving a domain: path simulation, survival
//! probabilities, the killed transition density, the subordinate killed
//! Brownian motion lower bound and the principal decay rate.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bernstein::{ModelKind, SubordinatorModel};
use crate::domain::{distance, Domain};
use crate::error::{Error, Result};
use crate::free_kernel::gaussian_kernel;
use crate::levy::SubordinatorSampler;
use crate::quadrature::{self, Tolerance};
use crate::rng::{self, CHUNK};
use crate::stats::Moments;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    fn from_moments(m: &Moments) -> Self {
        Self {
            value: m.mean,
            stderr: m.stderr(),
            n: m.n as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KillOptions {
    /// Also kill between observation times with the Brownian-bridge
    /// crossing probability `exp(-δ₀δ₁/ΔS)` of the locally flat boundary.
    pub bridge_correction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KilledOutcome {
    pub survived: bool,
    /// Grid index `k` (time `k t / m`) of the first observation outside.
    pub exit_index: Option<usize>,
    /// Position at time `t` if the path survived, at exit otherwise.
    pub position: Vec<f64>,
    /// Subordinator value at exit (or at `t`).
    pub s_value: f64,
}

fn gaussian_step<R: Rng + ?Sized>(rng: &mut R, pos: &mut [f64], ds: f64) {
    let sd = (2.0 * ds).sqrt();
    for p in pos.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *p += sd * z;
    }
}

/// One path observed at `k t / m`, `k = 1..m`, stopped at the first
/// observation outside `domain`.
pub fn simulate_killed<R: Rng + ?Sized>(
    sampler: &SubordinatorSampler,
    rng: &mut R,
    domain: &Domain,
    x: &[f64],
    t: f64,
    m: usize,
    opts: KillOptions,
) -> Result<KilledOutcome> {
    domain.require_inside(x)?;
    if !(t > 0.0) || m == 0 {
        return Err(Error::Domain(format!(
            "need t > 0 and m >= 1 (t={t}, m={m})"
        )));
    }
    Ok(run_killed(sampler, rng, domain, x, t / m as f64, m, opts))
}

fn run_killed<R: Rng + ?Sized>(
    sampler: &SubordinatorSampler,
    rng: &mut R,
    domain: &Domain,
    x: &[f64],
    dt: f64,
    m: usize,
    opts: KillOptions,
) -> KilledOutcome {
    let mut pos = x.to_vec();
    let mut s = 0.0;
    let mut delta_prev = domain.delta(x);
    for k in 1..=m {
        let ds = sampler.increment(rng, dt);
        s += ds;
        gaussian_step(rng, &mut pos, ds);
        let delta = domain.delta(&pos);
        if delta <= 0.0 {
            return KilledOutcome {
                survived: false,
                exit_index: Some(k),
                position: pos,
                s_value: s,
            };
        }
        if opts.bridge_correction && ds > 0.0 && delta_prev.is_finite() {
            let p = (-delta_prev * delta / ds).exp();
            if rng.sample::<f64, _>(Open01) < p {
                return KilledOutcome {
                    survived: false,
                    exit_index: Some(k),
                    position: domain.nearest_boundary_point(&pos),
                    s_value: s,
                };
            }
        }
        delta_prev = delta;
    }
    KilledOutcome {
        survived: true,
        exit_index: None,
        position: pos,
        s_value: s,
    }
}

/// `P_x(τ_D > t)` from `n` discretely monitored paths.
pub fn survival_prob(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    t: f64,
    n: usize,
    m: usize,
    opts: KillOptions,
) -> Result<Estimate> {
    domain.require_inside(x)?;
    check_counts(t, n, m)?;
    let dt = t / m as f64;
    let chunks = rng::par_chunks(
        sampler.seed(),
        sampler.stream_id(),
        n,
        CHUNK,
        |rng, _, len| {
            (0..len)
                .filter(|_| run_killed(sampler, rng, domain, x, dt, m, opts).survived)
                .count()
        },
    );
    let alive: usize = chunks.iter().sum();
    let p = alive as f64 / n as f64;
    Ok(Estimate {
        value: p,
        stderr: (p * (1.0 - p) / n as f64).sqrt(),
        n,
    })
}

/// Survival estimates at each monitoring resolution in `ms`. The drop
/// between successive entries measures the bias from exits missed between
/// observation times.
pub fn monitoring_refinement(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    t: f64,
    n: usize,
    ms: &[usize],
    opts: KillOptions,
) -> Result<Vec<(usize, Estimate)>> {
    ms.iter()
        .map(|&m| Ok((m, survival_prob(sampler, domain, x, t, n, m, opts)?)))
        .collect()
}

fn check_counts(t: f64, n: usize, m: usize) -> Result<()> {
    if !(t > 0.0) || n == 0 || m == 0 {
        return Err(Error::Domain(format!(
            "need t > 0, n >= 1, m >= 1 (t={t}, n={n}, m={m})"
        )));
    }
    Ok(())
}

/// Killed-kernel estimates at every `y` from one set of paths started at
/// `x`, through `p_D(t,x,y) = p(t,x,y) - E_x[p(t-τ, X_τ, y); τ < t]`.
///
/// Returned values are clipped at zero; the raw means are also returned.
pub fn killed_kernel_multi(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    ys: &[Vec<f64>],
    t: f64,
    n: usize,
    m: usize,
    opts: KillOptions,
) -> Result<Vec<KernelEstimate>> {
    domain.require_inside(x)?;
    for y in ys {
        domain.require_inside(y)?;
    }
    check_counts(t, n, m)?;
    let d = domain.dim();
    let dt = t / m as f64;
    let r0: Vec<f64> = ys.iter().map(|y| distance(x, y)).collect();
    let chunks = rng::par_chunks(
        sampler.seed(),
        sampler.stream_id(),
        n,
        CHUNK,
        |rng, _, len| {
            let mut acc = vec![Moments::default(); ys.len()];
            for _ in 0..len {
                let out = run_killed(sampler, rng, domain, x, dt, m, opts);
                match out.exit_index {
                    None => {
                        for (a, &r) in acc.iter_mut().zip(&r0) {
                            a.push(gaussian_kernel(out.s_value, r, d));
                        }
                    }
                    Some(k) => {
                        // the remaining subordinator time is a fresh increment
                        let rest = sampler.increment(rng, t - k as f64 * dt);
                        let s_end = out.s_value + rest;
                        for ((a, &r), y) in acc.iter_mut().zip(&r0).zip(ys) {
                            let free = gaussian_kernel(s_end, r, d);
                            let back = gaussian_kernel(rest, distance(&out.position, y), d);
                            a.push(free - back);
                        }
                    }
                }
            }
            acc
        },
    );
    let mut acc = vec![Moments::default(); ys.len()];
    for c in &chunks {
        for (a, b) in acc.iter_mut().zip(c) {
            a.merge(b);
        }
    }
    Ok(acc
        .iter()
        .map(|mo| KernelEstimate {
            value: mo.mean.max(0.0),
            raw: mo.mean,
            stderr: mo.stderr(),
            n,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    /// Estimate clipped at zero.
    pub value: f64,
    /// Estimate before clipping.
    pub raw: f64,
    pub stderr: f64,
    pub n: usize,
}

impl KernelEstimate {
    /// Negative before clipping by more than three standard errors.
    pub fn bias_flag(&self) -> bool {
        self.raw < -3.0 * self.stderr
    }
}

pub fn killed_kernel_mc(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    y: &[f64],
    t: f64,
    n: usize,
    m: usize,
) -> Result<KernelEstimate> {
    let v = killed_kernel_multi(
        sampler,
        domain,
        x,
        &[y.to_vec()],
        t,
        n,
        m,
        KillOptions::default(),
    )?;
    Ok(v[0])
}

/// Reflection of `y` through the boundary of the half-space `{x_d > 0}`.
fn reflect(y: &[f64]) -> Vec<f64> {
    let mut r = y.to_vec();
    let last = r.len() - 1;
    r[last] = -r[last];
    r
}

fn half_space_dim(domain: &Domain) -> Result<usize> {
    match domain {
        Domain::HalfSpace { d } => Ok(*d),
        other => Err(Error::Unsupported(format!(
            "subordinate killed Brownian motion is only implemented for the half-space, got {other:?}"
        ))),
    }
}

/// `q_D(t,x,y) = E[p̃_D(S_t,x,y)]` for the half-space, integrating the
/// reflected Gaussian kernel against the explicit density of `S_t`
/// (available for the stable index `α = 1`).
pub fn skbm_lower_quadrature(
    model: &SubordinatorModel,
    domain: &Domain,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let d = half_space_dim(domain)?;
    domain.require_inside(x)?;
    if y.len() != d || y[d - 1] < 0.0 {
        return Err(Error::Domain(format!(
            "y={y:?} not in the closed half-space"
        )));
    }
    let c = match model.kind() {
        ModelKind::Stable { alpha } if alpha == 1.0 => model.scale(),
        _ => {
            return Err(Error::Unsupported(format!(
                "no closed-form subordinator density for {model}; use the Monte Carlo variant"
            )))
        }
    };
    // S_t has density (ct)/(2√π) s^{-3/2} e^{-(ct)²/(4s)}
    let ct = c * t;
    let (r1, r2) = (distance(x, y), distance(x, &reflect(y)));
    let res = quadrature::integrate_log_axis(
        |s| {
            let dens = (ct / (2.0 * PI.sqrt())) * s.powf(-1.5) * (-ct * ct / (4.0 * s)).exp();
            dens * (gaussian_kernel(s, r1, d) - gaussian_kernel(s, r2, d))
        },
        0.25 * (ct * ct + r1 * r1).max(1e-300),
        Tolerance::new(1e-300, 1e-10),
    )?;
    Ok(res.value.max(0.0))
}

/// Monte Carlo `q_D` for any model, averaging over draws of `S_t`.
pub fn skbm_lower_mc(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    t: f64,
    x: &[f64],
    y: &[f64],
    n: usize,
) -> Result<Estimate> {
    let d = half_space_dim(domain)?;
    domain.require_inside(x)?;
    let (r1, r2) = (distance(x, y), distance(x, &reflect(y)));
    let chunks = rng::par_chunks(
        sampler.seed(),
        sampler.stream_id(),
        n,
        CHUNK,
        |rng, _, len| {
            (0..len)
                .map(|_| {
                    let s = sampler.increment(rng, t);
                    gaussian_kernel(s, r1, d) - gaussian_kernel(s, r2, d)
                })
                .collect::<Moments>()
        },
    );
    let mut acc = Moments::default();
    chunks.iter().for_each(|c| acc.merge(c));
    Ok(Estimate::from_moments(&acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub stderr: f64,
    pub survivors_at_max: usize,
    pub survival: Vec<(f64, f64)>,
}

/// Weighted least-squares slope of `-ln P̂(τ_D > t)` against `t`.
pub fn fit_decay(survival: &[(f64, f64)], n: usize) -> Result<DecayFit> {
    let pts: Vec<(f64, f64, f64)> = survival
        .iter()
        .filter(|&&(_, p)| p > 0.0)
        .map(|&(t, p)| {
            // var(ln P̂) ≈ (1 - P) / (n P)
            let var = ((1.0 - p) / (n as f64 * p)).max(1e-12);
            (t, -p.ln(), 1.0 / var)
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientSamples(
            "fewer than two positive survival points".into(),
        ));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let tm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - tm) * (p.1 - ym)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Domain("decay fit needs distinct times".into()));
    }
    let last = survival.iter().map(|s| s.1).last().unwrap_or(0.0);
    Ok(DecayFit {
        rate: sxy / sxx,
        stderr: (1.0 / sxx).sqrt(),
        survivors_at_max: (last * n as f64).round() as usize,
        survival: survival.to_vec(),
    })
}

/// Exit-time indices on a uniform monitoring grid of step `t_max / m`;
/// `None` for paths alive at `t_max`.
fn exit_indices(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    t_max: f64,
    n: usize,
    m: usize,
    opts: KillOptions,
) -> Vec<Option<usize>> {
    let dt = t_max / m as f64;
    rng::par_chunks(
        sampler.seed(),
        sampler.stream_id(),
        n,
        CHUNK,
        |rng, _, len| {
            (0..len)
                .map(|_| run_killed(sampler, rng, domain, x, dt, m, opts).exit_index)
                .collect::<Vec<_>>()
        },
    )
    .concat()
}

/// Decay rate of `t ↦ P_x(τ_D > t)` over a large-time grid.
pub fn estimate_lambda_d(
    sampler: &SubordinatorSampler,
    domain: &Domain,
    x: &[f64],
    t_grid: &[f64],
    n: usize,
    m: usize,
) -> Result<DecayFit> {
    if !domain.is_bounded() {
        return Err(Error::Unsupported(
            "decay rate needs a bounded domain".into(),
        ));
    }
    domain.require_inside(x)?;
    crate::levy::check_grid(t_grid)?;
    let t_max = *t_grid.last().unwrap();
    check_counts(t_max, n, m)?;
    let exits = exit_indices(sampler, domain, x, t_max, n, m, KillOptions::default());
    let dt = t_max / m as f64;
    let survival: Vec<(f64, f64)> = t_grid
        .iter()
        .map(|&t| {
            let k = ((t / dt).round() as usize).max(1);
            let alive = exits.iter().filter(|e| e.is_none_or(|i| i > k)).count();
            (k as f64 * dt, alive as f64 / n as f64)
        })
        .collect();
    let fit = fit_decay(&survival, n)?;
    if fit.survivors_at_max < 50 {
        return Err(Error::InsufficientSamples(format!(
            "only {} paths survive to t={t_max}",
            fit.survivors_at_max
        )));
    }
    if !(fit.rate > 0.0) {
        return Err(Error::Numeric(format!(
            "non-positive decay rate {}",
            fit.rate
        )));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::Scheme;

    fn cauchy_sampler(seed: u64) -> SubordinatorSampler {
        SubordinatorSampler::new(
            SubordinatorModel::stable(1.0).unwrap(),
            Scheme::ExactStable,
            seed,
            0,
        )
        .unwrap()
    }

    fn cauchy_kernel(t: f64, r: f64) -> f64 {
        t / (PI * (t * t + r * r))
    }

    #[test]
    fn full_space_never_kills() {
        let s = cauchy_sampler(1);
        let mut rng = rng::stream_rng(1, 0);
        let dom = Domain::FullSpace { d: 2 };
        for _ in 0..100 {
            let o = simulate_killed(
                &s,
                &mut rng,
                &dom,
                &[0.0, 0.0],
                1.0,
                10,
                KillOptions::default(),
            )
            .unwrap();
            assert!(o.survived);
        }
        let est = killed_kernel_mc(
            &s,
            &Domain::FullSpace { d: 1 },
            &[0.0],
            &[0.5],
            1.0,
            4000,
            5,
        )
        .unwrap();
        let free = crate::free_kernel::free_kernel_mc(&s, 1.0, &[0.5], 1, 4000).unwrap();
        assert!((est.raw - cauchy_kernel(1.0, 0.5)).abs() < 4.0 * est.stderr);
        assert!(free.values[0] > 0.0);
    }

    #[test]
    fn start_outside_is_an_error() {
        let s = cauchy_sampler(1);
        let mut rng = rng::stream_rng(1, 0);
        let dom = Domain::HalfSpace { d: 1 };
        assert!(matches!(
            simulate_killed(&s, &mut rng, &dom, &[-1.0], 1.0, 10, KillOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn deep_start_survives_short_time() {
        let s = cauchy_sampler(2);
        let p = survival_prob(
            &s,
            &Domain::HalfSpace { d: 1 },
            &[100.0],
            0.01,
            10_000,
            20,
            KillOptions::default(),
        )
        .unwrap();
        assert!(p.value >= 0.999);
    }

    #[test]
    fn survival_increases_with_distance() {
        let s = cauchy_sampler(3);
        let dom = Domain::HalfSpace { d: 1 };
        let ps: Vec<f64> = [0.1, 0.4, 1.6]
            .iter()
            .map(|&x| {
                survival_prob(&s, &dom, &[x], 1.0, 20_000, 100, KillOptions::default())
                    .unwrap()
                    .value
            })
            .collect();
        assert!(ps[0] < ps[1] && ps[1] < ps[2], "{ps:?}");
    }

    #[test]
    fn finer_monitoring_catches_more_exits() {
        let s = cauchy_sampler(4);
        let dom = Domain::ball(1, 1.0);
        let coarse =
            survival_prob(&s, &dom, &[0.3], 0.5, 20_000, 10, KillOptions::default()).unwrap();
        let fine =
            survival_prob(&s, &dom, &[0.3], 0.5, 20_000, 200, KillOptions::default()).unwrap();
        assert!(fine.value <= coarse.value + 3.0 * (fine.stderr + coarse.stderr));
    }

    #[test]
    fn skbm_closed_form_cauchy() {
        let m = SubordinatorModel::stable(1.0).unwrap();
        let dom = Domain::HalfSpace { d: 1 };
        for (t, x, y) in [(0.5, 0.3, 0.8), (1.0, 1.0, 0.2), (0.1, 0.05, 0.07)] {
            let q = skbm_lower_quadrature(&m, &dom, t, &[x], &[y]).unwrap();
            let exact = cauchy_kernel(t, x - y) - cauchy_kernel(t, x + y);
            assert!((q - exact).abs() < 1e-8 * exact.max(1e-12), "{q} {exact}");
        }
        assert_eq!(
            skbm_lower_quadrature(&m, &dom, 0.5, &[0.3], &[0.0]).unwrap(),
            0.0
        );
        let deep = skbm_lower_quadrature(&m, &dom, 0.01, &[100.0], &[100.0]).unwrap();
        assert!((deep / cauchy_kernel(0.01, 0.0) - 1.0).abs() < 0.01);
        let ball = Domain::ball(1, 1.0);
        assert!(matches!(
            skbm_lower_quadrature(&m, &ball, 0.5, &[0.3], &[0.2]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn skbm_mc_matches_quadrature() {
        let m = SubordinatorModel::stable(1.0).unwrap();
        let dom = Domain::HalfSpace { d: 2 };
        let (x, y) = ([0.1, 0.3], [-0.2, 0.5]);
        let q = skbm_lower_quadrature(&m, &dom, 0.4, &x, &y).unwrap();
        let e = skbm_lower_mc(&cauchy_sampler(9), &dom, 0.4, &x, &y, 50_000).unwrap();
        assert!(
            (e.value - q).abs() < 4.0 * e.stderr,
            "{} {} {}",
            e.value,
            q,
            e.stderr
        );
    }

    #[test]
    fn decay_fit_recovers_exponential() {
        let surv: Vec<(f64, f64)> = (1..=5)
            .map(|k| (k as f64, 0.8 * (-1.3 * k as f64).exp()))
            .collect();
        let fit = fit_decay(&surv, 1_000_000).unwrap();
        assert!((fit.rate - 1.3).abs() < 1e-9);
        assert!(fit_decay(&surv[..1], 100).is_err());
    }
}
