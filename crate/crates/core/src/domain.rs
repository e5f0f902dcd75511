//! Open sets with an exact boundary distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    FullSpace {
        d: usize,
    },
    /// `{x : x_d > 0}`.
    HalfSpace {
        d: usize,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    ExteriorBall {
        center: Vec<f64>,
        radius: f64,
    },
    /// Disjoint open intervals on the line; every length and gap must be at
    /// least `r0`.
    IntervalUnion {
        intervals: Vec<(f64, f64)>,
        r0: f64,
    },
    Annulus {
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn distance(x: &[f64], y: &[f64]) -> f64 {
    norm(x.iter().zip(y).map(|(a, b)| a - b))
}

impl Domain {
    pub fn ball(d: usize, radius: f64) -> Self {
        Domain::Ball {
            center: vec![0.0; d],
            radius,
        }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Domain::IntervalUnion {
            intervals: vec![(a, b)],
            r0: b - a,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::FullSpace { d } | Domain::HalfSpace { d } => *d,
            Domain::Ball { center, .. }
            | Domain::ExteriorBall { center, .. }
            | Domain::Annulus { center, .. } => center.len(),
            Domain::IntervalUnion { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self {
            Domain::FullSpace { d } | Domain::HalfSpace { d } if *d == 0 => {
                bad("dimension must be at least 1".into())
            }
            Domain::Ball { center, radius } | Domain::ExteriorBall { center, radius }
                if center.is_empty() || !(*radius > 0.0) =>
            {
                bad(format!("ball needs a center and radius > 0, got {radius}"))
            }
            Domain::Annulus {
                center,
                inner,
                outer,
            } if center.is_empty() || !(*inner > 0.0 && outer > inner) => bad(format!(
                "annulus needs 0 < inner < outer, got {inner}, {outer}"
            )),
            Domain::IntervalUnion { intervals, r0 } => {
                if intervals.is_empty() || !(*r0 > 0.0) {
                    return bad("interval union needs intervals and r0 > 0".into());
                }
                for &(a, b) in intervals {
                    if !(b - a >= *r0) {
                        return bad(format!("interval ({a}, {b}) shorter than r0={r0}"));
                    }
                }
                for w in intervals.windows(2) {
                    if !(w[1].0 - w[0].1 >= *r0) {
                        return bad(format!(
                            "gap between ({}, {}) and ({}, {}) below r0={r0}",
                            w[0].0, w[0].1, w[1].0, w[1].1
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(
            self,
            Domain::Ball { .. } | Domain::IntervalUnion { .. } | Domain::Annulus { .. }
        )
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => 2.0 * radius,
            Domain::Annulus { outer, .. } => 2.0 * outer,
            Domain::IntervalUnion { intervals, .. } => {
                intervals.last().map_or(0.0, |l| l.1) - intervals.first().map_or(0.0, |f| f.0)
            }
            _ => f64::INFINITY,
        }
    }

    /// Distance from `x` to the complement; zero outside the domain.
    pub fn delta(&self, x: &[f64]) -> f64 {
        let v = match self {
            Domain::FullSpace { .. } => f64::INFINITY,
            Domain::HalfSpace { d } => x[d - 1],
            Domain::Ball { center, radius } => radius - distance(x, center),
            Domain::ExteriorBall { center, radius } => distance(x, center) - radius,
            Domain::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = distance(x, center);
                (r - inner).min(outer - r)
            }
            Domain::IntervalUnion { intervals, .. } => intervals
                .iter()
                .find(|&&(a, b)| x[0] > a && x[0] < b)
                .map_or(0.0, |&(a, b)| (x[0] - a).min(b - x[0])),
        };
        v.max(0.0)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.delta(x) > 0.0
    }

    pub fn require_inside(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dim()
            )));
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!("point {x:?} is not in the domain")));
        }
        Ok(())
    }

    /// A boundary point closest to `x` (for `x` inside the domain).
    pub fn nearest_boundary_point(&self, x: &[f64]) -> Vec<f64> {
        let radial = |center: &[f64], target: f64| {
            let r = distance(x, center);
            if r == 0.0 {
                let mut p = center.to_vec();
                p[0] += target;
                return p;
            }
            center
                .iter()
                .zip(x)
                .map(|(c, xi)| c + (xi - c) * target / r)
                .collect()
        };
        match self {
            Domain::FullSpace { .. } => x.to_vec(),
            Domain::HalfSpace { d } => {
                let mut p = x.to_vec();
                p[d - 1] = 0.0;
                p
            }
            Domain::Ball { center, radius } | Domain::ExteriorBall { center, radius } => {
                radial(center, *radius)
            }
            Domain::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = distance(x, center);
                radial(
                    center,
                    if r - inner < outer - r {
                        *inner
                    } else {
                        *outer
                    },
                )
            }
            Domain::IntervalUnion { intervals, .. } => {
                let (a, b) = intervals
                    .iter()
                    .copied()
                    .min_by(|p, q| {
                        let dp = (x[0] - p.0).abs().min((x[0] - p.1).abs());
                        let dq = (x[0] - q.0).abs().min((x[0] - q.1).abs());
                        dp.total_cmp(&dq)
                    })
                    .unwrap_or((0.0, 0.0));
                vec![if (x[0] - a).abs() < (x[0] - b).abs() {
                    a
                } else {
                    b
                }]
            }
        }
    }
}
