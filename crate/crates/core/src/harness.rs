//! Scenario runner: parses an experiment configuration, evaluates the
//! estimators and envelopes on its grid, fits comparability constants and
//! writes `results.csv` plus `summary.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bernstein::{self, ModelKind, ScalingTarget, SubordinatorModel};
use crate::dirichlet::{self, KillOptions};
use crate::domain::{distance, Domain};
use crate::envelopes::{self, PiecewisePoly};
use crate::error::{Error, Result};
use crate::free_kernel;
use crate::levy::{Scheme, SubordinatorSampler, DEFAULT_EPSILON};
use crate::rng;
use crate::stats::percentile_nearest_rank;

/// Version of the `results.csv` column layout.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SBM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Identities,
    Scaling,
    Freekernel,
    Dirichlet,
    Survival,
    Green,
    Report,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Identities,
        Experiment::Scaling,
        Experiment::Freekernel,
        Experiment::Dirichlet,
        Experiment::Survival,
        Experiment::Green,
        Experiment::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Identities => "identities",
            Experiment::Scaling => "scaling",
            Experiment::Freekernel => "freekernel",
            Experiment::Dirichlet => "dirichlet",
            Experiment::Survival => "survival",
            Experiment::Green => "green",
            Experiment::Report => "report",
        }
    }

    fn stream_tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// A grid point given either as a scalar (one-dimensional) or a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Point {
    pub fn coords(&self) -> Vec<f64> {
        match self {
            Point::Scalar(v) => vec![*v],
            Point::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(default)]
    pub x: Vec<Point>,
    #[serde(default)]
    pub y: Vec<Point>,
    #[serde(default)]
    pub r: Vec<f64>,
    /// Base points `λ` of the scaling scan.
    #[serde(default)]
    pub lambda: Vec<f64>,
    /// Dimension for experiments without a domain.
    #[serde(default)]
    pub d: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    /// Exact for stable models, truncated compound Poisson otherwise.
    Auto,
    Exact,
    Cpp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_scheme")]
    pub scheme: SchemeChoice,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub bridge_correction: bool,
}

fn default_scheme() -> SchemeChoice {
    SchemeChoice::Auto
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeChoice::Auto,
            epsilon: DEFAULT_EPSILON,
            bridge_correction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Bound on the relative error of the `Φ`/`ψ` identity.
    #[serde(default = "default_identity_tol")]
    pub identity: f64,
    /// Bound on the relative error of the principal-value identity.
    #[serde(default = "default_identity_tol")]
    pub pv: f64,
    /// Largest admissible comparability constant.
    #[serde(default = "default_band")]
    pub band: f64,
    /// Standard errors of slack in the sandwich check.
    #[serde(default = "default_slack")]
    pub stderr_slack: f64,
    /// Gaussian exponents of the lower and upper envelopes.
    #[serde(default = "default_a")]
    pub a_lower: f64,
    #[serde(default = "default_a")]
    pub a_upper: f64,
    /// Cutoff below which the scaling scan does not look.
    #[serde(default = "default_scaling_a")]
    pub scaling_a: f64,
}

fn default_identity_tol() -> f64 {
    1e-6
}

fn default_band() -> f64 {
    50.0
}

fn default_slack() -> f64 {
    3.0
}

fn default_a() -> f64 {
    0.5
}

fn default_scaling_a() -> f64 {
    1.0
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: default_identity_tol(),
            pv: default_identity_tol(),
            band: default_band(),
            stderr_slack: default_slack(),
            a_lower: default_a(),
            a_upper: default_a(),
            scaling_a: default_scaling_a(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Normally supplied by the CLI subcommand.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    pub model: String,
    #[serde(default)]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Monitoring steps per path.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Horizon of the simulated part of the Green function integral.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub tolerance: Tolerances,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_n() -> usize {
    10_000
}

fn default_m() -> usize {
    200
}

fn default_t_max() -> f64 {
    4.0
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ScenarioConfig {
    pub fn new(experiment: Experiment, model: &str) -> Self {
        Self {
            experiment: Some(experiment),
            model: model.to_string(),
            domain: None,
            grid: Grid::default(),
            n: default_n(),
            m: default_m(),
            seed: 0,
            workers: None,
            t_max: default_t_max(),
            sampler: SamplerConfig::default(),
            tolerance: Tolerances::default(),
            out: default_out(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.experiment
            .ok_or_else(|| Error::Config("no experiment selected".into()))
    }

    pub fn parsed_model(&self) -> Result<SubordinatorModel> {
        self.model
            .parse::<SubordinatorModel>()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every invariant that does not require running the experiment.
    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment()?;
        self.parsed_model()?;
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config(format!(
                "n and m must be at least 1 (n={}, m={})",
                self.n, self.m
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let tol = &self.tolerance;
        for (name, v) in [
            ("identity", tol.identity),
            ("pv", tol.pv),
            ("a_lower", tol.a_lower),
            ("a_upper", tol.a_upper),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerance.{name}={v} must be positive")));
            }
        }
        if !(tol.band >= 1.0) || !(tol.stderr_slack >= 0.0) || !(tol.scaling_a >= 0.0) {
            return Err(Error::Config(
                "need band >= 1, stderr_slack >= 0, scaling_a >= 0".into(),
            ));
        }
        if !(self.sampler.epsilon > 0.0 && self.sampler.epsilon.is_finite()) {
            return Err(Error::Config("sampler.epsilon must be positive".into()));
        }
        if let Some(domain) = &self.domain {
            domain.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        let g = &self.grid;
        let need = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{exp} needs a nonempty {what}")))
            }
        };
        match exp {
            Experiment::Identities | Experiment::Scaling | Experiment::Report => {}
            Experiment::Freekernel => {
                need(!g.t.is_empty(), "grid.t")?;
                need(!g.r.is_empty(), "grid.r")?;
            }
            Experiment::Dirichlet | Experiment::Survival | Experiment::Green => {
                let domain = self
                    .domain
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{exp} needs a [domain] table")))?;
                if exp != Experiment::Green {
                    need(!g.t.is_empty(), "grid.t")?;
                }
                need(!g.x.is_empty(), "grid.x")?;
                if exp != Experiment::Survival {
                    need(!g.y.is_empty(), "grid.y")?;
                }
                let pts = g.x.iter().chain(if exp == Experiment::Survival {
                    [].iter()
                } else {
                    g.y.iter()
                });
                for p in pts {
                    let c = p.coords();
                    if c.len() != domain.dim() {
                        return Err(Error::Config(format!(
                            "grid point {c:?} has dimension {}, domain has {}",
                            c.len(),
                            domain.dim()
                        )));
                    }
                    domain
                        .require_inside(&c)
                        .map_err(|e| Error::Config(e.to_string()))?;
                }
                if exp == Experiment::Green {
                    if !domain.is_bounded() {
                        return Err(Error::Config(
                            "green needs a bounded domain".into(),
                        ));
                    }
                    if !(self.t_max > 0.0 && self.t_max.is_finite()) {
                        return Err(Error::Config("t_max must be positive".into()));
                    }
                }
            }
        }
        if g.t.iter().chain(&g.lambda).any(|v| !(v.is_finite() && *v > 0.0))
            || g.r.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config(
                "grid.t and grid.lambda must be positive, grid.r nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn sampler(&self, model: SubordinatorModel) -> Result<SubordinatorSampler> {
        let scheme = match self.sampler.scheme {
            SchemeChoice::Exact => Scheme::ExactStable,
            SchemeChoice::Cpp => Scheme::CppTruncation {
                epsilon: self.sampler.epsilon,
            },
            SchemeChoice::Auto if model.is_stable() => Scheme::ExactStable,
            SchemeChoice::Auto => Scheme::CppTruncation {
                epsilon: self.sampler.epsilon,
            },
        };
        SubordinatorSampler::new(model, scheme, self.seed, 0)
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn dim(&self) -> usize {
        self.grid
            .d
            .or(self.domain.as_ref().map(Domain::dim))
            .unwrap_or(1)
    }
}

/// Worker count: the flag wins over the config file, which wins over the
/// environment; one worker otherwise.
pub fn resolve_workers(
    flag: Option<usize>,
    config: Option<usize>,
    env: Option<&str>,
) -> Result<usize> {
    let w = match (flag, config, env) {
        (Some(w), _, _) | (None, Some(w), _) => w,
        (None, None, Some(v)) => v.trim().parse().map_err(|_| {
            Error::Config(format!("{WORKERS_ENV}='{v}' is not a worker count"))
        })?,
        (None, None, None) => 1,
    };
    if w == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    Ok(w)
}

/// One line of `results.csv`. Columns that do not apply are left empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub label: String,
    pub t: Option<f64>,
    pub x: String,
    pub y: String,
    pub r: Option<f64>,
    /// Experiment-specific parameter: `λ` for scaling rows, `b` for
    /// `h`-comparison rows.
    pub param: Option<f64>,
    pub lower: Option<f64>,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub upper: Option<f64>,
    pub flag: String,
}

impl Row {
    fn new(exp: Experiment, label: impl Into<String>, estimate: f64) -> Self {
        Self {
            experiment: exp.name().to_string(),
            label: label.into(),
            t: None,
            x: String::new(),
            y: String::new(),
            r: None,
            param: None,
            lower: None,
            estimate,
            stderr: None,
            upper: None,
            flag: String::new(),
        }
    }
}

fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub lower: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub upper: f64,
}

/// `(c_lower, c_upper)`: nearest-rank 1st percentile of estimate/lower
/// clamped to at most 1, and 99th percentile of estimate/upper clamped to at
/// least 1. Points with a vanishing envelope are left out of the respective
/// ratio.
pub fn fit_constants(points: &[RatioPoint]) -> Result<(f64, f64)> {
    if points.len() < 10 {
        return Err(Error::Config(format!(
            "fitting constants needs at least 10 grid points, got {}",
            points.len()
        )));
    }
    let ratios = |env: fn(&RatioPoint) -> f64| -> Vec<f64> {
        points
            .iter()
            .filter(|p| env(p) > 0.0)
            .map(|p| p.estimate / env(p))
            .collect()
    };
    let lo = ratios(|p| p.lower);
    let up = ratios(|p| p.upper);
    let c_lower = if lo.is_empty() {
        1.0
    } else {
        percentile_nearest_rank(&lo, 0.01).min(1.0)
    };
    let c_upper = if up.is_empty() {
        1.0
    } else {
        percentile_nearest_rank(&up, 0.99).max(1.0)
    };
    Ok((c_lower, c_upper))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub points: Vec<RatioPoint>,
    pub c_lower: f64,
    pub c_upper: f64,
    /// `max(c_upper, 1/c_lower)`.
    pub c: f64,
    pub band: f64,
    pub stderr_slack: f64,
    /// Points outside `band⁻¹·lower ≤ est ± slack ≤ band·upper`.
    pub band_violations: usize,
    /// Points outside the sandwich with the fitted constants themselves.
    pub fitted_violations: usize,
    pub pass: bool,
}

impl RatioReport {
    pub fn new(points: Vec<RatioPoint>, band: f64, stderr_slack: f64) -> Result<Self> {
        let (c_lower, c_upper) = fit_constants(&points)?;
        let c = c_upper.max(1.0 / c_lower);
        let outside = |lo: f64, hi: f64| {
            points
                .iter()
                .filter(|p| {
                    let s = stderr_slack * p.stderr;
                    !(lo * p.lower <= p.estimate + s && p.estimate - s <= hi * p.upper)
                })
                .count()
        };
        let band_violations = outside(1.0 / band, band);
        let fitted_violations = outside(c_lower, c_upper);
        let pass = band_violations == 0 && c.is_finite() && (1.0..=band).contains(&c);
        Ok(Self {
            points,
            c_lower,
            c_upper,
            c,
            band,
            stderr_slack,
            band_violations,
            fitted_violations,
            pass,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub csv_schema: u32,
    pub experiment: String,
    pub model: String,
    pub seed: u64,
    pub workers: usize,
    pub status: i32,
    pub pass: bool,
    pub runtime_seconds: f64,
    pub rows: usize,
    pub fit: Option<FitSummary>,
    pub metrics: BTreeMap<String, f64>,
    pub diagnostics: Vec<String>,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub c_lower: f64,
    pub c_upper: f64,
    pub c: f64,
    pub band: f64,
    pub stderr_slack: f64,
    pub band_violations: usize,
    pub fitted_violations: usize,
}

impl From<&RatioReport> for FitSummary {
    fn from(r: &RatioReport) -> Self {
        Self {
            c_lower: r.c_lower,
            c_upper: r.c_upper,
            c: r.c,
            band: r.band,
            stderr_slack: r.stderr_slack,
            band_violations: r.band_violations,
            fitted_violations: r.fitted_violations,
        }
    }
}

/// Everything an experiment produced, before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub report: Option<RatioReport>,
    pub metrics: BTreeMap<String, f64>,
    pub diagnostics: Vec<String>,
    pub pass: bool,
}

impl Outcome {
    fn from_rows(rows: Vec<Row>, cfg: &ScenarioConfig) -> Result<Self> {
        let points = rows
            .iter()
            .map(|r| RatioPoint {
                lower: r.lower.unwrap_or(f64::NAN),
                estimate: r.estimate,
                stderr: r.stderr.unwrap_or(0.0),
                upper: r.upper.unwrap_or(f64::NAN),
            })
            .collect();
        let report = RatioReport::new(points, cfg.tolerance.band, cfg.tolerance.stderr_slack)?;
        let mut diagnostics = Vec::new();
        let flagged = rows.iter().filter(|r| !r.flag.is_empty()).count();
        if flagged > 0 {
            diagnostics.push(format!("{flagged} rows carry a flag"));
        }
        if report.band_violations > 0 {
            diagnostics.push(format!(
                "{} points violate the sandwich with constant {}",
                report.band_violations, report.band
            ));
        }
        Ok(Self {
            rows,
            pass: report.pass,
            report: Some(report),
            metrics: BTreeMap::new(),
            diagnostics,
        })
    }

    pub fn status(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

/// Runs the experiment in memory on `workers` threads.
pub fn evaluate(cfg: &ScenarioConfig, workers: usize) -> Result<Outcome> {
    cfg.validate()?;
    rng::with_workers(workers, || match cfg.experiment()? {
        Experiment::Identities => run_identities(cfg),
        Experiment::Scaling => run_scaling(cfg),
        Experiment::Freekernel => run_freekernel(cfg),
        Experiment::Dirichlet => run_dirichlet(cfg),
        Experiment::Survival => run_survival(cfg),
        Experiment::Green => run_green(cfg),
        Experiment::Report => run_report(cfg),
    })?
}

pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let io = |e: csv::Error| Error::Config(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

/// Runs the scenario and writes `results.csv` and `summary.json` into
/// `cfg.out`. Returns the exit status together with the summary.
///
/// On a numeric failure the summary is still written, with status 3 and
/// the error among the diagnostics; configuration errors are returned.
pub fn run_scenario(cfg: &ScenarioConfig, workers: usize) -> Result<Summary> {
    cfg.validate()?;
    let start = Instant::now();
    let result = evaluate(cfg, workers);
    let runtime_seconds = start.elapsed().as_secs_f64();
    let (outcome, numeric_failure) = match result {
        Ok(o) => (o, false),
        Err(e) if e.is_config() => return Err(e),
        Err(e) => (
            Outcome {
                rows: Vec::new(),
                report: None,
                metrics: BTreeMap::new(),
                diagnostics: vec![format!("numeric error: {e}")],
                pass: false,
            },
            true,
        ),
    };
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", cfg.out.display())))?;
    write_csv(&cfg.out.join("results.csv"), &outcome.rows)?;
    let mut resolved = cfg.clone();
    resolved.workers = Some(workers);
    let summary = Summary {
        csv_schema: CSV_SCHEMA_VERSION,
        experiment: cfg.experiment()?.name().to_string(),
        model: cfg.parsed_model()?.id(),
        seed: cfg.seed,
        workers,
        status: if numeric_failure { 3 } else { outcome.status() },
        pass: outcome.pass,
        runtime_seconds,
        rows: outcome.rows.len(),
        fit: outcome.report.as_ref().map(FitSummary::from),
        metrics: outcome.metrics,
        diagnostics: outcome.diagnostics,
        config: resolved,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Numeric(format!("cannot serialize summary: {e}")))?;
    let path = cfg.out.join("summary.json");
    std::fs::write(&path, json + "\n")
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(summary)
}

/// Exit status for an error that prevented a summary from being written.
pub fn error_status(e: &Error) -> i32 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn run_identities(cfg: &ScenarioConfig) -> Result<Outcome> {
    let exp = Experiment::Identities;
    let model = cfg.parsed_model()?;
    let tol = &cfg.tolerance;
    let r_grid = if cfg.grid.r.is_empty() {
        log_grid(1e-3, 1.0, 13)
    } else {
        cfg.grid.r.clone()
    };
    let mut rows = Vec::new();
    let mut max_identity: f64 = 0.0;
    for &r in &r_grid {
        let err = bernstein::check_identity_phi_psi(&model, r)?;
        max_identity = max_identity.max(err);
        let mut row = Row::new(exp, "phi_psi", err);
        row.r = Some(r);
        row.upper = Some(tol.identity);
        rows.push(row);
    }
    // the principal-value identity does not involve the model
    let (big_r, s) = (1.0, 0.3);
    let mut max_pv: f64 = 0.0;
    let mut push_pv = |label: String, err: f64| {
        max_pv = max_pv.max(err);
        let mut row = Row::new(exp, label, err);
        row.r = Some(s);
        row.param = Some(big_r);
        row.upper = Some(tol.pv);
        rows.push(row);
    };
    push_pv("pv_constant".into(), envelopes::pv_identity_check(|_| 1.0, &[], big_r, s)?);
    let mut rng = rng::stream_rng(cfg.seed, exp.stream_tag());
    for i in 0..10 {
        let k = PiecewisePoly::random(&mut rng, big_r, 4, 3);
        let breaks = k.knots[1..k.knots.len() - 1].to_vec();
        let err = envelopes::pv_identity_check(|u| k.eval(u), &breaks, big_r, s)?;
        push_pv(format!("pv_random_{i}"), err);
    }
    let pass = max_identity <= tol.identity && max_pv <= tol.pv;
    let mut metrics = BTreeMap::new();
    metrics.insert("max_identity_error".into(), max_identity);
    metrics.insert("max_pv_error".into(), max_pv);
    Ok(Outcome {
        rows,
        report: None,
        metrics,
        diagnostics: Vec::new(),
        pass,
    })
}

fn run_scaling(cfg: &ScenarioConfig) -> Result<Outcome> {
    let exp = Experiment::Scaling;
    let model = cfg.parsed_model()?;
    let a = cfg.tolerance.scaling_a;
    let lambdas = if cfg.grid.lambda.is_empty() {
        log_grid(2.0 * a.max(1.0), 1e8, 40)
    } else {
        cfg.grid.lambda.clone()
    };
    let ts = if cfg.grid.t.is_empty() {
        log_grid(1.0, 1e6, 30)
    } else {
        cfg.grid.t.clone()
    };
    let mut rows = Vec::new();
    let mut metrics = BTreeMap::new();
    let mut pass = true;
    for (target, name) in [(ScalingTarget::Phi, "phi"), (ScalingTarget::H, "H")] {
        let cert = bernstein::estimate_scaling(&model, target, a, &lambdas, &ts)
            .map_err(|e| match e {
                Error::Domain(m) => Error::Config(m),
                other => other,
            })?;
        let f = |l: f64| match target {
            ScalingTarget::Phi => model.phi(l),
            ScalingTarget::H => model.h(l),
        };
        for &(l, t) in &cert.grid {
            let mut row = Row::new(exp, name, f(l * t) / f(l));
            row.t = Some(t);
            row.param = Some(l);
            row.lower = Some(cert.c_l_hat * t.powf(cert.gamma_hat));
            row.upper = Some(cert.c_u_hat * t.powf(cert.delta_hat));
            rows.push(row);
        }
        metrics.insert(format!("{name}_gamma"), cert.gamma_hat);
        metrics.insert(format!("{name}_delta"), cert.delta_hat);
        metrics.insert(format!("{name}_c_lower"), cert.c_l_hat);
        metrics.insert(format!("{name}_c_upper"), cert.c_u_hat);
        pass &= cert.holds_for(&model);
    }
    Ok(Outcome {
        rows,
        report: None,
        metrics,
        diagnostics: Vec::new(),
        pass,
    })
}

fn run_freekernel(cfg: &ScenarioConfig) -> Result<Outcome> {
    let exp = Experiment::Freekernel;
    let model = cfg.parsed_model()?;
    let sampler = cfg.sampler(model)?;
    let d = cfg.dim();
    let tol = &cfg.tolerance;
    let mut rows = Vec::new();
    for (i, &t) in cfg.grid.t.iter().enumerate() {
        let s = sampler
            .clone()
            .with_stream(rng::derive_stream(exp.stream_tag(), i as u64));
        let est = free_kernel::free_kernel_mc(&s, t, &cfg.grid.r, d, cfg.n)?;
        for (k, &r) in cfg.grid.r.iter().enumerate() {
            let mut row = Row::new(exp, "free", est.values[k]);
            row.t = Some(t);
            row.r = Some(r);
            row.stderr = Some(est.stderr[k]);
            row.lower = Some(free_kernel::free_envelope_lower(&model, t, r, d, tol.a_lower)?);
            row.upper = Some(free_kernel::free_envelope_upper(&model, t, r, d, tol.a_upper)?);
            rows.push(row);
        }
    }
    Outcome::from_rows(rows, cfg)
}

fn points(list: &[Point]) -> Vec<Vec<f64>> {
    list.iter().map(Point::coords).collect()
}

fn run_dirichlet(cfg: &ScenarioConfig) -> Result<Outcome> {
    let exp = Experiment::Dirichlet;
    let model = cfg.parsed_model()?;
    let sampler = cfg.sampler(model)?;
    let domain = cfg.domain.as_ref().expect("validated");
    let (xs, ys) = (points(&cfg.grid.x), points(&cfg.grid.y));
    let tol = &cfg.tolerance;
    let opts = KillOptions {
        bridge_correction: cfg.sampler.bridge_correction,
    };
    let mut rows = Vec::new();
    for (i, &t) in cfg.grid.t.iter().enumerate() {
        for (j, x) in xs.iter().enumerate() {
            let group = (i * xs.len() + j) as u64;
            let s = sampler
                .clone()
                .with_stream(rng::derive_stream(exp.stream_tag(), group));
            let est = dirichlet::killed_kernel_multi(&s, domain, x, &ys, t, cfg.n, cfg.m, opts)?;
            for (y, e) in ys.iter().zip(&est) {
                let env =
                    envelopes::dirichlet_envelope(&model, domain, t, x, y, tol.a_lower, tol.a_upper)?;
                let mut row = Row::new(exp, "killed", e.value);
                row.t = Some(t);
                row.x = fmt_point(x);
                row.y = fmt_point(y);
                row.r = Some(distance(x, y));
                row.stderr = Some(e.stderr);
                row.lower = Some(env.lower);
                row.upper = Some(env.upper);
                if e.bias_flag() {
                    row.flag = "negative_raw".into();
                }
                rows.push(row);
            }
        }
    }
    Outcome::from_rows(rows, cfg)
}

fn run_survival(cfg: &ScenarioConfig) -> Result<Outcome> {
    let exp = Experiment::Survival;
    let model = cfg.parsed_model()?;
    let sampler = cfg.sampler(model)?;
    let domain = cfg.domain.as_ref().expect("validated");
    let xs = points(&cfg.grid.x);
    let opts = KillOptions {
        bridge_correction: cfg.sampler.bridge_correction,
    };
    let mut rows = Vec::new();
    for (i, &t) in cfg.grid.t.iter().enumerate() {
        for (j, x) in xs.iter().enumerate() {
            let group = (i * xs.len() + j) as u64;
            let s = sampler
                .clone()
                .with_stream(rng::derive_stream(exp.stream_tag(), group));
            let est = dirichlet::survival_prob(&s, domain, x, t, cfg.n, cfg.m, opts)?;
            let env = envelopes::boundary_factor(&model, t, domain.delta(x))?;
            let mut row = Row::new(exp, "survival", est.value);
            row.t = Some(t);
            row.x = fmt_point(x);
            row.r = Some(domain.delta(x));
            row.stderr = Some(est.stderr);
            row.lower = Some(env);
            row.upper = Some(env);
            rows.push(row);
        }
    }
    Outcome::from_rows(rows, cfg)
}

fn run_green(cfg: &ScenarioConfig) -> Result<Outcome> {
    let exp = Experiment::Green;
    let model = cfg.parsed_model()?;
    let sampler = cfg.sampler(model)?;
    let domain = cfg.domain.as_ref().expect("validated");
    let (xs, ys) = (points(&cfg.grid.x), points(&cfg.grid.y));
    let mut rows = Vec::new();
    for (j, x) in xs.iter().enumerate() {
        let targets: Vec<Vec<f64>> = ys.iter().filter(|y| distance(x, y) > 0.0).cloned().collect();
        if targets.is_empty() {
            continue;
        }
        let s = sampler
            .clone()
            .with_stream(rng::derive_stream(exp.stream_tag(), j as u64));
        let est = envelopes::green_mc_multi(&s, domain, x, &targets, cfg.t_max, cfg.n, cfg.m)?;
        for (y, e) in targets.iter().zip(&est) {
            let env = envelopes::green_envelope(&model, domain, x, y)?;
            let mut row = Row::new(exp, "green", e.value);
            row.x = fmt_point(x);
            row.y = fmt_point(y);
            row.r = Some(distance(x, y));
            row.param = Some(e.tail_fraction);
            row.stderr = Some(e.stderr);
            row.lower = Some(env);
            row.upper = Some(env);
            if e.tail_flagged {
                row.flag = "tail".into();
            }
            rows.push(row);
        }
    }
    Outcome::from_rows(rows, cfg)
}

/// Deterministic consistency report: the literal `h_{T,d}` integral against
/// its closed comparison form for `d ∈ {1, 2}`, and for the logarithmic
/// example with `β = 1` also the explicit envelopes against the generic ones.
fn run_report(cfg: &ScenarioConfig) -> Result<Outcome> {
    let exp = Experiment::Report;
    let model = cfg.parsed_model()?;
    let t_cap = 2.0 * model.big_phi(0.5);
    let bs = if cfg.grid.lambda.is_empty() {
        log_grid(1e-6 * t_cap, 0.5 * t_cap, 10)
    } else {
        cfg.grid.lambda.clone()
    };
    let rs = if cfg.grid.r.is_empty() {
        log_grid(1e-3, 0.5, 10)
    } else {
        cfg.grid.r.clone()
    };
    let dims: Vec<usize> = cfg.grid.d.map(|d| vec![d]).unwrap_or_else(|| vec![1, 2]);
    let mut rows = Vec::new();
    for &d in &dims {
        for &b in &bs {
            for &r in &rs {
                let lit = envelopes::h_td(&model, b, r, t_cap, d)
                    .map_err(|e| Error::Config(format!("report grid: {e}")))?;
                let cmp = envelopes::h_comparison(&model, b, r, d)?;
                let mut row = Row::new(exp, format!("h_d{d}"), lit);
                row.r = Some(r);
                row.param = Some(b);
                row.lower = Some(cmp);
                row.upper = Some(cmp);
                rows.push(row);
            }
        }
    }
    if model.kind() == (ModelKind::LogExampleI { beta: 1.0 }) && !model.is_normalized() {
        let tol = &cfg.tolerance;
        for &d in &dims {
            for &t in &log_grid(1e-4, 0.4, 8) {
                for &r in &[0.0, 1e-3, 1e-2, 0.05, 0.2, 0.45] {
                    for &dx in &[1e-4, 1e-2, 0.1, 0.4] {
                        for &dy in &[1e-3, 0.2] {
                            let x = vec![0.0; d];
                            let mut y = vec![0.0; d];
                            y[0] = r;
                            let e8 = envelopes::example8_envelopes(
                                t, &x, &y, dx, dy, d, tol.a_lower, tol.a_upper,
                            )?;
                            let g = envelopes::dirichlet_envelope_from_deltas(
                                &model, t, r, dx, dy, d, tol.a_lower, tol.a_upper,
                            )?;
                            let mut row = Row::new(exp, format!("explicit_kernel_d{d}"), e8.upper);
                            row.t = Some(t);
                            row.x = fmt_point(&[dx]);
                            row.y = fmt_point(&[dy]);
                            row.r = Some(r);
                            row.lower = Some(g.upper);
                            row.upper = Some(g.upper);
                            rows.push(row);
                        }
                    }
                }
            }
        }
        let deltas = log_grid(1e-4, 0.45, 6);
        for &r in &log_grid(1e-3, 0.45, 10) {
            for &dx in &deltas {
                for &dy in &deltas {
                    let g8 = envelopes::example8_green_d2(&[0.0, 0.0], &[r, 0.0], dx, dy)?;
                    let g = envelopes::green_envelope_from_deltas(&model, r, dx, dy, 2)?;
                    let mut row = Row::new(exp, "explicit_green_d2", g8);
                    row.x = fmt_point(&[dx]);
                    row.y = fmt_point(&[dy]);
                    row.r = Some(r);
                    row.lower = Some(g);
                    row.upper = Some(g);
                    rows.push(row);
                }
            }
        }
    }
    Outcome::from_rows(rows, cfg)
}
