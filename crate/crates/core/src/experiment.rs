//! Monte-Carlo replication studies.
//!
//! A replication simulates a fine LL path, downsamples it to the
//! observation grid and runs each requested estimator. Replications are
//! independent (each owns its noise streams), run on the rayon pool, and
//! are aggregated in replication order, so results do not depend on
//! scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, Dataset, EstimationResult, Method};
use crate::io::write_file;
use crate::model::{Model, ModelConfig, State};
use crate::optimize::NelderMeadOptions;
use crate::rng::{NoiseStream, Purpose};
use crate::scheme::{downsample, simulate_stream, Trajectory};

/// How each replication's optimizer start is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitPolicy {
    Truth,
    /// Each coordinate (θ and σ²) scaled by `1 + fraction·U(−1, 1)`.
    Perturbed {
        fraction: f64,
    },
    Explicit {
        theta: Vec<f64>,
        sigma2: f64,
    },
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::Perturbed { fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `(N, Δ)` observation designs.
    pub grid: Vec<(usize, f64)>,
    #[serde(default = "default_sweep_reps")]
    pub replications: usize,
    #[serde(default = "default_sweep_method")]
    pub method: Method,
}

fn default_sweep_reps() -> usize {
    20
}

fn default_sweep_method() -> Method {
    Method::Qv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default)]
    pub z: [f64; 2],
    #[serde(default = "default_diag_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_diag_nmc")]
    pub n_mc: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            z: [0.0, 0.0],
            deltas: default_diag_deltas(),
            n_mc: default_diag_nmc(),
        }
    }
}

fn default_diag_deltas() -> Vec<f64> {
    vec![0.02, 0.01, 0.005]
}

fn default_diag_nmc() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default = "defaults::fine_delta")]
    pub fine_delta: f64,
    #[serde(default = "defaults::fine_n")]
    pub fine_n: usize,
    #[serde(default = "defaults::stride")]
    pub stride: usize,
    #[serde(default = "defaults::n_replications")]
    pub n_replications: usize,
    #[serde(default = "defaults::methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub z0: [f64; 2],
    #[serde(default)]
    pub optim: NelderMeadOptions,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseConfig>,
}

mod defaults {
    use super::Method;

    pub fn fine_delta() -> f64 {
        0.001
    }
    pub fn fine_n() -> usize {
        500_000
    }
    pub fn stride() -> usize {
        10
    }
    pub fn n_replications() -> usize {
        100
    }
    pub fn methods() -> Vec<Method> {
        vec![Method::Linearized, Method::Qv]
    }
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    /// Design with the observation grid `(N, Δ)` obtained from a fine grid
    /// refined by `stride`.
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            fine_delta: defaults::fine_delta(),
            fine_n: defaults::fine_n(),
            stride: defaults::stride(),
            n_replications: defaults::n_replications(),
            methods: defaults::methods(),
            seed: 0,
            z0: [0.0, 0.0],
            optim: NelderMeadOptions::default(),
            init: InitPolicy::default(),
            output_dir: None,
            sweep: None,
            diagnose: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| config_err("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| config_err("model", e.to_string()))?;
        if !(self.fine_delta > 0.0) || !self.fine_delta.is_finite() {
            return Err(config_err("fine_delta", "must be positive"));
        }
        if self.stride < 1 {
            return Err(config_err("stride", "must be at least 1"));
        }
        if self.fine_n < 2 * self.stride {
            return Err(config_err(
                "fine_n",
                "must leave at least 2 observations after downsampling",
            ));
        }
        if self.n_replications < 1 {
            return Err(config_err("n_replications", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "at least one method is required"));
        }
        if self.z0.iter().any(|v| !v.is_finite()) {
            return Err(config_err("z0", "must be finite"));
        }
        if self.optim.max_evals == 0 || !(self.optim.tol_f >= 0.0) || !(self.optim.tol_x >= 0.0) {
            return Err(config_err("optim", "invalid optimizer options"));
        }
        match &self.init {
            InitPolicy::Perturbed { fraction } if !(0.0..1.0).contains(fraction) => {
                return Err(config_err("init.fraction", "must lie in [0, 1)"))
            }
            InitPolicy::Explicit { theta, sigma2 } => {
                if theta.len() != self.model.theta().len() {
                    return Err(config_err("init.theta", "wrong number of drift parameters"));
                }
                if !(*sigma2 > 0.0) {
                    return Err(config_err("init.sigma2", "must be positive"));
                }
            }
            _ => {}
        }
        if let Some(s) = &self.sweep {
            validate_grid(&s.grid).map_err(|e| config_err("sweep.grid", e.to_string()))?;
            if s.replications < 1 {
                return Err(config_err("sweep.replications", "must be at least 1"));
            }
        }
        if let Some(d) = &self.diagnose {
            if d.n_mc < 1000 {
                return Err(config_err("diagnose.n_mc", "must be at least 1000"));
            }
            if d.deltas.is_empty() || d.deltas.iter().any(|&v| !(v > 0.0)) {
                return Err(config_err("diagnose.deltas", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn z0(&self) -> State {
        State::new(self.z0[0], self.z0[1])
    }

    pub fn truth(&self) -> (Vec<f64>, f64) {
        let s = self.model.sigma();
        (self.model.theta().0, s * s)
    }

    /// Optimizer start for replication `r`.
    pub fn start_point(&self, model: &dyn Model, r: u64) -> (Vec<f64>, f64) {
        let (theta, sigma2) = self.truth();
        match &self.init {
            InitPolicy::Truth => (theta, sigma2),
            InitPolicy::Explicit { theta, sigma2 } => (theta.clone(), *sigma2),
            InitPolicy::Perturbed { fraction } => {
                let mut noise = NoiseStream::for_replication(self.seed, r, Purpose::Init);
                let mut draws = Vec::with_capacity(theta.len() + 2);
                while draws.len() < theta.len() + 1 {
                    let (a, b) = noise.uniform_pair();
                    draws.extend([a, b]);
                }
                let b = model.bounds();
                let theta = theta
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let p = v * (1.0 + fraction * (2.0 * draws[k] - 1.0));
                        p.clamp(b.lower[k], b.upper[k])
                    })
                    .collect();
                let s2 = sigma2 * (1.0 + fraction * (2.0 * draws[b.len()] - 1.0));
                (theta, s2)
            }
        }
    }

    /// Observed path for replication `r` on an explicit design.
    pub fn observe(
        &self,
        model: &dyn Model,
        fine_delta: f64,
        fine_n: usize,
        stride: usize,
        r: u64,
    ) -> Result<Trajectory> {
        let (theta, _) = self.truth();
        let fine = simulate_stream(
            model,
            &theta,
            self.model.sigma(),
            self.z0(),
            fine_delta,
            fine_n,
            self.seed,
            r,
        )?;
        let mut obs = downsample(&fine, stride)?;
        obs.meta.model = self.model.id().into();
        if let ModelConfig::Fhn(p) = &self.model {
            obs.meta.params.insert("s".into(), p.s);
        }
        Ok(obs)
    }
}

fn validate_grid(grid: &[(usize, f64)]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty design grid".into()));
    }
    for &(n, d) in grid {
        if n < 2 || !(d > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid design ({n}, {d})"
            )));
        }
    }
    for w in grid.windows(2) {
        let (t0, t1) = (w[0].0 as f64 * w[0].1, w[1].0 as f64 * w[1].1);
        if !(t1 > t0 && w[1].1 < w[0].1) {
            return Err(Error::InvalidParameter(
                "grid must have increasing N·Δ and decreasing Δ".into(),
            ));
        }
    }
    Ok(())
}

/// Sample mean and SD (denominator `n − 1`; zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InsufficientData(
            "cannot summarize an empty list".into(),
        ));
    }
    // Welford
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (v - mean);
    }
    let n = values.len();
    let sd = if n > 1 {
        (m2 / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary { mean, sd })
}

pub const DENSITY_GRID: usize = 200;

/// Estimator density on a uniform grid, or a point mass for constant input.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Curve {
        bandwidth: f64,
        grid: Vec<f64>,
        density: Vec<f64>,
    },
    PointMass(f64),
}

impl Density {
    /// Linear interpolation of the curve; `None` outside the grid.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        let Density::Curve { grid, density, .. } = self else {
            return None;
        };
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        if !(x >= lo && x <= hi) {
            return None;
        }
        let step = (hi - lo) / (grid.len() - 1) as f64;
        let k = (((x - lo) / step) as usize).min(grid.len() - 2);
        let w = (x - grid[k]) / step;
        Some(density[k] * (1.0 - w) + density[k + 1] * w)
    }

    /// Trapezoid integral of the curve.
    pub fn integral(&self) -> Option<f64> {
        let Density::Curve { grid, density, .. } = self else {
            return None;
        };
        Some(trapezoid(grid, density))
    }

    pub fn to_csv(&self) -> String {
        match self {
            Density::Curve { grid, density, .. } => {
                let mut s = String::from("x,density\n");
                for (x, d) in grid.iter().zip(density) {
                    let _ = writeln!(s, "{x},{d}");
                }
                s
            }
            Density::PointMass(v) => format!("x,point_mass\n{v},1\n"),
        }
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Gaussian KDE on 200 points over `[min − 2h, max + 2h]`, normalized to
/// unit trapezoid mass. `h` defaults to Silverman's `1.06·sd·n^(−1/5)`.
pub fn export_density(values: &[f64], bandwidth: Option<f64>) -> Result<Density> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(
            "density needs at least 2 values".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "non-finite value in density input".into(),
        ));
    }
    let Summary { mean, sd } = summarize(values)?;
    if sd == 0.0 || values.iter().all(|&v| v == values[0]) {
        return Ok(Density::PointMass(mean));
    }
    let n = values.len() as f64;
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => {
            return Err(Error::InvalidParameter(format!(
                "bandwidth {h} must be positive"
            )))
        }
        None => 1.06 * sd * n.powf(-0.2),
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (min - 2.0 * h, max + 2.0 * h);
    let step = (hi - lo) / (DENSITY_GRID - 1) as f64;
    let grid: Vec<f64> = (0..DENSITY_GRID).map(|k| lo + k as f64 * step).collect();
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    let mass = trapezoid(&grid, &density);
    for d in &mut density {
        *d /= mass;
    }
    Ok(Density::Curve {
        bandwidth: h,
        grid,
        density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub failures: usize,
    pub params: Vec<ParamSummary>,
}

impl MethodSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// One replication × method outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: Method,
    /// Reported parameters in [`MethodSummary::params`] order; empty on failure.
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub model: String,
    pub truth: BTreeMap<String, f64>,
    pub n_replications: usize,
    pub observation_delta: f64,
    pub observation_n: usize,
    pub methods: Vec<MethodSummary>,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl ReplicationSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// Parameters reported for `method`: drift names plus `sigma` (σ, not σ²).
pub fn reported_params(model: &dyn Model, method: Method) -> Vec<String> {
    let mut names: Vec<String> = match method {
        Method::ExplicitSigma => vec![],
        _ => model.param_names().iter().map(|s| s.to_string()).collect(),
    };
    names.push("sigma".into());
    names
}

fn reported_values(r: &EstimationResult) -> Vec<f64> {
    let mut v = r.theta_hat.as_ref().map_or_else(Vec::new, |t| t.0.clone());
    v.push(r.sigma_hat());
    v
}

fn run_replication(
    cfg: &ExperimentConfig,
    model: &dyn Model,
    r: usize,
) -> Vec<(Method, Result<EstimationResult>)> {
    let obs = cfg.observe(model, cfg.fine_delta, cfg.fine_n, cfg.stride, r as u64);
    let (theta0, sigma2_0) = cfg.start_point(model, r as u64);
    let (truth_theta, truth_sigma2) = cfg.truth();
    cfg.methods
        .iter()
        .map(|&m| {
            let res = obs.as_ref().map_err(clone_err).and_then(|t| {
                let data = Dataset::new(t, model)?;
                let est = estimate(
                    m,
                    &data,
                    &theta0,
                    sigma2_0,
                    &cfg.optim,
                    Some((&truth_theta, truth_sigma2)),
                )?;
                match &est.optim {
                    Some(o) if !o.converged => Err(Error::Optimizer(format!(
                        "{} did not converge in {} evaluations",
                        m.as_str(),
                        o.n_evals
                    ))),
                    _ => Ok(est),
                }
            });
            (m, res)
        })
        .collect()
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Diverged { step } => Error::Diverged { step: *step },
        other => Error::InvalidParameter(other.to_string()),
    }
}

/// Runs the replication study described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReplicationSummary> {
    cfg.validate()?;
    let model = cfg.model.build();
    let model: &dyn Model = model.as_ref();
    let outcomes: Vec<_> = (0..cfg.n_replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, model, r))
        .collect();

    let mut records = Vec::new();
    let mut methods = Vec::new();
    for (k, &m) in cfg.methods.iter().enumerate() {
        let names = reported_params(model, m);
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut failures = 0;
        for (r, per_method) in outcomes.iter().enumerate() {
            match &per_method[k].1 {
                Ok(est) => {
                    let values = reported_values(est);
                    for (col, v) in columns.iter_mut().zip(&values) {
                        col.push(*v);
                    }
                    records.push(ReplicationRecord {
                        replication: r,
                        method: m,
                        values,
                        error: None,
                    });
                }
                Err(e) => {
                    failures += 1;
                    records.push(ReplicationRecord {
                        replication: r,
                        method: m,
                        values: vec![],
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        if 2 * failures > cfg.n_replications {
            return Err(Error::Unstable {
                failures,
                total: cfg.n_replications,
            });
        }
        let params = names
            .into_iter()
            .zip(columns)
            .map(|(name, values)| {
                let s = summarize(&values)?;
                Ok(ParamSummary {
                    name,
                    mean: s.mean,
                    sd: s.sd,
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        methods.push(MethodSummary {
            method: m,
            failures,
            params,
        });
    }
    records.sort_by_key(|r| (r.replication, r.method));

    let (theta, sigma2) = cfg.truth();
    let mut truth: BTreeMap<String, f64> = model
        .param_names()
        .iter()
        .map(|s| s.to_string())
        .zip(theta)
        .collect();
    truth.insert("sigma".into(), sigma2.sqrt());
    Ok(ReplicationSummary {
        model: cfg.model.id().into(),
        truth,
        n_replications: cfg.n_replications,
        observation_delta: cfg.fine_delta * cfg.stride as f64,
        observation_n: cfg.fine_n / cfg.stride,
        methods,
        records,
    })
}

/// `method,<p>_mean,<p>_sd,...,failures` with one row per method.
pub fn table_csv(summary: &ReplicationSummary) -> String {
    let mut columns: Vec<String> = Vec::new();
    for m in &summary.methods {
        for p in &m.params {
            if !columns.contains(&p.name) {
                columns.push(p.name.clone());
            }
        }
    }
    let mut s = String::from("method");
    for c in &columns {
        let _ = write!(s, ",{c}_mean,{c}_sd");
    }
    s.push_str(",failures\n");
    for m in &summary.methods {
        s.push_str(m.method.as_str());
        for c in &columns {
            match m.param(c) {
                Some(p) => {
                    let _ = write!(s, ",{},{}", p.mean, p.sd);
                }
                None => s.push_str(",,"),
            }
        }
        let _ = writeln!(s, ",{}", m.failures);
    }
    s
}

/// Wide per-replication table; failed rows carry the error text.
pub fn estimates_csv(summary: &ReplicationSummary) -> String {
    let names: Vec<String> = summary.truth.keys().cloned().collect();
    let mut s = String::from("replication,method");
    for n in &names {
        let _ = write!(s, ",{n}");
    }
    s.push_str(",error\n");
    for rec in &summary.records {
        let _ = write!(s, "{},{}", rec.replication, rec.method.as_str());
        let ms = summary.method(rec.method);
        for n in &names {
            let v = ms
                .and_then(|m| m.params.iter().position(|p| &p.name == n))
                .and_then(|i| rec.values.get(i));
            match v {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        let err = rec.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(s, ",{err}");
    }
    s
}

/// Writes `summary.json`, `table.csv`, `estimates.csv` and one
/// `density_<method>_<param>.csv` per reported parameter.
pub fn write_outputs(summary: &ReplicationSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        write_file(&p, body.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put(
        "summary.json".into(),
        serde_json::to_string_pretty(summary)? + "\n",
    )?;
    put("table.csv".into(), table_csv(summary))?;
    put("estimates.csv".into(), estimates_csv(summary))?;
    for m in &summary.methods {
        for p in &m.params {
            if p.values.len() < 2 {
                continue;
            }
            let d = export_density(&p.values, None)?;
            put(
                format!("density_{}_{}.csv", m.method.as_str(), p.name),
                d.to_csv(),
            )?;
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub delta: f64,
    pub param: String,
    pub mean_abs_err: f64,
    pub sd: f64,
    pub failures: usize,
}

/// Absolute estimation errors across a `(N, Δ)` design grid. Each design
/// simulates on `Δ/stride` and downsamples by `cfg.stride`. Errors are for
/// the drift parameters and for σ² (not σ).
pub fn consistency_sweep(
    cfg: &ExperimentConfig,
    method: Method,
    grid: &[(usize, f64)],
    replications: usize,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    validate_grid(grid)?;
    if replications < 1 {
        return Err(Error::InvalidParameter(
            "replications must be at least 1".into(),
        ));
    }
    let model = cfg.model.build();
    let model: &dyn Model = model.as_ref();
    let (truth_theta, truth_sigma2) = cfg.truth();
    let mut names: Vec<String> = match method {
        Method::ExplicitSigma => vec![],
        _ => model.param_names().iter().map(|s| s.to_string()).collect(),
    };
    names.push("sigma2".into());
    let mut truth = match method {
        Method::ExplicitSigma => vec![],
        _ => truth_theta.clone(),
    };
    truth.push(truth_sigma2);

    let mut rows = Vec::new();
    for &(n, delta) in grid {
        let fine_delta = delta / cfg.stride as f64;
        let errs: Vec<Option<Vec<f64>>> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let t = cfg
                    .observe(model, fine_delta, n * cfg.stride, cfg.stride, r as u64)
                    .ok()?;
                let data = Dataset::new(&t, model).ok()?;
                let (theta0, sigma2_0) = cfg.start_point(model, r as u64);
                let est = estimate(method, &data, &theta0, sigma2_0, &cfg.optim, None).ok()?;
                let mut v = est.theta_hat.map_or_else(Vec::new, |t| t.0);
                v.push(est.sigma2_hat);
                Some(v.iter().zip(&truth).map(|(a, b)| (a - b).abs()).collect())
            })
            .collect();
        let ok: Vec<&Vec<f64>> = errs.iter().flatten().collect();
        let failures = replications - ok.len();
        for (k, name) in names.iter().enumerate() {
            let col: Vec<f64> = ok.iter().map(|e| e[k]).collect();
            let (mean_abs_err, sd) = match summarize(&col) {
                Ok(s) => (s.mean, s.sd),
                Err(_) => (f64::NAN, f64::NAN),
            };
            rows.push(SweepRow {
                n,
                delta,
                param: name.clone(),
                mean_abs_err,
                sd,
                failures,
            });
        }
    }
    Ok(rows)
}

/// `n,delta,param,mean_abs_err,sd`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("n,delta,param,mean_abs_err,sd\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.n, r.delta, r.param, r.mean_abs_err, r.sd
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FhnParams;

    fn two_pass(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let ss = v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        (m, (ss / (n - 1.0)).sqrt())
    }

    #[test]
    fn summarize_hand_cases() {
        assert_eq!(
            summarize(&[1.0, 1.0, 1.0]).unwrap(),
            Summary { mean: 1.0, sd: 0.0 }
        );
        assert_eq!(
            summarize(&[1.0, 2.0, 3.0]).unwrap(),
            Summary { mean: 2.0, sd: 1.0 }
        );
        let s = summarize(&[0.6, 0.7]).unwrap();
        assert!((s.mean - 0.65).abs() < 1e-15);
        assert!((s.sd - 0.005f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[4.2]).unwrap().sd, 0.0);
        assert!(summarize(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn summarize_matches_two_pass(v in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
            let s = summarize(&v).unwrap();
            let (m, sd) = two_pass(&v);
            proptest::prop_assert!((s.mean - m).abs() <= 1e-12 * m.abs().max(1.0));
            proptest::prop_assert!((s.sd - sd).abs() <= 1e-12 * sd.max(1e-300));
        }

        #[test]
        fn summarize_is_order_independent(mut v in proptest::collection::vec(-10f64..10.0, 2..50)) {
            let a = summarize(&v).unwrap();
            v.reverse();
            let b = summarize(&v).unwrap();
            proptest::prop_assert!((a.mean - b.mean).abs() <= 1e-12);
            proptest::prop_assert!((a.sd - b.sd).abs() <= 1e-12);
        }
    }

    #[test]
    fn density_of_normal_sample() {
        let mut s = NoiseStream::new(99, 0);
        let v: Vec<f64> = (0..5000)
            .flat_map(|_| {
                let (a, b) = s.gaussian_pair();
                [a, b]
            })
            .collect();
        let d = export_density(&v, None).unwrap();
        let at0 = d.value_at(0.0).unwrap();
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((at0 - phi0).abs() < 0.1 * phi0, "{at0}");
        assert!((d.integral().unwrap() - 1.0).abs() < 1e-3);
        match &d {
            Density::Curve {
                grid, bandwidth, ..
            } => {
                assert_eq!(grid.len(), DENSITY_GRID);
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                assert!((grid[0] - (lo - 2.0 * bandwidth)).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn density_edge_cases() {
        assert_eq!(
            export_density(&[0.3, 0.3], None).unwrap(),
            Density::PointMass(0.3)
        );
        assert!(export_density(&[1.0], None).is_err());
        let d = export_density(&[0.1, 0.5, 0.45, 0.9], Some(0.05)).unwrap();
        assert!((d.integral().unwrap() - 1.0).abs() < 1e-3);
        assert!(export_density(&[0.1, 0.5], Some(-1.0)).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[(5000, 0.02), (20000, 0.01), (100_000, 0.005)]).is_ok());
        assert!(validate_grid(&[(5000, 0.02), (5000, 0.01)]).is_err());
        assert!(validate_grid(&[(5000, 0.01), (50000, 0.02)]).is_err());
        assert!(validate_grid(&[]).is_err());
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = ExperimentConfig::from_json(
            r#"{"model":{"model":"fhn","gamma":1.5,"beta":0.3,"epsilon":0.1,"sigma":0.6,"s":0.01}}"#,
        )
        .unwrap();
        assert_eq!(cfg.fine_n, 500_000);
        assert_eq!(cfg.stride, 10);
        assert_eq!(cfg.init, InitPolicy::Perturbed { fraction: 0.2 });
        assert_eq!(cfg.model, ModelConfig::Fhn(FhnParams::SET_1));

        let err = ExperimentConfig::from_json(r#"{"model":{"model":"fhn","gamma":1,"beta":0,"epsilon":0.1,"sigma":0.6,"s":0},"strid":3}"#)
            .unwrap_err();
        assert!(err.to_string().contains("strid"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"model":{"model":"fhn","gamma":1,"beta":0,"epsilon":0.1,"sigma":0.6,"s":0},"stride":0}"#)
            .unwrap_err();
        assert!(err.to_string().contains("stride"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"fine_n":10}"#).unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
    }

    #[test]
    fn perturbed_start_is_deterministic_and_bounded() {
        let mut cfg = ExperimentConfig::new(ModelConfig::Fhn(FhnParams::SET_1));
        cfg.seed = 5;
        let m = cfg.model.build();
        let (a, sa) = cfg.start_point(m.as_ref(), 3);
        let (b, sb) = cfg.start_point(m.as_ref(), 3);
        assert_eq!((a.clone(), sa), (b, sb));
        let (c, _) = cfg.start_point(m.as_ref(), 4);
        assert_ne!(a, c);
        for (v, t) in a.iter().zip(FhnParams::SET_1.theta().iter()) {
            assert!((v / t - 1.0).abs() <= 0.2 + 1e-12);
        }
        assert!((sa / 0.36 - 1.0).abs() <= 0.2 + 1e-12);
    }

    #[test]
    fn small_experiment_aggregates_in_order() {
        let mut cfg = ExperimentConfig::new(ModelConfig::Fhn(FhnParams::SET_1));
        cfg.fine_n = 20_000;
        cfg.n_replications = 3;
        cfg.methods = vec![Method::Qv, Method::ExplicitSigma];
        cfg.seed = 1;
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(s.observation_n, 2000);
        let qv = s.method(Method::Qv).unwrap();
        assert_eq!(qv.params.len(), 4);
        assert_eq!(qv.params[3].name, "sigma");
        for p in &qv.params {
            assert_eq!(p.values.len() + qv.failures, 3);
        }
        // explicit σ does not depend on the optimizer start
        let e = s.method(Method::ExplicitSigma).unwrap();
        assert_eq!(e.params[0].values, qv.params[3].values);
        let table = table_csv(&s);
        assert!(table.starts_with("method,gamma_mean,gamma_sd,"));
        assert_eq!(table.lines().count(), 3);
        assert_eq!(estimates_csv(&s).lines().count(), 1 + 6);

        let again = run_experiment(&cfg).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn single_replication_has_zero_sd() {
        let mut cfg = ExperimentConfig::new(ModelConfig::Fhn(FhnParams::SET_2));
        cfg.fine_n = 10_000;
        cfg.n_replications = 1;
        cfg.methods = vec![Method::Qv];
        let s = run_experiment(&cfg).unwrap();
        assert!(s.methods[0].params.iter().all(|p| p.sd == 0.0));
    }

    #[test]
    fn unstable_experiment_is_an_error() {
        // a huge step makes the fine LL path blow up in every replication
        let mut cfg = ExperimentConfig::new(ModelConfig::Fhn(FhnParams::SET_1));
        cfg.fine_delta = 5.0;
        cfg.fine_n = 200;
        cfg.stride = 1;
        cfg.n_replications = 2;
        cfg.z0 = [3.0, 0.0];
        match run_experiment(&cfg) {
            Err(Error::Unstable { failures, total }) => assert_eq!((failures, total), (2, 2)),
            other => panic!("{other:?}"),
        }
    }
}
