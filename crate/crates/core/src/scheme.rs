//! Local-linearization discretization of a hypoelliptic model.
//!
//! One step maps `Z_i` to a Gaussian with mean `Ā(Z_i)` (the second-order
//! expansion of the linearized flow) and covariance `Σ_Δ(Z_i)`, whose
//! smooth-coordinate variance is `O(Δ³)` and whose determinant is `O(Δ⁴)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, State};
use crate::rng::{NoiseStream, Purpose};

/// Symmetric 2×2 one-step covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix2 {
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
}

impl CovMatrix2 {
    pub fn det(&self) -> f64 {
        self.s11 * self.s22 - self.s12 * self.s12
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            s11: c * self.s11,
            s12: c * self.s12,
            s22: c * self.s22,
        }
    }

    /// `rᵀ Σ⁻¹ r` through the adjugate, given `det` precomputed.
    #[inline]
    pub fn quad_form_inv(&self, rx: f64, ry: f64, det: f64) -> f64 {
        (self.s22 * rx * rx - 2.0 * self.s12 * rx * ry + self.s11 * ry * ry) / det
    }
}

/// Lower-triangular factor `L` with `L·Lᵀ = Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerFactor2 {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl LowerFactor2 {
    #[inline]
    pub fn apply(&self, xi: (f64, f64)) -> (f64, f64) {
        (self.l11 * xi.0, self.l21 * xi.0 + self.l22 * xi.1)
    }

    pub fn reconstruct(&self) -> CovMatrix2 {
        CovMatrix2 {
            s11: self.l11 * self.l11,
            s12: self.l11 * self.l21,
            s22: self.l21 * self.l21 + self.l22 * self.l22,
        }
    }
}

const PSD_TOL: f64 = 1e-12;

pub fn cholesky2(sigma: &CovMatrix2) -> Result<LowerFactor2> {
    let CovMatrix2 { s11, s12, s22 } = *sigma;
    let scale = s11.abs().max(s22.abs());
    let not_psd = || Error::NotPsd { s11, s12, s22 };
    if !(s11.is_finite() && s12.is_finite() && s22.is_finite()) {
        return Err(not_psd());
    }
    if s11 < -PSD_TOL * scale || s22 < -PSD_TOL * scale || sigma.det() < -PSD_TOL * scale * scale {
        return Err(not_psd());
    }
    if s11 <= 0.0 {
        return Ok(LowerFactor2 {
            l11: 0.0,
            l21: 0.0,
            l22: s22.max(0.0).sqrt(),
        });
    }
    let l11 = s11.sqrt();
    let l21 = s12 / l11;
    let l22 = (s22 - l21 * l21).max(0.0).sqrt();
    Ok(LowerFactor2 { l11, l21, l22 })
}

/// `Ā(z) = z + Δ·A(z) + (Δ²/2)·J(z)·A(z)`.
#[inline]
pub fn drift_approx<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    z: State,
    delta: f64,
) -> Result<State> {
    if !(delta >= 0.0) {
        return Err(Error::NonPositiveStep(delta));
    }
    let (a1, a2) = model.drift(z, theta);
    let j = model.jacobian(z, theta);
    let h = 0.5 * delta * delta;
    let out = State {
        x: z.x + delta * a1 + h * (j[0][0] * a1 + j[0][1] * a2),
        y: z.y + delta * a2 + h * (j[1][0] * a1 + j[1][1] * a2),
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::DriftOverflow { x: z.x, y: z.y })
    }
}

/// Second-order covariance of the linearized step:
///
/// ```text
/// b² [ (∂y a1)² Δ³/3                      ∂y a1 Δ²/2 + ∂y a1 ∂y a2 Δ³/3 ]
///    [ ∂y a1 Δ²/2 + ∂y a1 ∂y a2 Δ³/3     Δ + ∂y a2 Δ² + (∂y a2)² Δ³/3   ]
/// ```
///
/// The `Δ²` coefficient of the (2,2) entry is `∂y a2` as given by the Itô
/// isometry of the linearized flow.
#[inline]
pub fn sigma_delta<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    z: State,
    delta: f64,
) -> Result<CovMatrix2> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveStep(delta));
    }
    let j = model.jacobian(z, theta);
    let b = model.diffusion(z, sigma);
    Ok(sigma_delta_from_partials(j[0][1], j[1][1], b * b, delta))
}

#[inline]
pub(crate) fn sigma_delta_from_partials(dy_a1: f64, dy_a2: f64, b2: f64, delta: f64) -> CovMatrix2 {
    let d2 = delta * delta;
    let d3 = d2 * delta;
    CovMatrix2 {
        s11: b2 * dy_a1 * dy_a1 * d3 / 3.0,
        s12: b2 * (dy_a1 * d2 / 2.0 + dy_a1 * dy_a2 * d3 / 3.0),
        s22: b2 * (delta + dy_a2 * d2 + dy_a2 * dy_a2 * d3 / 3.0),
    }
}

/// One LL step driven by the supplied standard-normal pair.
#[inline]
pub fn ll_step<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    z: State,
    delta: f64,
    xi: (f64, f64),
) -> Result<State> {
    let mean = drift_approx(model, theta, z, delta)?;
    let cov = sigma_delta(model, theta, sigma, z, delta)?;
    let (nx, ny) = cholesky2(&cov)?.apply(xi);
    Ok(State {
        x: mean.x + nx,
        y: mean.y + ny,
    })
}

/// One Euler–Maruyama step; only the first component of `xi` is used.
#[inline]
pub fn em_step<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    z: State,
    delta: f64,
    xi: (f64, f64),
) -> State {
    let (a1, a2) = model.drift(z, theta);
    State {
        x: z.x + delta * a1,
        y: z.y + delta * a2 + model.diffusion(z, sigma) * delta.sqrt() * xi.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

/// Equally spaced observations `Z_0..Z_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub delta: f64,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(states: Vec<State>, delta: f64, meta: TrajectoryMeta) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "trajectory needs at least 2 states, got {}",
                states.len()
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::NonPositiveStep(delta));
        }
        if let Some(bad) = states.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFiniteState { x: bad.x, y: bad.y });
        }
        Ok(Self {
            states,
            delta,
            meta,
        })
    }

    /// Number of transitions `N`.
    pub fn n(&self) -> usize {
        self.states.len() - 1
    }
}

pub const DIVERGENCE_BOUND: f64 = 1e6;

fn make_meta<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    delta: f64,
    n: usize,
    seed: u64,
    stream: u64,
) -> TrajectoryMeta {
    let mut params: BTreeMap<String, f64> = model
        .param_names()
        .iter()
        .zip(theta)
        .map(|(k, &v)| (k.to_string(), v))
        .collect();
    params.insert("sigma".into(), sigma);
    TrajectoryMeta {
        model: model.id().to_string(),
        params,
        delta,
        n,
        seed,
        stream,
    }
}

fn run_path<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    z0: State,
    delta: f64,
    n: usize,
    noise: &mut NoiseStream,
    mut step: impl FnMut(State, (f64, f64)) -> Result<State>,
) -> Result<Vec<State>> {
    if !(delta > 0.0) {
        return Err(Error::NonPositiveStep(delta));
    }
    if n < 1 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if theta.len() != model.n_params() {
        return Err(Error::InvalidParameter(format!(
            "expected {} drift parameters, got {}",
            model.n_params(),
            theta.len()
        )));
    }
    z0.ensure_finite()?;
    let mut states = Vec::with_capacity(n + 1);
    states.push(z0);
    let mut z = z0;
    for i in 0..n {
        z = step(z, noise.gaussian_pair()).map_err(|e| match e {
            Error::DriftOverflow { .. } | Error::NotPsd { .. } => Error::Diverged { step: i + 1 },
            e => e,
        })?;
        if !(z.x.abs() <= DIVERGENCE_BOUND && z.y.abs() <= DIVERGENCE_BOUND) {
            return Err(Error::Diverged { step: i + 1 });
        }
        states.push(z);
    }
    Ok(states)
}

/// Simulates `N` LL steps from `z0` on noise stream 0 of `seed`.
pub fn simulate<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    z0: State,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_stream(model, theta, sigma, z0, delta, n, seed, 0)
}

/// As [`simulate`] on the path stream of replication `replication`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_stream<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    z0: State,
    delta: f64,
    n: usize,
    seed: u64,
    replication: u64,
) -> Result<Trajectory> {
    let mut noise = NoiseStream::for_replication(seed, replication, Purpose::Path);
    let states = run_path(model, theta, z0, delta, n, &mut noise, |z, xi| {
        ll_step(model, theta, sigma, z, delta, xi)
    })?;
    let meta = make_meta(model, theta, sigma, delta, n, seed, replication);
    Trajectory::new(states, delta, meta)
}

pub fn euler_maruyama<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    z0: State,
    delta: f64,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut noise = NoiseStream::for_replication(seed, 0, Purpose::Path);
    let states = run_path(model, theta, z0, delta, n, &mut noise, |z, xi| {
        Ok(em_step(model, theta, sigma, z, delta, xi))
    })?;
    let meta = make_meta(model, theta, sigma, delta, n, seed, 0);
    Trajectory::new(states, delta, meta)
}

/// Keeps every `stride`-th state; the step grows accordingly.
pub fn downsample(t: &Trajectory, stride: usize) -> Result<Trajectory> {
    if stride < 1 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let states: Vec<State> = t.states.iter().step_by(stride).copied().collect();
    if states.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "stride {stride} leaves fewer than 2 states"
        )));
    }
    let delta = t.delta * stride as f64;
    let mut meta = t.meta.clone();
    meta.delta = delta;
    meta.n = states.len() - 1;
    Trajectory::new(states, delta, meta)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// Raw one-step moments of the LL residual `Z_1 − Ā(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMoments {
    pub mean_x_err: McEstimate,
    pub mean_y_err: McEstimate,
    pub var_x: McEstimate,
    pub var_y: McEstimate,
    pub cov_xy: McEstimate,
    pub n_mc: usize,
}

#[derive(Default)]
struct Accum {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Accum {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn estimate(&self) -> McEstimate {
        let mean = self.sum / self.n;
        let var = ((self.sum_sq - self.n * mean * mean) / (self.n - 1.0)).max(0.0);
        McEstimate {
            value: mean,
            se: (var / self.n).sqrt(),
        }
    }
}

/// Draws `n_mc` independent LL steps from the fixed state `z`.
pub fn one_step_moments_mc<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    sigma: f64,
    z: State,
    delta: f64,
    n_mc: usize,
    seed: u64,
) -> Result<StepMoments> {
    if n_mc < 1000 {
        return Err(Error::InvalidParameter("n_mc must be at least 1000".into()));
    }
    let mean = drift_approx(model, theta, z, delta)?;
    let mut noise = NoiseStream::for_replication(seed, 0, Purpose::Moments);
    // mean_x, mean_y, var_x, var_y, cov_xy
    let mut acc: [Accum; 5] = Default::default();
    for _ in 0..n_mc {
        let z1 = ll_step(model, theta, sigma, z, delta, noise.gaussian_pair())?;
        let (ex, ey) = (z1.x - mean.x, z1.y - mean.y);
        for (a, v) in acc.iter_mut().zip([ex, ey, ex * ex, ey * ey, ex * ey]) {
            a.push(v);
        }
    }
    Ok(StepMoments {
        mean_x_err: acc[0].estimate(),
        mean_y_err: acc[1].estimate(),
        var_x: acc[2].estimate(),
        var_y: acc[3].estimate(),
        cov_xy: acc[4].estimate(),
        n_mc,
    })
}
