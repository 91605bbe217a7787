//! Two-dimensional hypoelliptic SDE models.
//!
//! A model describes the system
//!
//! ```text
//! dX = a1(X, Y; θ) dt
//! dY = a2(X, Y; θ) dt + b(X, Y; σ) dW
//! ```
//!
//! where noise enters only the rough coordinate `Y` and reaches the smooth
//! coordinate `X` through `∂y a1`. Partial derivatives are supplied
//! analytically and checked against finite differences by [`check_partials`].

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation of the process: `x` is the smooth coordinate, `y` the rough one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub const ORIGIN: State = State { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState {
                x: self.x,
                y: self.y,
            })
        }
    }
}

/// Row-major 2×2 matrix; for Jacobians `[[∂x a1, ∂y a1], [∂x a2, ∂y a2]]`.
pub type Mat2 = [[f64; 2]; 2];

/// Drift parameter vector θ. Which entries enter `a1` (φ) and which enter
/// `a2` (ψ) is declared by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DriftParams(pub Vec<f64>);

impl DriftParams {
    pub fn new(values: impl Into<Vec<f64>>) -> Self {
        Self(values.into())
    }
}

impl Deref for DriftParams {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DriftParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Box bounds on a parameter vector, with positivity flags for parameters
/// that are searched on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub positive: Vec<bool>,
}

impl ParamBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, positive: Vec<bool>) -> Result<Self> {
        let b = Self {
            lower,
            upper,
            positive,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.upper.len() != self.lower.len() || self.positive.len() != self.lower.len() {
            return Err(Error::InvalidParameter(
                "bounds vectors have mismatched lengths".into(),
            ));
        }
        for i in 0..self.lower.len() {
            if !(self.lower[i] < self.upper[i]) {
                return Err(Error::InvalidParameter(format!(
                    "bound {i}: lower {} must be below upper {}",
                    self.lower[i], self.upper[i]
                )));
            }
            if self.positive[i] && self.lower[i] < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "bound {i}: positive parameter has negative lower bound"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.len()
            && v.iter().enumerate().all(|(i, &x)| {
                x >= self.lower[i] && x <= self.upper[i] && (!self.positive[i] || x > 0.0)
            })
    }

    /// Appends one more parameter (used to add σ² to a drift bound set).
    pub fn with_extra(&self, lower: f64, upper: f64, positive: bool) -> Self {
        let mut b = self.clone();
        b.lower.push(lower);
        b.upper.push(upper);
        b.positive.push(positive);
        b
    }
}

/// A 2-D hypoelliptic SDE with analytic drift partials.
pub trait Model: Send + Sync {
    fn id(&self) -> &str;

    /// Names of the drift parameters, in θ order.
    fn param_names(&self) -> &[&'static str];

    /// Indices of θ entering `a1` (φ).
    fn smooth_params(&self) -> &[usize];

    /// Indices of θ entering `a2` (ψ).
    fn rough_params(&self) -> &[usize];

    fn bounds(&self) -> &ParamBounds;

    /// `(a1, a2)` at `z`.
    fn drift(&self, z: State, theta: &[f64]) -> (f64, f64);

    /// `[[∂x a1, ∂y a1], [∂x a2, ∂y a2]]` at `z`.
    fn jacobian(&self, z: State, theta: &[f64]) -> Mat2;

    /// Scalar diffusion `b(z; σ)` of the rough coordinate.
    fn diffusion(&self, z: State, sigma: f64) -> f64 {
        sigma * self.diffusion_factor(z).unwrap_or(1.0)
    }

    /// `f(z)` when `b = σ·f`; `None` if the diffusion does not factorize.
    fn diffusion_factor(&self, _z: State) -> Option<f64> {
        Some(1.0)
    }

    fn n_params(&self) -> usize {
        self.param_names().len()
    }
}

/// Parameters of the FitzHugh–Nagumo model
///
/// ```text
/// dX = (X − X³ − Y − s)/ε dt
/// dY = (γX − Y + β) dt + σ dW
/// ```
///
/// `s` is a known stimulus constant and is never estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhnParams {
    pub gamma: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub s: f64,
}

impl FhnParams {
    /// Excitatory regime.
    pub const SET_1: FhnParams = FhnParams {
        gamma: 1.5,
        beta: 0.3,
        epsilon: 0.1,
        sigma: 0.6,
        s: 0.01,
    };

    /// Oscillatory regime.
    pub const SET_2: FhnParams = FhnParams {
        gamma: 1.2,
        beta: 1.3,
        epsilon: 0.1,
        sigma: 0.4,
        s: 0.01,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.beta, self.epsilon, self.sigma, self.s];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite FHN parameter".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidParameter("sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// θ = (γ, β, ε).
    pub fn theta(&self) -> DriftParams {
        DriftParams(vec![self.gamma, self.beta, self.epsilon])
    }

    pub fn model(&self) -> Fhn {
        Fhn::new(self.s)
    }
}

pub fn fhn_drift(z: State, p: &FhnParams) -> Result<(f64, f64)> {
    z.ensure_finite()?;
    if p.epsilon == 0.0 {
        return Err(Error::InvalidParameter("epsilon must be non-zero".into()));
    }
    Ok(fhn_drift_raw(z, p.gamma, p.beta, p.epsilon, p.s))
}

pub fn fhn_jacobian(z: State, p: &FhnParams) -> Result<Mat2> {
    z.ensure_finite()?;
    if p.epsilon == 0.0 {
        return Err(Error::InvalidParameter("epsilon must be non-zero".into()));
    }
    Ok(fhn_jacobian_raw(z, p.gamma, p.epsilon))
}

#[inline]
fn fhn_drift_raw(z: State, gamma: f64, beta: f64, epsilon: f64, s: f64) -> (f64, f64) {
    let State { x, y } = z;
    ((x - x * x * x - y - s) / epsilon, gamma * x - y + beta)
}

#[inline]
fn fhn_jacobian_raw(z: State, gamma: f64, epsilon: f64) -> Mat2 {
    let x = z.x;
    [
        [(1.0 - 3.0 * x * x) / epsilon, -1.0 / epsilon],
        [gamma, -1.0],
    ]
}

const FHN_NAMES: [&str; 3] = ["gamma", "beta", "epsilon"];

/// FitzHugh–Nagumo model with θ = (γ, β, ε) and constant diffusion σ.
#[derive(Debug, Clone)]
pub struct Fhn {
    pub s: f64,
    bounds: ParamBounds,
}

impl Fhn {
    pub fn new(s: f64) -> Self {
        Self {
            s,
            bounds: ParamBounds {
                lower: vec![-20.0, -20.0, 1e-4],
                upper: vec![20.0, 20.0, 10.0],
                positive: vec![false, false, true],
            },
        }
    }

    pub fn with_bounds(s: f64, bounds: ParamBounds) -> Result<Self> {
        bounds.validate()?;
        if bounds.len() != 3 {
            return Err(Error::InvalidParameter("FHN bounds need 3 entries".into()));
        }
        Ok(Self { s, bounds })
    }
}

impl Model for Fhn {
    fn id(&self) -> &str {
        "fhn"
    }

    fn param_names(&self) -> &[&'static str] {
        &FHN_NAMES
    }

    fn smooth_params(&self) -> &[usize] {
        &[2]
    }

    fn rough_params(&self) -> &[usize] {
        &[0, 1]
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    #[inline]
    fn drift(&self, z: State, theta: &[f64]) -> (f64, f64) {
        fhn_drift_raw(z, theta[0], theta[1], theta[2], self.s)
    }

    #[inline]
    fn jacobian(&self, z: State, theta: &[f64]) -> Mat2 {
        fhn_jacobian_raw(z, theta[0], theta[2])
    }
}

const LINEAR_NAMES: [&str; 4] = ["a11", "a12", "a21", "a22"];

/// Linear drift `A(z) = M z` with θ = (m11, m12, m21, m22) and constant
/// diffusion σ. Hypoelliptic whenever `m12 ≠ 0`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    bounds: ParamBounds,
}

impl LinearModel {
    pub fn new() -> Self {
        Self {
            bounds: ParamBounds {
                lower: vec![-100.0; 4],
                upper: vec![100.0; 4],
                positive: vec![false; 4],
            },
        }
    }
}

impl Default for LinearModel {
    fn default() -> Self {
        Self::new()
    }
}

impl Model for LinearModel {
    fn id(&self) -> &str {
        "linear"
    }

    fn param_names(&self) -> &[&'static str] {
        &LINEAR_NAMES
    }

    fn smooth_params(&self) -> &[usize] {
        &[0, 1]
    }

    fn rough_params(&self) -> &[usize] {
        &[2, 3]
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    fn drift(&self, z: State, theta: &[f64]) -> (f64, f64) {
        (
            theta[0] * z.x + theta[1] * z.y,
            theta[2] * z.x + theta[3] * z.y,
        )
    }

    fn jacobian(&self, _z: State, theta: &[f64]) -> Mat2 {
        [[theta[0], theta[1]], [theta[2], theta[3]]]
    }
}

/// Model configuration as read from JSON, e.g.
/// `{"model":"fhn","gamma":1.5,"beta":0.3,"epsilon":0.1,"sigma":0.6,"s":0.01}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelConfig {
    Fhn(FhnParams),
    Linear(LinearParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub sigma: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Fhn(p) => p.validate(),
            ModelConfig::Linear(p) => {
                if [p.a11, p.a12, p.a21, p.a22, p.sigma]
                    .iter()
                    .any(|v| !v.is_finite())
                    || p.sigma < 0.0
                {
                    Err(Error::InvalidParameter("invalid linear parameters".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn build(&self) -> Box<dyn Model> {
        match self {
            ModelConfig::Fhn(p) => Box::new(p.model()),
            ModelConfig::Linear(_) => Box::new(LinearModel::new()),
        }
    }

    pub fn theta(&self) -> DriftParams {
        match self {
            ModelConfig::Fhn(p) => p.theta(),
            ModelConfig::Linear(p) => DriftParams(vec![p.a11, p.a12, p.a21, p.a22]),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            ModelConfig::Fhn(p) => p.sigma,
            ModelConfig::Linear(p) => p.sigma,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ModelConfig::Fhn(_) => "fhn",
            ModelConfig::Linear(_) => "linear",
        }
    }
}

/// `|∂y a1|` below this is treated as a hypoellipticity violation.
pub const HYPOELLIPTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypoViolation {
    pub index: usize,
    pub state: State,
    pub dy_a1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypoReport {
    pub ok: bool,
    pub n_probes: usize,
    pub violations: Vec<HypoViolation>,
}

/// Checks `|∂y a1| > 1e-12` at every probe.
pub fn check_hypoellipticity<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    probes: &[State],
) -> Result<HypoReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("no probe states given".into()));
    }
    let violations: Vec<_> = probes
        .iter()
        .enumerate()
        .filter_map(|(index, &state)| {
            let dy_a1 = model.jacobian(state, theta)[0][1];
            (!(dy_a1.abs() > HYPOELLIPTIC_TOL)).then_some(HypoViolation {
                index,
                state,
                dy_a1,
            })
        })
        .collect();
    Ok(HypoReport {
        ok: violations.is_empty(),
        n_probes: probes.len(),
        violations,
    })
}

pub const PARTIALS_REL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialMismatch {
    pub index: usize,
    pub state: State,
    /// `(row, col)` of the Jacobian entry.
    pub entry: (usize, usize),
    pub declared: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialsReport {
    pub ok: bool,
    pub max_relative_error: f64,
    pub worst: Option<PartialMismatch>,
}

/// Compares declared partials with central finite differences
/// (step `1e-6·max(1, |coordinate|)`). The relative error is measured
/// against `max(1, |declared|)` so that vanishing partials compare in
/// absolute terms.
pub fn check_partials<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    probes: &[State],
) -> Result<PartialsReport> {
    let mut worst: Option<PartialMismatch> = None;
    for (index, &z) in probes.iter().enumerate() {
        z.ensure_finite()?;
        let jac = model.jacobian(z, theta);
        let hx = 1e-6 * z.x.abs().max(1.0);
        let hy = 1e-6 * z.y.abs().max(1.0);
        let (px, mx) = (
            model.drift(State::new(z.x + hx, z.y), theta),
            model.drift(State::new(z.x - hx, z.y), theta),
        );
        let (py, my) = (
            model.drift(State::new(z.x, z.y + hy), theta),
            model.drift(State::new(z.x, z.y - hy), theta),
        );
        let fd = [
            [(px.0 - mx.0) / (2.0 * hx), (py.0 - my.0) / (2.0 * hy)],
            [(px.1 - mx.1) / (2.0 * hx), (py.1 - my.1) / (2.0 * hy)],
        ];
        for r in 0..2 {
            for c in 0..2 {
                let declared = jac[r][c];
                let rel = (fd[r][c] - declared).abs() / declared.abs().max(1.0);
                let rel = if rel.is_nan() { f64::INFINITY } else { rel };
                if worst.as_ref().is_none_or(|w| rel > w.relative_error) {
                    worst = Some(PartialMismatch {
                        index,
                        state: z,
                        entry: (r, c),
                        declared,
                        finite_difference: fd[r][c],
                        relative_error: rel,
                    });
                }
            }
        }
    }
    let max_relative_error = worst.as_ref().map_or(0.0, |w| w.relative_error);
    Ok(PartialsReport {
        ok: max_relative_error <= PARTIALS_REL_TOL,
        max_relative_error,
        worst,
    })
}
