//! Contrast-based estimation from fully observed discrete paths.
//!
//! * [`contrast`]: the hypoelliptic LL quasi-likelihood, with the quadratic
//!   form halved relative to the usual `-2 log L`.
//! * [`qv_criterion`]: least squares on the LL drift; no inverse of `Σ_Δ`.
//! * [`sigma_explicit`]: realized quadratic variation of the rough coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriftParams, Model, State};
use crate::optimize::{minimize, NelderMeadOptions, Objective, OptimResult};
use crate::scheme::{sigma_delta_from_partials, Trajectory};

pub use crate::experiment::{consistency_sweep, SweepRow};

/// Determinants below this make `Σ_Δ` numerically singular.
pub const DET_FLOOR: f64 = 1e-300;

/// Search range for σ² in joint estimation.
pub const SIGMA2_BOUNDS: (f64, f64) = (1e-8, 1e4);

/// Observations paired with the model they are fitted to.
#[derive(Clone, Copy)]
pub struct Dataset<'a> {
    pub trajectory: &'a Trajectory,
    pub model: &'a dyn Model,
}

impl<'a> Dataset<'a> {
    pub fn new(trajectory: &'a Trajectory, model: &'a dyn Model) -> Result<Self> {
        if trajectory.n() < 2 {
            return Err(Error::InsufficientData(format!(
                "need N >= 2 transitions, got {}",
                trajectory.n()
            )));
        }
        Ok(Self { trajectory, model })
    }

    pub fn n(&self) -> usize {
        self.trajectory.n()
    }

    pub fn delta(&self) -> f64 {
        self.trajectory.delta
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() == self.model.n_params() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "expected {} drift parameters, got {}",
                self.model.n_params(),
                theta.len()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastEval {
    /// `quad_term / 2 + logdet_term`.
    pub value: f64,
    /// `Σ rᵢᵀ Σ_Δ⁻¹ rᵢ`.
    pub quad_term: f64,
    /// `Σ log det Σ_Δ`.
    pub logdet_term: f64,
    pub n_terms: usize,
}

#[inline]
fn residual(
    model: &dyn Model,
    theta: &[f64],
    z: State,
    next: State,
    delta: f64,
) -> (f64, f64, [[f64; 2]; 2]) {
    let (a1, a2) = model.drift(z, theta);
    let j = model.jacobian(z, theta);
    let h = 0.5 * delta * delta;
    let mx = z.x + delta * a1 + h * (j[0][0] * a1 + j[0][1] * a2);
    let my = z.y + delta * a2 + h * (j[1][0] * a1 + j[1][1] * a2);
    (next.x - mx, next.y - my, j)
}

/// Linearized contrast at `(θ, σ²)`.
pub fn contrast(data: &Dataset, theta: &[f64], sigma2: f64) -> Result<ContrastEval> {
    data.check_theta(theta)?;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma^2 must be positive, got {sigma2}"
        )));
    }
    let delta = data.delta();
    let sigma = sigma2.sqrt();
    // det Σ_Δ = b⁴ (∂y a1)² Δ⁴ / 12 exactly for the second-order form
    let d4_12 = delta.powi(4) / 12.0;
    let states = &data.trajectory.states;
    let (mut quad, mut logdet) = (0.0, 0.0);
    for (i, w) in states.windows(2).enumerate() {
        let (z, next) = (w[0], w[1]);
        let (rx, ry, j) = residual(data.model, theta, z, next, delta);
        if !(rx.is_finite() && ry.is_finite()) {
            return Err(Error::NonFiniteResidual { index: i });
        }
        let b = data.model.diffusion(z, sigma);
        let b2 = b * b;
        let cov = sigma_delta_from_partials(j[0][1], j[1][1], b2, delta);
        let det = b2 * b2 * j[0][1] * j[0][1] * d4_12;
        if !(det >= DET_FLOOR) {
            return Err(Error::SingularCovariance { index: i, det });
        }
        quad += cov.quad_form_inv(rx, ry, det);
        logdet += det.ln();
    }
    Ok(ContrastEval {
        value: 0.5 * quad + logdet,
        quad_term: quad,
        logdet_term: logdet,
        n_terms: data.n(),
    })
}

/// `(1/(N−1)) Σ ‖Z_{i+1} − Ā(Z_i; θ)‖²` over all `N` transitions.
pub fn qv_criterion(data: &Dataset, theta: &[f64]) -> Result<f64> {
    data.check_theta(theta)?;
    let delta = data.delta();
    let mut sum = 0.0;
    for (i, w) in data.trajectory.states.windows(2).enumerate() {
        let (rx, ry, _) = residual(data.model, theta, w[0], w[1], delta);
        let sq = rx * rx + ry * ry;
        if !sq.is_finite() {
            return Err(Error::NonFiniteResidual { index: i });
        }
        sum += sq;
    }
    Ok(sum / (data.n() - 1) as f64)
}

/// `σ̄² = (1/(NΔ)) Σ (Y_{i+1} − Y_i)² / f²(Z_i)` for models with `b = σ·f`.
pub fn sigma_explicit(data: &Dataset) -> Result<f64> {
    let states = &data.trajectory.states;
    let mut sum = 0.0;
    for (i, w) in states.windows(2).enumerate() {
        let f = data
            .model
            .diffusion_factor(w[0])
            .ok_or(Error::NoDiffusionFactor)?;
        if f == 0.0 || !f.is_finite() {
            return Err(Error::ZeroDiffusionFactor { index: i });
        }
        let dy = w[1].y - w[0].y;
        sum += dy * dy / (f * f);
    }
    Ok(sum / (data.n() as f64 * data.delta()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Linearized,
    Qv,
    ExplicitSigma,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Linearized => "linearized",
            Method::Qv => "qv",
            Method::ExplicitSigma => "explicit-sigma",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linearized" => Ok(Method::Linearized),
            "qv" => Ok(Method::Qv),
            "explicit-sigma" => Ok(Method::ExplicitSigma),
            other => Err(Error::InvalidParameter(format!(
                "unknown method `{other}` (expected linearized, qv or explicit-sigma)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: Method,
    pub param_names: Vec<String>,
    /// Absent for the explicit-σ method.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta_hat: Option<DriftParams>,
    pub sigma2_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub optim: Option<OptimResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objective_at_truth: Option<f64>,
}

impl EstimationResult {
    pub fn sigma_hat(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }
}

fn names(model: &dyn Model) -> Vec<String> {
    model.param_names().iter().map(|s| s.to_string()).collect()
}

fn require_in_bounds(model: &dyn Model, theta: &[f64]) -> Result<()> {
    if model.bounds().contains(theta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "start {theta:?} is outside the parameter bounds"
        )))
    }
}

/// Joint minimizer of [`contrast`] over `(θ, σ²)`.
pub fn estimate_linearized(
    data: &Dataset,
    theta0: &[f64],
    sigma2_0: f64,
    opts: &NelderMeadOptions,
    truth: Option<(&[f64], f64)>,
) -> Result<EstimationResult> {
    data.check_theta(theta0)?;
    if !(sigma2_0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma^2 start must be positive, got {sigma2_0}"
        )));
    }
    require_in_bounds(data.model, theta0)?;
    let p = theta0.len();
    let bounds = data
        .model
        .bounds()
        .with_extra(SIGMA2_BOUNDS.0, SIGMA2_BOUNDS.1, true);
    let obj = Objective::bounded(bounds, |v: &[f64]| {
        contrast(data, &v[..p], v[p]).map_or(f64::INFINITY, |c| c.value)
    });
    let mut x0 = theta0.to_vec();
    x0.push(sigma2_0);
    let r = minimize(&obj, &x0, opts).map_err(|e| Error::Optimizer(format!("linearized: {e}")))?;
    let objective_at_truth = match truth {
        Some((t, s2)) => Some(contrast(data, t, s2)?.value),
        None => None,
    };
    Ok(EstimationResult {
        method: Method::Linearized,
        param_names: names(data.model),
        theta_hat: Some(DriftParams(r.argmin[..p].to_vec())),
        sigma2_hat: r.argmin[p],
        optim: Some(r),
        objective_at_truth,
    })
}

/// Minimizer of [`qv_criterion`]; σ² comes from [`sigma_explicit`].
pub fn estimate_qv(
    data: &Dataset,
    theta0: &[f64],
    opts: &NelderMeadOptions,
    truth: Option<&[f64]>,
) -> Result<EstimationResult> {
    data.check_theta(theta0)?;
    require_in_bounds(data.model, theta0)?;
    let sigma2_hat = sigma_explicit(data)?;
    let obj = Objective::bounded(data.model.bounds().clone(), |v: &[f64]| {
        qv_criterion(data, v).unwrap_or(f64::INFINITY)
    });
    let r = minimize(&obj, theta0, opts).map_err(|e| Error::Optimizer(format!("qv: {e}")))?;
    let objective_at_truth = match truth {
        Some(t) => Some(qv_criterion(data, t)?),
        None => None,
    };
    Ok(EstimationResult {
        method: Method::Qv,
        param_names: names(data.model),
        theta_hat: Some(DriftParams(r.argmin.clone())),
        sigma2_hat,
        optim: Some(r),
        objective_at_truth,
    })
}

pub fn estimate_explicit_sigma(data: &Dataset) -> Result<EstimationResult> {
    Ok(EstimationResult {
        method: Method::ExplicitSigma,
        param_names: vec![],
        theta_hat: None,
        sigma2_hat: sigma_explicit(data)?,
        optim: None,
        objective_at_truth: None,
    })
}

/// Runs `method` from the start `(θ₀, σ²₀)`.
pub fn estimate(
    method: Method,
    data: &Dataset,
    theta0: &[f64],
    sigma2_0: f64,
    opts: &NelderMeadOptions,
    truth: Option<(&[f64], f64)>,
) -> Result<EstimationResult> {
    match method {
        Method::Linearized => estimate_linearized(data, theta0, sigma2_0, opts, truth),
        Method::Qv => estimate_qv(data, theta0, opts, truth.map(|t| t.0)),
        Method::ExplicitSigma => estimate_explicit_sigma(data),
    }
}

/// Scaled contrast quantities whose limits characterize consistency.
pub mod diagnostics {
    use super::*;

    /// Copies the smooth-equation parameters (φ) of `truth` into `theta`.
    pub fn with_smooth_fixed(model: &dyn Model, theta: &[f64], truth: &[f64]) -> Vec<f64> {
        let mut t = theta.to_vec();
        for &i in model.smooth_params() {
            t[i] = truth[i];
        }
        t
    }

    /// `𝓛(θ, σ²)/N` with φ held at truth.
    pub fn variance_scaled(
        data: &Dataset,
        theta: &[f64],
        truth: &[f64],
        sigma2: f64,
    ) -> Result<f64> {
        let t = with_smooth_fixed(data.model, theta, truth);
        Ok(contrast(data, &t, sigma2)?.value / data.n() as f64)
    }

    /// `(Δ/N)·[𝓛(θ, σ₀²) − 𝓛(θ₀, σ₀²)]`.
    pub fn smooth_gap_scaled(
        data: &Dataset,
        theta: &[f64],
        truth: &[f64],
        sigma2_0: f64,
    ) -> Result<f64> {
        let gap = contrast(data, theta, sigma2_0)?.value - contrast(data, truth, sigma2_0)?.value;
        Ok(data.delta() / data.n() as f64 * gap)
    }

    /// `[𝓛(φ₀, ψ, σ₀²) − 𝓛(θ₀, σ₀²)] / (NΔ)`.
    pub fn rough_gap_scaled(
        data: &Dataset,
        theta: &[f64],
        truth: &[f64],
        sigma2_0: f64,
    ) -> Result<f64> {
        let t = with_smooth_fixed(data.model, theta, truth);
        let gap = contrast(data, &t, sigma2_0)?.value - contrast(data, truth, sigma2_0)?.value;
        Ok(gap / (data.n() as f64 * data.delta()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FhnParams, LinearModel, Mat2, ParamBounds};
    use crate::scheme::{drift_approx, sigma_delta, simulate, TrajectoryMeta};

    const P1: FhnParams = FhnParams::SET_1;

    fn traj(states: Vec<State>, delta: f64) -> Trajectory {
        let n = states.len() - 1;
        let meta = TrajectoryMeta {
            model: "test".into(),
            params: Default::default(),
            delta,
            n,
            seed: 0,
            stream: 0,
        };
        Trajectory::new(states, delta, meta).unwrap()
    }

    #[test]
    fn zero_residual_leaves_logdet_only() {
        let m = P1.model();
        let th = P1.theta();
        let z0 = State::new(0.3, -0.1);
        let z1 = drift_approx(&m, &th, z0, 0.01).unwrap();
        let z2 = drift_approx(&m, &th, z1, 0.01).unwrap();
        let t = traj(vec![z0, z1, z2], 0.01);
        let d = Dataset::new(&t, &m).unwrap();
        let c = contrast(&d, &th, 0.36).unwrap();
        let det0 = sigma_delta(&m, &th, 0.6, z0, 0.01).unwrap().det();
        let det1 = sigma_delta(&m, &th, 0.6, z1, 0.01).unwrap().det();
        assert!(c.quad_term.abs() < 1e-9);
        assert!((c.logdet_term - (det0.ln() + det1.ln())).abs() < 1e-9);
        assert_eq!(c.value, 0.5 * c.quad_term + c.logdet_term);
        // noiseless drift data is an exact QV fit
        assert!(qv_criterion(&d, &th).unwrap() <= 1e-20);
    }

    #[test]
    fn closed_form_determinant_matches_generic() {
        let m = P1.model();
        for (x, d) in [(0.0, 0.01), (1.3, 0.02), (-0.7, 1e-3)] {
            let c = sigma_delta(&m, &P1.theta(), 0.6, State::new(x, 0.2), d).unwrap();
            let closed = 0.6f64.powi(4) * 100.0 * d.powi(4) / 12.0;
            assert!(
                (c.det() - closed).abs() < 1e-6 * closed,
                "{} vs {closed}",
                c.det()
            );
        }
    }

    #[test]
    fn logdet_shift_under_sigma_scaling() {
        let m = P1.model();
        let t = simulate(&m, &P1.theta(), 0.6, State::ORIGIN, 0.01, 2000, 4).unwrap();
        let d = Dataset::new(&t, &m).unwrap();
        let base = contrast(&d, &P1.theta(), 0.36).unwrap();
        for c in [0.5, 1.7, 4.0] {
            let s = contrast(&d, &P1.theta(), 0.36 * c).unwrap();
            let shift = s.logdet_term - base.logdet_term;
            let want = 2.0 * 2000.0 * f64::ln(c);
            assert!(
                (shift - want).abs() <= 1e-9 * base.logdet_term.abs(),
                "{shift} {want}"
            );
            assert!((s.quad_term * c - base.quad_term).abs() <= 1e-9 * base.quad_term);
        }
    }

    #[test]
    fn contrast_rejects_bad_sigma() {
        let m = P1.model();
        let t = simulate(&m, &P1.theta(), 0.6, State::ORIGIN, 0.01, 10, 4).unwrap();
        let d = Dataset::new(&t, &m).unwrap();
        assert!(contrast(&d, &P1.theta(), 0.0).is_err());
        assert!(contrast(&d, &P1.theta(), -1.0).is_err());
        assert!(contrast(&d, &[1.0, 2.0], 0.3).is_err());
    }

    #[test]
    fn singular_covariance_is_reported_with_index() {
        // ∂y a1 = 0 for the linear model with m12 = 0
        let m = LinearModel::new();
        let t = traj(
            vec![State::ORIGIN, State::new(0.1, 0.1), State::new(0.2, 0.0)],
            0.01,
        );
        let d = Dataset::new(&t, &m).unwrap();
        match contrast(&d, &[0.0, 0.0, -1.0, 0.0], 1.0).unwrap_err() {
            Error::SingularCovariance { index, .. } => assert_eq!(index, 0),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn dataset_needs_two_transitions() {
        let m = P1.model();
        let t = traj(vec![State::ORIGIN, State::ORIGIN], 0.01);
        assert!(Dataset::new(&t, &m).is_err());
    }

    #[test]
    fn sigma_explicit_constant_increments() {
        let m = P1.model();
        for n in [2usize, 5, 40] {
            let states = (0..=n).map(|i| State::new(0.0, 0.1 * i as f64)).collect();
            let t = traj(states, 0.01);
            let s = sigma_explicit(&Dataset::new(&t, &m).unwrap()).unwrap();
            assert!((s - 1.0).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn sigma_explicit_ignores_level_shift() {
        let m = P1.model();
        let t = simulate(&m, &P1.theta(), 0.6, State::ORIGIN, 0.01, 500, 8).unwrap();
        let mut shifted = t.clone();
        for s in &mut shifted.states {
            s.y += 0.5;
        }
        let a = sigma_explicit(&Dataset::new(&t, &m).unwrap()).unwrap();
        let b = sigma_explicit(&Dataset::new(&shifted, &m).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    /// `b = σ·x` so the factor vanishes on `x = 0`.
    struct Multiplicative;

    impl Model for Multiplicative {
        fn id(&self) -> &str {
            "mult"
        }
        fn param_names(&self) -> &[&'static str] {
            &[]
        }
        fn smooth_params(&self) -> &[usize] {
            &[]
        }
        fn rough_params(&self) -> &[usize] {
            &[]
        }
        fn bounds(&self) -> &ParamBounds {
            unimplemented!()
        }
        fn drift(&self, z: State, _: &[f64]) -> (f64, f64) {
            (z.y, -z.x)
        }
        fn jacobian(&self, _: State, _: &[f64]) -> Mat2 {
            [[0.0, 1.0], [-1.0, 0.0]]
        }
        fn diffusion_factor(&self, z: State) -> Option<f64> {
            Some(z.x)
        }
    }

    #[test]
    fn sigma_explicit_uses_squared_factor() {
        // increments 0.2 with f = 2 give 0.04/4/Δ
        let states = (0..=4).map(|i| State::new(2.0, 0.2 * i as f64)).collect();
        let t = traj(states, 0.01);
        let s = sigma_explicit(&Dataset::new(&t, &Multiplicative).unwrap()).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
        let t = traj(
            vec![
                State::new(1.0, 0.0),
                State::new(0.0, 0.1),
                State::new(1.0, 0.2),
            ],
            0.01,
        );
        match sigma_explicit(&Dataset::new(&t, &Multiplicative).unwrap()).unwrap_err() {
            Error::ZeroDiffusionFactor { index } => assert_eq!(index, 1),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn linearized_rejects_zero_sigma_start() {
        let m = P1.model();
        let t = simulate(&m, &P1.theta(), 0.0, State::new(1.0, 0.0), 0.01, 200, 1).unwrap();
        let d = Dataset::new(&t, &m).unwrap();
        let err = estimate_linearized(&d, &P1.theta(), 0.0, &NelderMeadOptions::default(), None)
            .unwrap_err();
        assert!(err.to_string().contains("sigma^2"));
    }

    #[test]
    fn qv_recovers_truth_on_noiseless_drift_path() {
        let m = P1.model();
        let th = P1.theta();
        let mut states = vec![State::new(1.0, 0.0)];
        for _ in 0..400 {
            let z = *states.last().unwrap();
            states.push(drift_approx(&m, &th, z, 0.01).unwrap());
        }
        let t = traj(states, 0.01);
        let d = Dataset::new(&t, &m).unwrap();
        assert!(qv_criterion(&d, &th).unwrap() <= 1e-20 * 400.0);
        let r = estimate_qv(
            &d,
            &[1.3, 0.35, 0.12],
            &NelderMeadOptions::default(),
            Some(&th),
        )
        .unwrap();
        let hat = r.theta_hat.unwrap();
        for (a, b) in hat.iter().zip(th.iter()) {
            assert!((a - b).abs() < 1e-5, "{hat:?}");
        }
        assert!(r.objective_at_truth.unwrap() <= 1e-20);
    }

    #[test]
    fn diagnostics_fix_smooth_parameters() {
        let m = P1.model();
        let fixed = diagnostics::with_smooth_fixed(&m, &[9.0, 9.0, 9.0], &[1.5, 0.3, 0.1]);
        assert_eq!(fixed, vec![9.0, 9.0, 0.1]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Linearized, Method::Qv, Method::ExplicitSigma] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            let js = serde_json::to_string(&m).unwrap();
            assert_eq!(js, format!("\"{}\"", m.as_str()));
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
