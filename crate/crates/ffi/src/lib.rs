//! C ABI over `hypoest`.
//!
//! Models and trajectories are opaque heap handles released with their
//! `*_free` function. Fallible calls return a [`HypoStatus`] code and write
//! results through out-pointers; the message of the last failure on the
//! calling thread is available from [`hypo_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use hypoest::estimators::{self, Dataset, Method};
use hypoest::model::{Fhn, LinearModel};
use hypoest::optimize::NelderMeadOptions;
use hypoest::scheme::{self, TrajectoryMeta};
use hypoest::{Error, Model, State, Trajectory};

/// Status codes returned by every fallible function.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Diverged = 3,
    Numerical = 4,
    Optimizer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Estimation method selector for [`hypo_estimate`].
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypoMethod {
    Linearized = 0,
    Qv = 1,
    ExplicitSigma = 2,
}

/// Opaque drift model.
pub struct HypoModel(Box<dyn Model>);

/// Opaque observed trajectory.
pub struct HypoTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HypoStatus {
    match e {
        Error::Diverged { .. } | Error::DriftOverflow { .. } | Error::NonFiniteState { .. } => {
            HypoStatus::Diverged
        }
        Error::NotPsd { .. }
        | Error::SingularCovariance { .. }
        | Error::NonFiniteResidual { .. }
        | Error::ZeroDiffusionFactor { .. } => HypoStatus::Numerical,
        Error::Optimizer(_) | Error::InfeasibleStart => HypoStatus::Optimizer,
        _ => HypoStatus::InvalidArgument,
    }
}

struct Fail(HypoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    let status = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return HypoStatus::Ok as i32,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            HypoStatus::Panic
        }
    };
    status as i32
}

fn null(what: &str) -> Fail {
    Fail(HypoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn params<'a>(p: *const f64, n: usize, model: &dyn Model) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null("theta"));
    }
    if n != model.n_params() {
        return Err(Fail(
            HypoStatus::InvalidArgument,
            format!("expected {} drift parameters, got {n}", model.n_params()),
        ));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hypo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// FitzHugh–Nagumo model with known input current `s`.
///
/// # Safety
/// `out_model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hypo_fhn_model_new(s: f64, out_model: *mut *mut HypoModel) -> i32 {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        if !s.is_finite() {
            return Err(Fail(
                HypoStatus::InvalidArgument,
                format!("s = {s} is not finite"),
            ));
        }
        *slot = Box::into_raw(Box::new(HypoModel(Box::new(Fhn::new(s)))));
        Ok(())
    })
}

/// Linear drift `a1 = a11 x + a12 y`, `a2 = a21 x + a22 y`.
///
/// # Safety
/// `out_model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hypo_linear_model_new(out_model: *mut *mut HypoModel) -> i32 {
    guard(|| {
        *out(out_model, "out_model")? =
            Box::into_raw(Box::new(HypoModel(Box::new(LinearModel::new()))));
        Ok(())
    })
}

/// Number of drift parameters of `model`, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hypo_model_n_params(model: *const HypoModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_params())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hypo_model_free(model: *mut HypoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Simulates `n` local-linearization steps from `(x0, y0)`.
///
/// # Safety
/// `theta` must point to `n_theta` doubles; handles and `out_traj` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hypo_simulate(
    model: *const HypoModel,
    theta: *const f64,
    n_theta: usize,
    sigma: f64,
    x0: f64,
    y0: f64,
    delta: f64,
    n: usize,
    seed: u64,
    out_traj: *mut *mut HypoTrajectory,
) -> i32 {
    guard(|| {
        let m = deref(model, "model")?;
        let th = params(theta, n_theta, m.0.as_ref())?;
        let slot = out(out_traj, "out_traj")?;
        let t = scheme::simulate(m.0.as_ref(), th, sigma, State::new(x0, y0), delta, n, seed)?;
        *slot = Box::into_raw(Box::new(HypoTrajectory(t)));
        Ok(())
    })
}

/// Wraps caller-owned observations (copied) with step `delta`.
///
/// # Safety
/// `xs` and `ys` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hypo_trajectory_from_arrays(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    delta: f64,
    out_traj: *mut *mut HypoTrajectory,
) -> i32 {
    guard(|| {
        if xs.is_null() || ys.is_null() {
            return Err(null("xs/ys"));
        }
        let slot = out(out_traj, "out_traj")?;
        let (xs, ys) = (
            slice::from_raw_parts(xs, len),
            slice::from_raw_parts(ys, len),
        );
        let states = xs.iter().zip(ys).map(|(&x, &y)| State::new(x, y)).collect();
        let meta = TrajectoryMeta {
            model: "external".into(),
            params: Default::default(),
            delta,
            n: len.saturating_sub(1),
            seed: 0,
            stream: 0,
        };
        *slot = Box::into_raw(Box::new(HypoTrajectory(Trajectory::new(
            states, delta, meta,
        )?)));
        Ok(())
    })
}

/// Number of states (`N + 1`), or 0 for null.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hypo_trajectory_len(traj: *const HypoTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.states.len())
}

/// Sampling step, or NaN for null.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hypo_trajectory_delta(traj: *const HypoTrajectory) -> f64 {
    traj.as_ref().map_or(f64::NAN, |t| t.0.delta)
}

/// Copies the states into `xs`/`ys`, each with room for `cap` doubles.
///
/// # Safety
/// `xs` and `ys` must each point to `cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hypo_trajectory_copy(
    traj: *const HypoTrajectory,
    xs: *mut f64,
    ys: *mut f64,
    cap: usize,
) -> i32 {
    guard(|| {
        let t = &deref(traj, "traj")?.0;
        if xs.is_null() || ys.is_null() {
            return Err(null("xs/ys"));
        }
        let len = t.states.len();
        if cap < len {
            return Err(Fail(
                HypoStatus::BufferTooSmall,
                format!("buffer holds {cap} states, trajectory has {len}"),
            ));
        }
        let (xs, ys) = (
            slice::from_raw_parts_mut(xs, len),
            slice::from_raw_parts_mut(ys, len),
        );
        for (k, s) in t.states.iter().enumerate() {
            xs[k] = s.x;
            ys[k] = s.y;
        }
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hypo_trajectory_free(traj: *mut HypoTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Linearized contrast at `(θ, σ²)`.
///
/// # Safety
/// Handles must be live; `theta` must point to `n_theta` doubles.
#[no_mangle]
pub unsafe extern "C" fn hypo_contrast(
    model: *const HypoModel,
    traj: *const HypoTrajectory,
    theta: *const f64,
    n_theta: usize,
    sigma2: f64,
    out_value: *mut f64,
) -> i32 {
    guard(|| {
        let m = deref(model, "model")?;
        let t = deref(traj, "traj")?;
        let th = params(theta, n_theta, m.0.as_ref())?;
        let slot = out(out_value, "out_value")?;
        let data = Dataset::new(&t.0, m.0.as_ref())?;
        *slot = estimators::contrast(&data, th, sigma2)?.value;
        Ok(())
    })
}

/// Quadratic-variation criterion at `θ`.
///
/// # Safety
/// Handles must be live; `theta` must point to `n_theta` doubles.
#[no_mangle]
pub unsafe extern "C" fn hypo_qv_criterion(
    model: *const HypoModel,
    traj: *const HypoTrajectory,
    theta: *const f64,
    n_theta: usize,
    out_value: *mut f64,
) -> i32 {
    guard(|| {
        let m = deref(model, "model")?;
        let t = deref(traj, "traj")?;
        let th = params(theta, n_theta, m.0.as_ref())?;
        let slot = out(out_value, "out_value")?;
        let data = Dataset::new(&t.0, m.0.as_ref())?;
        *slot = estimators::qv_criterion(&data, th)?;
        Ok(())
    })
}

/// Explicit estimate of σ² from the rough-coordinate increments.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn hypo_sigma_explicit(
    model: *const HypoModel,
    traj: *const HypoTrajectory,
    out_sigma2: *mut f64,
) -> i32 {
    guard(|| {
        let m = deref(model, "model")?;
        let t = deref(traj, "traj")?;
        let slot = out(out_sigma2, "out_sigma2")?;
        let data = Dataset::new(&t.0, m.0.as_ref())?;
        *slot = estimators::sigma_explicit(&data)?;
        Ok(())
    })
}

/// Runs `method` from `(theta0, sigma2_0)` with default optimizer options.
/// `theta_out` receives `n_theta` doubles (left untouched for
/// `ExplicitSigma`); `sigma2_out` receives σ̂².
///
/// # Safety
/// Handles must be live; `theta0` and `theta_out` must hold `n_theta` doubles.
#[no_mangle]
pub unsafe extern "C" fn hypo_estimate(
    model: *const HypoModel,
    traj: *const HypoTrajectory,
    method: HypoMethod,
    theta0: *const f64,
    n_theta: usize,
    sigma2_0: f64,
    theta_out: *mut f64,
    sigma2_out: *mut f64,
) -> i32 {
    guard(|| {
        let m = deref(model, "model")?;
        let t = deref(traj, "traj")?;
        let th0 = params(theta0, n_theta, m.0.as_ref())?;
        if theta_out.is_null() {
            return Err(null("theta_out"));
        }
        let s2 = out(sigma2_out, "sigma2_out")?;
        let method = match method {
            HypoMethod::Linearized => Method::Linearized,
            HypoMethod::Qv => Method::Qv,
            HypoMethod::ExplicitSigma => Method::ExplicitSigma,
        };
        let data = Dataset::new(&t.0, m.0.as_ref())?;
        let res = estimators::estimate(
            method,
            &data,
            th0,
            sigma2_0,
            &NelderMeadOptions::default(),
            None,
        )?;
        if let Some(th) = &res.theta_hat {
            slice::from_raw_parts_mut(theta_out, n_theta).copy_from_slice(th);
        }
        *s2 = res.sigma2_hat;
        Ok(())
    })
}
