//! Bounded derivative-free minimization.
//!
//! Nelder–Mead runs on a transformed space where log-tagged coordinates
//! are searched as `ln v`, so they stay strictly positive. Points outside
//! the bounds, and points where the objective is not finite, count as
//! `+∞`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Log,
}

pub fn transform(v: &[f64], tags: &[Transform]) -> Result<Vec<f64>> {
    if v.len() != tags.len() {
        return Err(Error::InvalidParameter(format!(
            "transform: {} values for {} tags",
            v.len(),
            tags.len()
        )));
    }
    v.iter()
        .zip(tags)
        .enumerate()
        .map(|(i, (&x, t))| match t {
            Transform::Identity => Ok(x),
            Transform::Log if x > 0.0 => Ok(x.ln()),
            Transform::Log => Err(Error::InvalidParameter(format!(
                "log transform of non-positive value {x} at coordinate {i}"
            ))),
        })
        .collect()
}

pub fn untransform(u: &[f64], tags: &[Transform]) -> Vec<f64> {
    u.iter()
        .zip(tags)
        .map(|(&x, t)| match t {
            Transform::Identity => x,
            Transform::Log => x.exp(),
        })
        .collect()
}

type ObjectiveFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// Objective on the original parameter scale.
pub struct Objective<'a> {
    f: ObjectiveFn<'a>,
    tags: Vec<Transform>,
    bounds: Option<ParamBounds>,
}

impl<'a> Objective<'a> {
    pub fn new(tags: Vec<Transform>, f: impl Fn(&[f64]) -> f64 + Sync + 'a) -> Self {
        Self {
            f: Box::new(f),
            tags,
            bounds: None,
        }
    }

    /// Positive-flagged bounds become log transforms.
    pub fn bounded(bounds: ParamBounds, f: impl Fn(&[f64]) -> f64 + Sync + 'a) -> Self {
        let tags = bounds
            .positive
            .iter()
            .map(|&p| {
                if p {
                    Transform::Log
                } else {
                    Transform::Identity
                }
            })
            .collect();
        Self {
            f: Box::new(f),
            tags,
            bounds: Some(bounds),
        }
    }

    pub fn dim(&self) -> usize {
        self.tags.len()
    }

    pub fn tags(&self) -> &[Transform] {
        &self.tags
    }

    /// Value at an original-scale point; `+∞` when infeasible.
    pub fn value(&self, x: &[f64]) -> f64 {
        if let Some(b) = &self.bounds {
            if !b.contains(x) {
                return f64::INFINITY;
            }
        }
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadOptions {
    /// Value spread tolerance, relative to `max(1, |f_best|)`.
    pub tol_f: f64,
    /// Simplex diameter tolerance on the transformed scale.
    pub tol_x: f64,
    /// Evaluation budget shared by all restarts.
    pub max_evals: usize,
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol_f: 1e-10,
            tol_x: 1e-8,
            max_evals: 20_000,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    /// Minimizer on the original scale.
    pub argmin: Vec<f64>,
    pub min_value: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Run<'o, 'a> {
    obj: &'o Objective<'a>,
    evals: usize,
    budget: usize,
}

impl Run<'_, '_> {
    fn eval(&mut self, u: &[f64]) -> f64 {
        self.evals += 1;
        self.obj.value(&untransform(u, &self.obj.tags))
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.budget
    }
}

fn initial_simplex(u0: &[f64]) -> Vec<Vec<f64>> {
    let mut simplex = vec![u0.to_vec()];
    for i in 0..u0.len() {
        let mut v = u0.to_vec();
        v[i] += (0.1 * u0[i].abs()).max(0.1);
        simplex.push(v);
    }
    simplex
}

/// One Nelder–Mead descent; returns `(best point, best value, converged)`.
fn descend(run: &mut Run, u0: &[f64], f0: f64, opts: &NelderMeadOptions) -> (Vec<f64>, f64, bool) {
    let n = u0.len();
    let mut pts = initial_simplex(u0);
    let mut vals = Vec::with_capacity(n + 1);
    vals.push(f0);
    for p in &pts[1..] {
        vals.push(run.eval(p));
    }

    let mut converged = false;
    loop {
        // order by value; stable sort keeps ties deterministic
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let diameter = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.tol_f * vals[0].abs().max(1.0) && diameter < opts.tol_x {
            converged = true;
            break;
        }
        if run.exhausted() {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64, p: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(p)
                .map(|(c, x)| c + t * (x - c))
                .collect()
        };

        let xr = along(-REFLECT, &pts[n]);
        let fr = run.eval(&xr);
        if fr < vals[0] {
            let xe = along(-REFLECT * EXPAND, &pts[n]);
            let fe = run.eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < vals[n] {
            let xc = along(-REFLECT * CONTRACT, &pts[n]);
            let fc = run.eval(&xc);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(CONTRACT, &pts[n]);
            let fc = run.eval(&xc);
            let ok = fc < vals[n];
            (xc, fc, ok)
        };
        if accept {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = pts[0]
                .iter()
                .zip(&pts[i])
                .map(|(b, x)| b + SHRINK * (x - b))
                .collect();
            vals[i] = run.eval(&p);
            pts[i] = p;
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    (pts[best].clone(), vals[best], converged)
}

/// Nelder–Mead with `opts.restarts` fresh-simplex restarts from the best point.
pub fn minimize(obj: &Objective, x0: &[f64], opts: &NelderMeadOptions) -> Result<OptimResult> {
    if x0.len() != obj.dim() {
        return Err(Error::InvalidParameter(format!(
            "start has {} coordinates, objective expects {}",
            x0.len(),
            obj.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite start".into()));
    }
    let u0 = transform(x0, &obj.tags)?;
    let mut run = Run {
        obj,
        evals: 0,
        budget: opts.max_evals.max(1),
    };

    let f0 = run.eval(&u0);
    let mut probe_feasible = f0.is_finite();
    if !probe_feasible {
        probe_feasible = initial_simplex(&u0)[1..]
            .iter()
            .any(|p| run.eval(p).is_finite());
    }
    if !probe_feasible {
        return Err(Error::InfeasibleStart);
    }

    let (mut best, mut best_f, mut converged) = descend(&mut run, &u0, f0, opts);
    let mut restarts_used = 0;
    while restarts_used < opts.restarts && converged && !run.exhausted() {
        restarts_used += 1;
        let (p, f, c) = descend(&mut run, &best, best_f, opts);
        if f <= best_f {
            best = p;
            best_f = f;
        }
        converged = c;
    }
    if !best_f.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    Ok(OptimResult {
        argmin: untransform(&best, &obj.tags),
        min_value: best_f,
        n_evals: run.evals,
        converged,
        restarts_used,
    })
}
