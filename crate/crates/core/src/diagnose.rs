//! Model and scheme diagnostics: hypoellipticity, declared partials,
//! one-step LL moments against their leading terms, and the `Δ⁴` order
//! of `det Σ_Δ`.

use serde::Serialize;

use crate::error::Result;
use crate::experiment::ExperimentConfig;
use crate::model::{check_hypoellipticity, check_partials, HypoReport, PartialsReport, State};
use crate::scheme::{one_step_moments_mc, sigma_delta, McEstimate, StepMoments};

/// Steps used for the determinant-order check.
pub const DET_ORDER_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];
/// Largest allowed relative change of `det/Δ⁴` between consecutive steps.
pub const DET_ORDER_TOL: f64 = 0.05;
/// Moment checks pass within this many MC standard errors.
pub const MOMENT_Z_TOL: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadingTerm {
    /// Scaled MC estimate, e.g. `var_y / Δ`.
    pub scaled: McEstimate,
    pub expected: f64,
    /// `|scaled − expected| / se`.
    pub z: f64,
    pub ok: bool,
}

impl LeadingTerm {
    fn new(est: McEstimate, scale: f64, expected: f64) -> Self {
        let scaled = McEstimate {
            value: est.value / scale,
            se: est.se / scale,
        };
        let z = (scaled.value - expected).abs() / scaled.se;
        Self {
            scaled,
            expected,
            z,
            ok: z <= MOMENT_Z_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub delta: f64,
    pub moments: StepMoments,
    /// `var_y/Δ → b²`
    pub var_y: LeadingTerm,
    /// `var_x/Δ³ → (∂y a1)² b²/3`
    pub var_x: LeadingTerm,
    /// `cov_xy/Δ² → ∂y a1 b²/2`
    pub cov_xy: LeadingTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetOrder {
    pub deltas: Vec<f64>,
    /// `det Σ_Δ / Δ⁴` per step.
    pub ratios: Vec<f64>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub model: String,
    pub z: State,
    pub hypoellipticity: HypoReport,
    pub partials: PartialsReport,
    pub moments: Vec<MomentCheck>,
    pub det_order: DetOrder,
}

impl DiagnoseReport {
    pub fn ok(&self) -> bool {
        self.hypoellipticity.ok
            && self.partials.ok
            && self.det_order.ok
            && self
                .moments
                .iter()
                .all(|m| m.var_y.ok && m.var_x.ok && m.cov_xy.ok)
    }
}

/// Probe states: `z` and a 5×5 grid on `[−2, 2]²`.
pub fn probe_states(z: State) -> Vec<State> {
    let mut v = vec![z];
    for i in 0..5 {
        for j in 0..5 {
            v.push(State::new(-2.0 + i as f64, -2.0 + j as f64));
        }
    }
    v
}

pub fn diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseReport> {
    cfg.validate()?;
    let dc = cfg.diagnose.clone().unwrap_or_default();
    let model = cfg.model.build();
    let model = model.as_ref();
    let (theta, _) = cfg.truth();
    let sigma = cfg.model.sigma();
    let z = State::new(dc.z[0], dc.z[1]);
    let probes = probe_states(z);

    let hypoellipticity = check_hypoellipticity(model, &theta, &probes)?;
    let partials = check_partials(model, &theta, &probes)?;

    let jac = model.jacobian(z, &theta);
    let b = model.diffusion(z, sigma);
    let (dy_a1, b2) = (jac[0][1], b * b);
    let moments = dc
        .deltas
        .iter()
        .map(|&delta| {
            let m = one_step_moments_mc(model, &theta, sigma, z, delta, dc.n_mc, cfg.seed)?;
            Ok(MomentCheck {
                delta,
                var_y: LeadingTerm::new(m.var_y, delta, b2),
                var_x: LeadingTerm::new(m.var_x, delta.powi(3), dy_a1 * dy_a1 * b2 / 3.0),
                cov_xy: LeadingTerm::new(m.cov_xy, delta * delta, dy_a1 * b2 / 2.0),
                moments: m,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ratios = DET_ORDER_DELTAS
        .iter()
        .map(|&d| Ok(sigma_delta(model, &theta, sigma, z, d)?.det() / d.powi(4)))
        .collect::<Result<Vec<f64>>>()?;
    let ok = ratios[0] > 0.0
        && ratios
            .windows(2)
            .all(|w| w[1] > 0.0 && ((w[1] - w[0]) / w[0]).abs() < DET_ORDER_TOL);

    Ok(DiagnoseReport {
        model: cfg.model.id().into(),
        z,
        hypoellipticity,
        partials,
        moments,
        det_order: DetOrder {
            deltas: DET_ORDER_DELTAS.to_vec(),
            ratios,
            ok,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::DiagnoseConfig;
    use crate::model::{FhnParams, ModelConfig};

    #[test]
    fn fhn_set1_diagnostics_pass() {
        let mut cfg = ExperimentConfig::new(ModelConfig::Fhn(FhnParams::SET_1));
        cfg.diagnose = Some(DiagnoseConfig {
            n_mc: 10_000,
            ..Default::default()
        });
        let r = diagnose(&cfg).unwrap();
        assert!(
            r.hypoellipticity.ok && r.partials.ok && r.det_order.ok,
            "{r:#?}"
        );
        assert_eq!(r.moments.len(), 3);
        // b⁴(∂y a1)²/12 with ∂y a1 = −1/ε
        let expect = 0.6f64.powi(4) * 100.0 / 12.0;
        for q in &r.det_order.ratios {
            assert!((q / expect - 1.0).abs() < 1e-9);
        }
    }
}
