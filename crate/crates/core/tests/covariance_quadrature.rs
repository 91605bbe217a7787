//! The closed-form step covariance against an independent oracle: the exact
//! covariance of the frozen linear SDE, `∫₀^Δ e^{Ju} B Bᵀ e^{Jᵀu} du`,
//! computed by Simpson quadrature with a series matrix exponential.

use hypoest::model::{FhnParams, Model};
use hypoest::scheme::sigma_delta;
use hypoest::State;

type M2 = [[f64; 2]; 2];

fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn expm(j: &M2, t: f64) -> M2 {
    let a = [[j[0][0] * t, j[0][1] * t], [j[1][0] * t, j[1][1] * t]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    let mut sum = term;
    for k in 1..40 {
        term = mul(&term, &a);
        for row in &mut term {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..2 {
            for c in 0..2 {
                sum[i][c] += term[i][c];
            }
        }
    }
    sum
}

/// `[s11, s12, s22]` of the exact linear-SDE covariance with noise `(0, b)`.
fn exact_cov(j: &M2, b: f64, delta: f64) -> [f64; 3] {
    let n = 4000;
    let h = delta / n as f64;
    let mut acc = [0.0; 3];
    for k in 0..=n {
        let e = expm(j, k as f64 * h);
        let (gx, gy) = (e[0][1] * b, e[1][1] * b);
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc[0] += w * gx * gx;
        acc[1] += w * gx * gy;
        acc[2] += w * gy * gy;
    }
    acc.map(|v| v * h / 3.0)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn closed_form_matches_quadrature_to_leading_order() {
    for p in [FhnParams::SET_1, FhnParams::SET_2] {
        let m = p.model();
        let th = p.theta();
        for z in [State::ORIGIN, State::new(0.5, -0.3)] {
            let j = m.jacobian(z, &th);
            let mut prev: Option<f64> = None;
            for delta in [0.01, 0.001, 0.0001] {
                let s = sigma_delta(&m, &th, p.sigma, z, delta).unwrap();
                let ex = exact_cov(&j, p.sigma, delta);
                let err = [rel(s.s11, ex[0]), rel(s.s12, ex[1]), rel(s.s22, ex[2])]
                    .into_iter()
                    .fold(0.0, f64::max);
                // error is O(Δ) relative, shrinking about tenfold per decade
                assert!(err < 60.0 * delta, "Δ={delta} err={err}");
                if let Some(e) = prev {
                    assert!(err < 0.2 * e, "Δ={delta}: {err} vs {e}");
                }
                prev = Some(err);
            }
        }
    }
}

#[test]
fn full_drift_coefficient_beats_half_coefficient_variant() {
    let p = FhnParams::SET_1;
    let m = p.model();
    let th = p.theta();
    let z = State::new(0.2, 0.1);
    let j = m.jacobian(z, &th);
    let b2 = p.sigma * p.sigma;
    for delta in [0.01, 0.005, 0.001] {
        let s22 = sigma_delta(&m, &th, p.sigma, z, delta).unwrap().s22;
        let dy_a2 = j[1][1];
        let half = b2 * (delta + dy_a2 * delta * delta / 2.0 + dy_a2 * dy_a2 * delta.powi(3) / 3.0);
        let ex = exact_cov(&j, p.sigma, delta)[2];
        assert!(rel(s22, ex) < 0.2 * rel(half, ex), "Δ={delta}");
    }
}

#[test]
fn determinant_matches_quadrature_at_leading_order() {
    let p = FhnParams::SET_2;
    let m = p.model();
    let th = p.theta();
    let z = State::new(-0.4, 0.7);
    let j = m.jacobian(z, &th);
    let delta = 1e-3;
    let ex = exact_cov(&j, p.sigma, delta);
    let det_ex = ex[0] * ex[2] - ex[1] * ex[1];
    let det = sigma_delta(&m, &th, p.sigma, z, delta).unwrap().det();
    assert!(rel(det, det_ex) < 0.05, "{det} vs {det_ex}");
}
