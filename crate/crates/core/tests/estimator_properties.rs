//! Monte-Carlo properties of the criteria on synthetic FitzHugh–Nagumo data.

use hypoest::estimators::diagnostics::{rough_gap_scaled, smooth_gap_scaled};
use hypoest::estimators::{contrast, estimate_linearized, qv_criterion, sigma_explicit, Dataset};
use hypoest::model::{FhnParams, LinearModel};
use hypoest::optimize::NelderMeadOptions;
use hypoest::rng::NoiseStream;
use hypoest::scheme::{simulate, TrajectoryMeta};
use hypoest::{State, Trajectory};

const P: FhnParams = FhnParams::SET_1;

fn path(seed: u64, n: usize) -> Trajectory {
    simulate(
        &P.model(),
        &P.theta(),
        P.sigma,
        State::ORIGIN,
        0.01,
        n,
        seed,
    )
    .unwrap()
}

fn from_states(states: Vec<State>, delta: f64) -> Trajectory {
    let meta = TrajectoryMeta {
        model: "test".into(),
        params: Default::default(),
        delta,
        n: states.len() - 1,
        seed: 0,
        stream: 0,
    };
    Trajectory::new(states, delta, meta).unwrap()
}

fn grid_around(theta: &[f64]) -> Vec<Vec<f64>> {
    let f = [0.5, 1.0, 1.5];
    let mut g = Vec::new();
    for a in f {
        for b in f {
            for c in f {
                g.push(vec![theta[0] * a, theta[1] * b, theta[2] * c]);
            }
        }
    }
    g
}

#[test]
fn contrast_prefers_truth_over_doubled_gamma() {
    let m = P.model();
    let th = P.theta();
    let mut doubled = th.0.clone();
    doubled[0] *= 2.0;
    let wins = (0..100)
        .filter(|&seed| {
            let t = path(seed, 50_000);
            let d = Dataset::new(&t, &m).unwrap();
            contrast(&d, &th, 0.36).unwrap().value < contrast(&d, &doubled, 0.36).unwrap().value
        })
        .count();
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn qv_truth_beats_surrounding_grid() {
    let m = P.model();
    let th = P.theta();
    let grid = grid_around(&th);
    let mut wins = 0;
    let mut argmin_hits = 0;
    for seed in 0..100 {
        let t = path(1000 + seed, 50_000);
        let d = Dataset::new(&t, &m).unwrap();
        let vals: Vec<f64> = grid.iter().map(|g| qv_criterion(&d, g).unwrap()).collect();
        let at_truth = qv_criterion(&d, &th).unwrap();
        assert!(vals.iter().all(|&v| v >= 0.0));
        if vals.iter().all(|&v| at_truth <= v) {
            wins += 1;
        }
        let best = vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        if grid[best] == th.0 {
            argmin_hits += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100");
    assert!(argmin_hits >= 95, "{argmin_hits}/100");
}

#[test]
fn explicit_sigma_on_brownian_rough_coordinate() {
    let (n, delta, sigma) = (50_000, 0.01f64, 0.4);
    let mut noise = NoiseStream::new(77, 0);
    let mut states = vec![State::ORIGIN];
    let mut y = 0.0;
    for k in 0..n {
        let (a, _) = noise.gaussian_pair();
        y += sigma * delta.sqrt() * a;
        states.push(State::new(k as f64 * 1e-3, y));
    }
    let t = from_states(states, delta);
    let m = LinearModel::new();
    let s2 = sigma_explicit(&Dataset::new(&t, &m).unwrap()).unwrap();
    let tol = 3.0 * (2.0 / n as f64).sqrt() * 0.16;
    assert!((s2 - 0.16).abs() < tol, "{s2}");
}

#[test]
fn explicit_sigma_constant_increments_and_shift() {
    let states: Vec<State> = (0..=20).map(|k| State::new(0.0, 0.1 * k as f64)).collect();
    let t = from_states(states.clone(), 0.01);
    let m = LinearModel::new();
    let s2 = sigma_explicit(&Dataset::new(&t, &m).unwrap()).unwrap();
    assert!((s2 - 1.0).abs() < 1e-12, "{s2}");

    let t = path(4, 5000);
    let fhn = P.model();
    let a = sigma_explicit(&Dataset::new(&t, &fhn).unwrap()).unwrap();
    let shifted: Vec<State> = t
        .states
        .iter()
        .map(|s| State::new(s.x, s.y + 3.0))
        .collect();
    let t2 = from_states(shifted, t.delta);
    let b = sigma_explicit(&Dataset::new(&t2, &fhn).unwrap()).unwrap();
    assert!((a - b).abs() <= 1e-12 * a);
}

#[test]
fn contrast_is_deterministic() {
    let m = P.model();
    let t = path(8, 10_000);
    let d = Dataset::new(&t, &m).unwrap();
    let a = contrast(&d, &P.theta(), 0.3).unwrap();
    let b = contrast(&d, &P.theta(), 0.3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_noise_start_is_rejected() {
    let m = P.model();
    let t = simulate(&m, &P.theta(), 0.0, State::new(0.5, 0.0), 0.01, 200, 1).unwrap();
    let d = Dataset::new(&t, &m).unwrap();
    // drift alone moves Y by O(Δ) per step
    assert!(sigma_explicit(&d).unwrap() < 1e-2);
    assert!(estimate_linearized(&d, &P.theta(), 0.0, &NelderMeadOptions::default(), None).is_err());
    assert!(contrast(&d, &P.theta(), 0.0).is_err());
}

#[test]
fn scaled_contrast_gaps_stabilize() {
    // rough parameters perturbed with φ at truth, and a smooth perturbation
    let m = P.model();
    let th = P.theta();
    let rough = vec![th[0] * 1.5, th[1] + 0.3, th[2]];
    let smooth = vec![th[0], th[1], th[2] * 1.2];
    let mut rough_gaps = Vec::new();
    let mut smooth_gaps = Vec::new();
    for n in [25_000, 50_000, 100_000] {
        let t = path(31, n);
        let d = Dataset::new(&t, &m).unwrap();
        rough_gaps.push(rough_gap_scaled(&d, &rough, &th, 0.36).unwrap());
        smooth_gaps.push(smooth_gap_scaled(&d, &smooth, &th, 0.36).unwrap());
    }
    for g in [&rough_gaps, &smooth_gaps] {
        assert!(g.iter().all(|&v| v > 0.0), "{g:?}");
        let spread = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            / g.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1.5, "{g:?}");
    }
}
