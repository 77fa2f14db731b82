//! End-to-end checks of the solver and the oracles on the benchmark problems.

use rons_core::integrator::EquilibriumStop;
use rons_core::oracle::{
    empirical_moments, harmonic_moment_odes, l2_relative_error, simulate_sde, EnsembleSpec, EquilibriumRef,
    InitialSampler, NormSpec, OuExact, SdeScheme,
};
use rons_core::problems;
use rons_core::{integrate, integrate_with, Coefficient, DriftModel, HilbertChoice, IntegrateOptions, MixtureState, TimeGrid};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b)
}

#[test]
fn harmonic_single_term_mean_follows_moment_odes() {
    let p = problems::harmonic_trap(1, 2.0).unwrap();
    let tr = integrate_with(&p.drift, &p.initial, &p.space, p.alpha, &p.grid, &p.options).unwrap();
    let times: Vec<f64> = tr.samples.iter().map(|s| s.t).collect();
    let reference = harmonic_moment_odes(
        problems::harmonic_forcing(),
        problems::HARMONIC_GAMMA,
        problems::HARMONIC_DIM,
        problems::HARMONIC_NU,
        &p.initial.mean(),
        &p.initial.covariance(),
        &times,
    )
    .unwrap();
    for (s, m) in tr.samples.iter().zip(&reference) {
        assert!(rel(&s.state.mean(), &m.mean) <= 1e-6, "t = {}", s.t);
    }
    assert!(tr.max_conservation_error() <= 1e-8);
}

#[test]
fn single_thread_runs_are_bitwise_identical() {
    let p = problems::bistable(2, false).unwrap();
    let grid = TimeGrid::new(0.0, 2.0).tolerances(1e-8, 1e-10).uniform_checkpoints(4);
    let a = integrate(&p.drift, &p.initial, &p.space, p.alpha, &grid).unwrap();
    let b = integrate(&p.drift, &p.initial, &p.space, p.alpha, &grid).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.t.to_bits(), y.t.to_bits());
        for (u, v) in x.state.to_flat().iter().zip(y.state.to_flat()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}

#[test]
fn ou_error_falls_with_fifth_order_in_step_count() {
    let exact = OuExact { gamma: 1.0, sigma: 1.0 };
    let drift = DriftModel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let mut points = Vec::new();
    for tol in [1e-6, 1e-8, 1e-10] {
        let grid = TimeGrid::new(0.01, 2.0).tolerances(tol, tol * 1e-2).initial_step(1e-4);
        let tr = integrate(&drift, &exact.state(0.01), &HilbertChoice::l2_symbolic(), 0.0, &grid).unwrap();
        let s = tr.last();
        let err = (s.state.width(0) / exact.width(s.t) - 1.0).abs();
        points.push((tr.stats.accepted as f64, err));
    }
    let (n0, e0) = points[0];
    let (n2, e2) = points[2];
    let order = -(e2 / e0).ln() / (n2 / n0).ln();
    assert!(order >= 4.0, "observed order {order}, points {points:?}");
}

#[test]
fn ou_velocity_decays_at_the_closed_form_rate() {
    let gamma = 1.0;
    let p = problems::ornstein_uhlenbeck(gamma, 1.0, 0.01, 20.0).unwrap();
    let options = IntegrateOptions {
        equilibrium: Some(EquilibriumStop {
            window: 5,
            threshold: 1e-8,
            stop: true,
        }),
        ..IntegrateOptions::default()
    };
    let tr = integrate_with(&p.drift, &p.initial, &p.space, p.alpha, &p.grid, &options).unwrap();
    let detected = tr.equilibrium_time.expect("OU relaxes");
    // the parameter velocity decays like exp(-2 gamma t)
    let a = tr.samples.iter().find(|s| s.t >= 2.0).unwrap();
    let b = tr.samples.iter().rev().find(|s| s.t <= detected && s.rate > 0.0).unwrap();
    let rate = -(b.rate / a.rate).ln() / (b.t - a.t);
    assert!(rate > gamma && rate < 4.0 * gamma, "decay rate {rate}");
    assert!(detected < 20.0);
}

#[test]
fn ou_ensemble_variance_matches_closed_form() {
    let drift = DriftModel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let spec = EnsembleSpec {
        particles: 100_000,
        dt: 2e-3,
        scheme: SdeScheme::EulerMaruyama,
        seed: 5,
        initial: InitialSampler::Point(vec![0.0]),
    };
    let ens = simulate_sde(&drift, &spec, 0.0, &[5.0]).unwrap();
    let m = empirical_moments(&ens.snapshots[0]).unwrap();
    let exact = OuExact { gamma: 1.0, sigma: 1.0 }.variance(5.0);
    assert!((exact - 0.49998).abs() < 1e-5);
    assert!((m.covariance[0] - exact).abs() <= 3.0 * m.covariance_std_error[0]);
}

#[test]
fn euler_maruyama_mean_bias_is_first_order() {
    let drift = DriftModel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
    let bias = |dt: f64| {
        let spec = EnsembleSpec {
            particles: 200_000,
            dt,
            scheme: SdeScheme::EulerMaruyama,
            seed: 17,
            initial: InitialSampler::Point(vec![1.0]),
        };
        let ens = simulate_sde(&drift, &spec, 0.0, &[1.0]).unwrap();
        empirical_moments(&ens.snapshots[0]).unwrap().mean[0] - (-1.0f64).exp()
    };
    let ratio = bias(0.1) / bias(0.05);
    assert!((ratio - 2.0).abs() < 0.3, "bias ratio {ratio}");
}

#[test]
fn bistable_ensemble_fills_both_wells() {
    let drift = DriftModel::bistable(0.5).unwrap();
    let spec = EnsembleSpec {
        particles: 20_000,
        dt: 1e-2,
        scheme: SdeScheme::EulerMaruyama,
        seed: 23,
        initial: InitialSampler::Point(vec![-1.0]),
    };
    let ens = simulate_sde(&drift, &spec, 0.0, &[100.0]).unwrap();
    let snap = &ens.snapshots[0];
    let n = snap.live().count() as f64;
    let right = snap.live().filter(|x| x[0] > 0.0).count() as f64 / n;
    let se = (0.25 / n).sqrt();
    assert!((right - 0.5).abs() <= 3.0 * se, "fraction {right}");
}

#[test]
fn gaussian_samples_have_the_right_moments() {
    let drift = DriftModel::zero(2, 0.0).unwrap();
    let spec = EnsembleSpec {
        particles: 100_000,
        dt: 1.0,
        scheme: SdeScheme::EulerMaruyama,
        seed: 29,
        initial: InitialSampler::Gaussian {
            mean: vec![1.0, -2.0],
            std_dev: vec![0.5, 2.0],
        },
    };
    let ens = simulate_sde(&drift, &spec, 0.0, &[1.0]).unwrap();
    let m = empirical_moments(&ens.snapshots[0]).unwrap();
    let truth_mean = [1.0, -2.0];
    let truth_cov = [0.25, 0.0, 0.0, 4.0];
    for i in 0..2 {
        assert!((m.mean[i] - truth_mean[i]).abs() <= 3.0 * m.mean_std_error[i]);
    }
    for k in 0..4 {
        assert!((m.covariance[k] - truth_cov[k]).abs() <= 3.0 * m.covariance_std_error[k], "entry {k}");
    }
}

#[test]
fn harmonic_ensemble_agrees_with_moment_odes() {
    let d = 8;
    let forcing = problems::harmonic_forcing();
    let drift = DriftModel::harmonic_trap(d, problems::HARMONIC_GAMMA, problems::HARMONIC_NU, forcing.clone()).unwrap();
    let mean0 = problems::harmonic_mean0();
    let sd0 = problems::HARMONIC_VAR0.sqrt();
    let spec = EnsembleSpec {
        particles: 20_000,
        dt: 1e-3,
        scheme: SdeScheme::PredictorCorrector,
        seed: 31,
        initial: InitialSampler::Gaussian {
            mean: mean0.clone(),
            std_dev: vec![sd0; d],
        },
    };
    let times = [0.5, 1.0, 2.0];
    let ens = simulate_sde(&drift, &spec, 0.0, &times).unwrap();
    let mut cov0 = vec![0.0; d * d];
    for i in 0..d {
        cov0[i * d + i] = problems::HARMONIC_VAR0;
    }
    let reference = harmonic_moment_odes(
        forcing,
        problems::HARMONIC_GAMMA,
        d,
        problems::HARMONIC_NU,
        &mean0,
        &cov0,
        &times,
    )
    .unwrap();
    // with 72 entries per checkpoint, allow the 3-sigma band to be missed a couple of times
    let mut outside = 0;
    for (snap, m) in ens.snapshots.iter().zip(&reference) {
        let e = empirical_moments(snap).unwrap();
        for i in 0..d {
            assert!((e.mean[i] - m.mean[i]).abs() <= 4.0 * e.mean_std_error[i]);
            outside += usize::from((e.mean[i] - m.mean[i]).abs() > 3.0 * e.mean_std_error[i]);
        }
        for k in 0..d * d {
            assert!((e.covariance[k] - m.covariance[k]).abs() <= 5.0 * e.covariance_std_error[k]);
            outside += usize::from((e.covariance[k] - m.covariance[k]).abs() > 3.0 * e.covariance_std_error[k]);
        }
    }
    assert!(outside <= 6, "{outside} entries outside 3 standard errors");
}

#[test]
fn more_terms_fit_the_bistable_equilibrium_better() {
    let eq = EquilibriumRef::new(problems::bistable(2, false).unwrap().equilibrium.unwrap()).unwrap();
    let spec = NormSpec::Quadrature {
        lower: vec![-6.0],
        upper: vec![6.0],
        panels: 64,
    };
    let single = MixtureState::new(1, vec![1.0], vec![1.2], vec![vec![0.0]]).unwrap().normalized();
    let pair = MixtureState::new(1, vec![1.0, 1.0], vec![0.45, 0.45], vec![vec![-1.0], vec![1.0]])
        .unwrap()
        .normalized();
    let e1 = l2_relative_error(&single, &|x| eq.density(x), &spec).unwrap();
    let e2 = l2_relative_error(&pair, &|x| eq.density(x), &spec).unwrap();
    assert!(e2 < e1, "{e2} vs {e1}");
}

#[test]
fn time_dependent_forcing_moves_the_mean() {
    // a single term under a(t) = t: the mean obeys m' = t - m exactly
    let drift = DriftModel::harmonic_trap(1, 0.0, 0.1, Coefficient::Affine { offset: 0.0, slope: 1.0 }).unwrap();
    let start = MixtureState::new(1, vec![1.0], vec![0.6], vec![vec![0.0]]).unwrap().normalized();
    let grid = TimeGrid::new(0.0, 2.0).tolerances(1e-10, 1e-12);
    let tr = integrate(&drift, &start, &HilbertChoice::l2_symbolic(), 0.0, &grid).unwrap();
    let exact = 2.0 - 1.0 + (-2.0f64).exp();
    assert!((tr.last().state.mean()[0] - exact).abs() < 1e-7);
}
