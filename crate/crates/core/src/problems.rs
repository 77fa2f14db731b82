//! Benchmark problems with the parameter values used for validation.

use std::f64::consts::PI;

use crate::assembler::{CollocationGrid, HilbertChoice};
use crate::error::{Error, Result};
use crate::integrator::{EquilibriumStop, IntegrateOptions, Method, TimeGrid};
use crate::mixture::MixtureState;
use crate::operator::{Coefficient, DriftModel};
use crate::oracle::{EquilibriumKind, OuExact};

#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub drift: DriftModel,
    pub initial: MixtureState,
    pub alpha: f64,
    pub space: HilbertChoice,
    pub grid: TimeGrid,
    pub options: IntegrateOptions,
    pub equilibrium: Option<EquilibriumKind>,
}

/// Center offset used to separate initially coincident terms, so that
/// otherwise identical terms can follow different paths.
pub const SYMMETRY_BREAK: f64 = 1e-4;

/// Offsets `eps * (k - (n - 1) / 2)` for `n` coincident terms: zero mean, so
/// the mixture mean is unchanged.
fn spread(n: usize, eps: f64) -> Vec<f64> {
    (0..n).map(|k| eps * (k as f64 - (n as f64 - 1.0) / 2.0)).collect()
}

/// Ornstein-Uhlenbeck from a point mass at the origin, started at `t0 > 0`
/// from the exact solution.
pub fn ornstein_uhlenbeck(gamma: f64, sigma: f64, t0: f64, t_end: f64) -> Result<Problem> {
    let exact = OuExact { gamma, sigma };
    Ok(Problem {
        name: "ou".into(),
        drift: DriftModel::ornstein_uhlenbeck(gamma, sigma)?,
        initial: exact.state(t0),
        alpha: 0.0,
        space: HilbertChoice::l2_symbolic(),
        grid: TimeGrid::new(t0, t_end).tolerances(1e-12, 1e-14).initial_step(1e-4).uniform_checkpoints(50),
        options: IntegrateOptions::default(),
        equilibrium: Some(EquilibriumKind::OrnsteinUhlenbeck { gamma, sigma }),
    })
}

/// Weighted collocation grid for the bistable problem: 100 points on `[-4, 4]`.
pub fn bistable_grid() -> CollocationGrid {
    CollocationGrid::equidistant(&[-4.0], &[4.0], &[100]).expect("static grid")
}

/// Bistable potential with `sigma = 0.5`. Terms start at `x = -1` and `x = -2`
/// in equal halves, all with width `2 / sqrt(pi)`.
pub fn bistable(terms: usize, weighted: bool) -> Result<Problem> {
    assert!(terms >= 2 && terms.is_multiple_of(2), "bistable start needs an even number of terms");
    let half = terms / 2;
    let amp = (2.0 * terms as f64).sqrt().recip();
    let width = 2.0 / PI.sqrt();
    let offsets = spread(half, SYMMETRY_BREAK);
    let mut centers = Vec::with_capacity(terms);
    for base in [-1.0, -2.0] {
        for o in &offsets {
            centers.push(vec![base + o]);
        }
    }
    let initial = MixtureState::new(1, vec![amp; terms], vec![width; terms], centers)?.normalized();
    let space = if weighted {
        HilbertChoice::weighted_collocation(bistable_grid())
    } else {
        HilbertChoice::l2_symbolic()
    };
    Ok(Problem {
        name: format!("bistable_r{terms}{}", if weighted { "_weighted" } else { "" }),
        drift: DriftModel::bistable(0.5)?,
        initial,
        alpha: 1e-4,
        space,
        grid: if weighted {
            TimeGrid::new(0.0, 100.0).tolerances(1e-6, 1e-8)
        } else {
            TimeGrid::new(0.0, 100.0).tolerances(1e-8, 1e-10)
        }
        .uniform_checkpoints(100),
        // The 1/p weights make the weighted system stiff.
        options: IntegrateOptions {
            method: if weighted { Method::Rosenbrock23 } else { Method::Dopri5 },
            equilibrium: Some(EquilibriumStop {
                window: 20,
                threshold: 1e-6,
                stop: true,
            }),
            ..IntegrateOptions::default()
        },
        equilibrium: Some(EquilibriumKind::Bistable { sigma: 0.5 }),
    })
}

/// Stochastic Duffing oscillator with `(a1, a2, a3) = (1, -0.2, -1)` and
/// `sigma = 1 / sqrt(20)`; 30 terms split between `(-1, -1)` and `(1, 1)`.
pub fn duffing() -> Result<Problem> {
    duffing_with_terms(30)
}

/// The Duffing benchmark with `terms` (even) Gaussians sharing the same
/// initial density as the 30-term run.
pub fn duffing_with_terms(terms: usize) -> Result<Problem> {
    if terms < 2 || !terms.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("need an even number of terms, got {terms}")));
    }
    let (a1, a2, a3, sigma) = (1.0, -0.2, -1.0, 1.0 / 20f64.sqrt());
    let width = 1.0 / (30.0 * PI).sqrt();
    let offsets = spread(terms / 2, SYMMETRY_BREAK);
    let mut centers = Vec::with_capacity(terms);
    for base in [-1.0, 1.0] {
        for o in &offsets {
            centers.push(vec![base + o, base - o]);
        }
    }
    let initial = MixtureState::new(2, vec![1.0; terms], vec![width; terms], centers)?.normalized();
    Ok(Problem {
        name: format!("duffing_r{terms}"),
        drift: DriftModel::duffing(a1, a2, a3, sigma)?,
        initial,
        alpha: 1e-3,
        space: HilbertChoice::l2_symbolic(),
        grid: TimeGrid::new(0.0, 50.0).tolerances(1e-6, 1e-8).checkpoints(vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0]),
        options: IntegrateOptions::default(),
        equilibrium: Some(EquilibriumKind::Duffing { a1, a2, a3, sigma }),
    })
}

/// Harmonic trap forcing `1.25 (sin(pi t) + 1.5)`.
pub fn harmonic_forcing() -> Coefficient {
    Coefficient::Sinusoidal {
        amplitude: 1.25,
        frequency: PI,
        offset: 1.5,
    }
}

pub const HARMONIC_DIM: usize = 8;
pub const HARMONIC_GAMMA: f64 = 0.25;
pub const HARMONIC_NU: f64 = 0.01;
pub const HARMONIC_VAR0: f64 = 0.1;

/// Initial mean `mu_i = i - 1`.
pub fn harmonic_mean0() -> Vec<f64> {
    (0..HARMONIC_DIM).map(|i| i as f64).collect()
}

/// Interacting particles in a moving harmonic trap, `d = 8`, started from an
/// isotropic Gaussian with variance 0.1. The `terms` copies of that Gaussian
/// are offset along the diagonal by [`SYMMETRY_BREAK`].
pub fn harmonic_trap(terms: usize, t_end: f64) -> Result<Problem> {
    harmonic_trap_spread(terms, t_end, SYMMETRY_BREAK)
}

/// [`harmonic_trap`] with a chosen diagonal offset between terms.
pub fn harmonic_trap_spread(terms: usize, t_end: f64, spread_eps: f64) -> Result<Problem> {
    let d = HARMONIC_DIM;
    let width = (2.0 * HARMONIC_VAR0).sqrt();
    let amp = ((2.0 * PI * HARMONIC_VAR0).powf(-(d as f64) / 2.0) / terms as f64).sqrt();
    let mean = harmonic_mean0();
    let diagonal = 1.0 / (d as f64).sqrt();
    let centers = spread(terms, spread_eps)
        .into_iter()
        .map(|o| mean.iter().map(|m| m + o * diagonal).collect())
        .collect();
    let initial = MixtureState::new(d, vec![amp; terms], vec![width; terms], centers)?.normalized();
    Ok(Problem {
        name: format!("harmonic_trap_r{terms}"),
        drift: DriftModel::harmonic_trap(d, HARMONIC_GAMMA, HARMONIC_NU, harmonic_forcing())?,
        initial,
        alpha: 1e-8,
        space: HilbertChoice::l2_symbolic(),
        grid: TimeGrid::new(0.0, t_end).tolerances(1e-8, 1e-10).uniform_checkpoints((t_end * 10.0).round() as usize),
        options: IntegrateOptions::default(),
        equilibrium: None,
    })
}
