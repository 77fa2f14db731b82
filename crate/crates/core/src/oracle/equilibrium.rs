//! Analytic reference densities: stationary densities of the bistable and
//! Duffing problems and the time-dependent Ornstein-Uhlenbeck solution.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembler::sample_mixture;
use crate::error::{check_dim, Error, Result};
use crate::mixture::MixtureState;
use crate::oracle::quadrature;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EquilibriumKind {
    /// `F = -gamma x`, stationary variance `sigma^2 / (2 gamma)`.
    OrnsteinUhlenbeck { gamma: f64, sigma: f64 },
    /// `F = x - x^3`, `p ~ exp(-V / nu)`, `V = x^4/4 - x^2/2`, `nu = sigma^2/2`.
    Bistable { sigma: f64 },
    /// `p ~ exp((-a1 a2 x^2 - a2 a3 x^4 / 2 + a2 y^2) / sigma^2)`
    Duffing { a1: f64, a2: f64, a3: f64, sigma: f64 },
}

/// A normalized stationary density. The normalizing constant is computed by
/// adaptive quadrature, one axis at a time (every supported exponent is a
/// sum of one-dimensional terms).
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumRef {
    kind: EquilibriumKind,
    norm: f64,
}

impl EquilibriumRef {
    pub fn new(kind: EquilibriumKind) -> Result<Self> {
        let mut r = Self { kind, norm: 1.0 };
        let mut mass = 1.0;
        for axis in 0..r.dim() {
            let f = |x: f64| r.axis_exponent(axis, x);
            let half_width = tail_bound(&f);
            mass *= quadrature::adaptive(|x| f(x).exp(), -half_width, half_width, 1e-14, 0.0);
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument(format!("{kind:?} is not normalizable")));
        }
        r.norm = 1.0 / mass;
        Ok(r)
    }

    pub fn kind(&self) -> EquilibriumKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            EquilibriumKind::Duffing { .. } => 2,
            _ => 1,
        }
    }

    /// Normalizing constant `C`.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    fn axis_exponent(&self, axis: usize, x: f64) -> f64 {
        match self.kind {
            EquilibriumKind::OrnsteinUhlenbeck { gamma, sigma } => -gamma * x * x / (sigma * sigma),
            EquilibriumKind::Bistable { sigma } => {
                let nu = 0.5 * sigma * sigma;
                -(0.25 * x.powi(4) - 0.5 * x * x) / nu
            }
            EquilibriumKind::Duffing { a1, a2, a3, sigma } => {
                let s2 = sigma * sigma;
                if axis == 0 {
                    (-a1 * a2 * x * x - 0.5 * a2 * a3 * x.powi(4)) / s2
                } else {
                    a2 * x * x / s2
                }
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let e: f64 = x.iter().enumerate().map(|(axis, v)| self.axis_exponent(axis, *v)).sum();
        self.norm * e.exp()
    }

    pub fn checked_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.density(x))
    }
}

/// Half-width beyond which `exp(f)` is below `1e-16` of its peak on a
/// symmetric grid scan.
fn tail_bound(f: &dyn Fn(f64) -> f64) -> f64 {
    let peak = (0..=4000).map(|i| f(i as f64 * 0.01)).fold(f64::NEG_INFINITY, f64::max);
    let mut r = 1.0;
    while f(r).max(f(-r)) > peak - 37.0 || r < 2.0 {
        r *= 1.25;
        if r > 1e6 {
            break;
        }
    }
    r
}

/// Closed-form Ornstein-Uhlenbeck solution started from a point mass at the
/// origin: a centered Gaussian with variance `sigma^2 (1 - e^{-2 gamma t}) / (2 gamma)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuExact {
    pub gamma: f64,
    pub sigma: f64,
}

impl OuExact {
    pub fn variance(&self, t: f64) -> f64 {
        self.sigma * self.sigma * (1.0 - (-2.0 * self.gamma * t).exp()) / (2.0 * self.gamma)
    }

    /// Peak height, the unsquared amplitude of the single Gaussian.
    pub fn peak(&self, t: f64) -> f64 {
        (self.gamma / (PI * self.sigma * self.sigma * (1.0 - (-2.0 * self.gamma * t).exp()))).sqrt()
    }

    /// Width `L` with `p = peak * exp(-x^2 / L^2)`.
    pub fn width(&self, t: f64) -> f64 {
        1.0 / (PI.sqrt() * self.peak(t))
    }

    pub fn density(&self, t: f64, x: f64) -> f64 {
        let l = self.width(t);
        self.peak(t) * (-x * x / (l * l)).exp()
    }

    /// The exact solution as a mixture state (squared-amplitude convention).
    pub fn state(&self, t: f64) -> MixtureState {
        MixtureState::new(1, vec![self.peak(t).sqrt()], vec![self.width(t)], vec![vec![0.0]])
            .expect("closed-form parameters are valid")
    }
}

/// How an `L2` norm over `R^d` is approximated.
#[derive(Clone, Debug, PartialEq)]
pub enum NormSpec {
    /// Tensor Gauss-Legendre over a box, `d <= 2`.
    Quadrature {
        lower: Vec<f64>,
        upper: Vec<f64>,
        panels: usize,
    },
    /// Importance sampling from the mixture itself; any `d`.
    MonteCarlo { samples: usize, seed: u64 },
}

/// `|p - ref| / |ref|` in `L2`.
pub fn l2_relative_error(state: &MixtureState, reference: &dyn Fn(&[f64]) -> f64, spec: &NormSpec) -> Result<f64> {
    match spec {
        NormSpec::Quadrature { lower, upper, panels } => {
            check_dim(state.dim(), lower.len())?;
            check_dim(state.dim(), upper.len())?;
            if state.dim() > 2 {
                return Err(Error::InvalidArgument(format!(
                    "quadrature norm supports d <= 2, got {}",
                    state.dim()
                )));
            }
            let diff2 = quadrature::integrate_box(lower, upper, *panels, 8, |x| {
                let e = state.density(x) - reference(x);
                e * e
            });
            let ref2 = quadrature::integrate_box(lower, upper, *panels, 8, |x| reference(x).powi(2));
            Ok((diff2 / ref2).sqrt())
        }
        NormSpec::MonteCarlo { samples, seed } => {
            if *samples == 0 {
                return Err(Error::InvalidArgument("need at least one sample".into()));
            }
            // E_p[(q - r)^2 / q] with p = q / |q|_1; the mass cancels in the ratio
            let p = state.normalized();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut x = vec![0.0; state.dim()];
            let (mut diff, mut base) = (0.0, 0.0);
            for _ in 0..*samples {
                sample_mixture(&p, &mut rng, &mut x);
                let q = state.density(&x);
                let r = reference(&x);
                diff += (q - r).powi(2) / q;
                base += r * r / q;
            }
            Ok((diff / base).sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let n = 200_000;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .fold((lo, f64::NEG_INFINITY), |(bx, bv), x| {
                let v = f(x);
                if v > bv { (x, v) } else { (bx, bv) }
            })
            .0
    }

    #[test]
    fn bistable_peaks_at_plus_minus_one() {
        let eq = EquilibriumRef::new(EquilibriumKind::Bistable { sigma: 0.5 }).unwrap();
        assert!((argmax_1d(|x| eq.density(&[x]), 0.0, 3.0) - 1.0).abs() < 1e-4);
        assert!((argmax_1d(|x| eq.density(&[x]), -3.0, 0.0) + 1.0).abs() < 1e-4);
    }

    #[test]
    fn duffing_peaks() {
        let eq = EquilibriumRef::new(EquilibriumKind::Duffing {
            a1: 1.0,
            a2: -0.2,
            a3: -1.0,
            sigma: 1.0 / 20f64.sqrt(),
        })
        .unwrap();
        assert!((argmax_1d(|x| eq.density(&[x, 0.0]), 0.0, 3.0) - 1.0).abs() < 1e-4);
        assert!((argmax_1d(|x| eq.density(&[x, 0.0]), -3.0, 0.0) + 1.0).abs() < 1e-4);
        assert!(argmax_1d(|y| eq.density(&[1.0, y]), -2.0, 2.0).abs() < 1e-4);
    }

    #[test]
    fn references_are_normalized() {
        for kind in [
            EquilibriumKind::Bistable { sigma: 0.5 },
            EquilibriumKind::OrnsteinUhlenbeck { gamma: 1.0, sigma: 1.0 },
        ] {
            let eq = EquilibriumRef::new(kind).unwrap();
            let mass = quadrature::integrate_box(&[-8.0], &[8.0], 64, 8, |x| eq.density(x));
            assert!((mass - 1.0).abs() < 1e-8, "{kind:?}: {mass}");
        }
        let eq = EquilibriumRef::new(EquilibriumKind::Duffing {
            a1: 1.0,
            a2: -0.2,
            a3: -1.0,
            sigma: 1.0 / 20f64.sqrt(),
        })
        .unwrap();
        let mass = quadrature::integrate_box(&[-4.0, -4.0], &[4.0, 4.0], 40, 8, |x| eq.density(x));
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
    }

    #[test]
    fn ou_stationary_limit() {
        let eq = EquilibriumRef::new(EquilibriumKind::OrnsteinUhlenbeck { gamma: 2.0, sigma: 1.0 }).unwrap();
        let var: f64 = 0.25;
        let gauss = |x: f64| (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
        for x in [0.0, 0.3, -1.1] {
            assert!((eq.density(&[x]) - gauss(x)).abs() < 1e-12);
        }
        let exact = OuExact { gamma: 2.0, sigma: 1.0 };
        assert!((exact.density(60.0, 0.3) - gauss(0.3)).abs() < 1e-14);
    }

    #[test]
    fn error_of_identical_density_is_zero() {
        let s = OuExact { gamma: 1.0, sigma: 1.0 }.state(0.5);
        let spec = NormSpec::Quadrature {
            lower: vec![-6.0],
            upper: vec![6.0],
            panels: 16,
        };
        assert_eq!(l2_relative_error(&s, &|x| s.density(x), &spec).unwrap(), 0.0);
        let mc = NormSpec::MonteCarlo { samples: 1000, seed: 1 };
        assert_eq!(l2_relative_error(&s, &|x| s.density(x), &mc).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_norm_agrees_with_quadrature() {
        let s = MixtureState::new(1, vec![0.6, 0.5], vec![0.7, 1.2], vec![vec![-0.5], vec![1.0]]).unwrap();
        let r = |x: &[f64]| (-x[0] * x[0]).exp() / PI.sqrt();
        let quad = l2_relative_error(
            &s,
            &r,
            &NormSpec::Quadrature {
                lower: vec![-10.0],
                upper: vec![10.0],
                panels: 40,
            },
        )
        .unwrap();
        let mc = l2_relative_error(&s, &r, &NormSpec::MonteCarlo { samples: 200_000, seed: 5 }).unwrap();
        assert!((quad - mc).abs() < 0.02 * quad, "{quad} vs {mc}");
    }
}
