//! Drift/diffusion models and the Fokker-Planck operator
//! `L p = -div(F p) + sum_l nu_l d^2 p / dx_l^2` applied to the mixture.
//!
//! Diffusion is constant and diagonal. A scalar `nu = sigma^2 / 2` is the
//! common case; per-axis values cover degenerate noise such as the Duffing
//! oscillator, which is forced only through its velocity.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::gausspoly::{Exponent, GaussPoly, GaussPolySum, Polynomial};
use crate::mixture::MixtureState;

/// Time dependence of one drift coefficient.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// `offset + slope * t`
    Affine { offset: f64, slope: f64 },
    /// `amplitude * (sin(frequency * t) + offset)`
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
        offset: f64,
    },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Affine { offset, slope } => offset + slope * t,
            Coefficient::Sinusoidal {
                amplitude,
                frequency,
                offset,
            } => amplitude * ((frequency * t).sin() + offset),
            Coefficient::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Affine { offset, slope } => write!(f, "Affine({offset} + {slope} t)"),
            Coefficient::Sinusoidal {
                amplitude,
                frequency,
                offset,
            } => write!(f, "Sinusoidal({amplitude} (sin({frequency} t) + {offset}))"),
            Coefficient::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// One monomial of a drift component with a time-dependent coefficient.
#[derive(Clone, Debug)]
pub struct DriftTerm {
    pub exponent: Exponent,
    pub coefficient: Coefficient,
}

impl DriftTerm {
    pub fn new(exponent: &[u8], coefficient: Coefficient) -> Self {
        Self {
            exponent: Exponent::from_slice(exponent),
            coefficient,
        }
    }

    pub fn constant(exponent: &[u8], value: f64) -> Self {
        Self::new(exponent, Coefficient::Constant(value))
    }
}

/// Drift evaluated pointwise: `f(x, t, out)` writes `F(x, t)` into `out`.
pub type PointwiseDrift = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum DriftField {
    /// One list of terms per component `F_1..F_d`.
    Polynomial(Vec<Vec<DriftTerm>>),
    /// Arbitrary drift. Usable by the Monte Carlo oracle only.
    Pointwise(PointwiseDrift),
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftField::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            DriftField::Pointwise(_) => write!(f, "Pointwise(..)"),
        }
    }
}

/// Drift `F(x, t)` and constant diagonal diffusion of the SDE
/// `dX = F(X, t) dt + sigma dW`.
#[derive(Clone, Debug)]
pub struct DriftModel {
    dim: usize,
    field: DriftField,
    diffusion: Vec<f64>,
}

/// Drift polynomials frozen at one time, with their divergence.
#[derive(Clone, Debug)]
pub struct DriftSnapshot {
    pub components: Vec<Polynomial>,
    pub divergence: Polynomial,
}

impl DriftSnapshot {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.components) {
            *o = p.evaluate(x);
        }
    }
}

impl DriftModel {
    pub fn polynomial(dim: usize, components: Vec<Vec<DriftTerm>>, diffusion: Vec<f64>) -> Result<Self> {
        check_dim(dim, components.len())?;
        for comp in &components {
            for term in comp {
                check_dim(dim, term.exponent.len())?;
            }
        }
        Self::checked(dim, DriftField::Polynomial(components), diffusion)
    }

    pub fn pointwise(dim: usize, drift: PointwiseDrift, diffusion: Vec<f64>) -> Result<Self> {
        Self::checked(dim, DriftField::Pointwise(drift), diffusion)
    }

    fn checked(dim: usize, field: DriftField, diffusion: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        check_dim(dim, diffusion.len())?;
        if let Some(nu) = diffusion.iter().find(|nu| !(**nu >= 0.0 && nu.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "diffusion coefficients must be finite and non-negative, got {nu}"
            )));
        }
        Ok(Self {
            dim,
            field,
            diffusion,
        })
    }

    /// `dX = -gamma X dt + sigma dW` in one dimension.
    pub fn ornstein_uhlenbeck(gamma: f64, sigma: f64) -> Result<Self> {
        Self::polynomial(
            1,
            vec![vec![DriftTerm::constant(&[1], -gamma)]],
            vec![0.5 * sigma * sigma],
        )
    }

    /// Gradient flow of `V(x) = x^4/4 - x^2/2`: `F = x - x^3`.
    pub fn bistable(sigma: f64) -> Result<Self> {
        Self::polynomial(
            1,
            vec![vec![DriftTerm::constant(&[1], 1.0), DriftTerm::constant(&[3], -1.0)]],
            vec![0.5 * sigma * sigma],
        )
    }

    /// Duffing oscillator `x' = y`, `y' = a1 x + a2 y + a3 x^3 + sigma W'`.
    pub fn duffing(a1: f64, a2: f64, a3: f64, sigma: f64) -> Result<Self> {
        Self::polynomial(
            2,
            vec![
                vec![DriftTerm::constant(&[0, 1], 1.0)],
                vec![
                    DriftTerm::constant(&[1, 0], a1),
                    DriftTerm::constant(&[0, 1], a2),
                    DriftTerm::constant(&[3, 0], a3),
                ],
            ],
            vec![0.0, 0.5 * sigma * sigma],
        )
    }

    /// `d` particles in a moving harmonic trap with mean-field attraction:
    /// `F_i = a(t) - x_i + (gamma/d) sum_j (x_j - x_i)`.
    pub fn harmonic_trap(dim: usize, gamma: f64, nu: f64, forcing: Coefficient) -> Result<Self> {
        let d = dim as f64;
        let components = (0..dim)
            .map(|i| {
                let mut terms = vec![DriftTerm::new(&vec![0; dim], forcing.clone())];
                for j in 0..dim {
                    let mut e = vec![0u8; dim];
                    e[j] = 1;
                    let c = if i == j {
                        -1.0 - gamma * (d - 1.0) / d
                    } else {
                        gamma / d
                    };
                    terms.push(DriftTerm::constant(&e, c));
                }
                terms
            })
            .collect();
        Self::polynomial(dim, components, vec![nu; dim])
    }

    /// Pure diffusion.
    pub fn zero(dim: usize, nu: f64) -> Result<Self> {
        Self::polynomial(dim, vec![Vec::new(); dim], vec![nu; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn field(&self) -> &DriftField {
        &self.field
    }

    /// Per-axis diffusion `nu_l = sigma_l^2 / 2`.
    pub fn diffusion(&self) -> &[f64] {
        &self.diffusion
    }

    /// Per-axis noise intensity `sigma_l = sqrt(2 nu_l)`.
    pub fn noise_scales(&self) -> Vec<f64> {
        self.diffusion.iter().map(|nu| (2.0 * nu).sqrt()).collect()
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self.field, DriftField::Polynomial(_))
    }

    /// Drift polynomials at time `t`.
    pub fn at(&self, t: f64) -> Result<DriftSnapshot> {
        let DriftField::Polynomial(components) = &self.field else {
            return Err(Error::UnsupportedModel(
                "closed-form assembly requires a polynomial drift".into(),
            ));
        };
        let components: Vec<Polynomial> = components
            .iter()
            .map(|terms| {
                Polynomial::from_terms(
                    self.dim,
                    terms.iter().map(|term| (term.exponent.clone(), term.coefficient.value(t))),
                )
            })
            .collect();
        let mut divergence = Polynomial::zero(self.dim);
        for (axis, p) in components.iter().enumerate() {
            divergence = &divergence + &p.derivative(axis);
        }
        Ok(DriftSnapshot {
            components,
            divergence,
        })
    }

    /// Writes `F(x, t)` into `out`.
    pub fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.field {
            DriftField::Polynomial(components) => {
                for (o, terms) in out.iter_mut().zip(components) {
                    *o = terms
                        .iter()
                        .map(|term| term.coefficient.value(t) * crate::gausspoly::monomial_value(&term.exponent, x))
                        .sum();
                }
            }
            DriftField::Pointwise(f) => f(x, t, out),
        }
    }

    /// Exact `L p` for the mixture, one [`GaussPoly`] per mixture term.
    pub fn apply_fp_operator(&self, state: &MixtureState, t: f64) -> Result<GaussPolySum> {
        check_dim(self.dim, state.dim())?;
        let snapshot = self.at(t)?;
        self.apply_with(&snapshot, state)
    }

    pub(crate) fn apply_with(&self, snapshot: &DriftSnapshot, state: &MixtureState) -> Result<GaussPolySum> {
        let mut terms = Vec::with_capacity(state.terms());
        for k in 0..state.terms() {
            let g = state.term_gauss_poly(k);
            let mut acc = Polynomial::zero(self.dim);
            for axis in 0..self.dim {
                let flux = GaussPoly::new(&snapshot.components[axis] * g.poly(), g.center().to_vec(), g.width())?;
                acc = &acc - flux.differentiate(axis)?.poly();
                let nu = self.diffusion[axis];
                if nu != 0.0 {
                    let second = g.differentiate(axis)?.differentiate(axis)?;
                    acc = &acc + &second.poly().scale(nu);
                }
            }
            terms.push(GaussPoly::new(acc, g.center().to_vec(), g.width())?);
        }
        GaussPolySum::new(self.dim, terms)
    }

    /// `L p(x)` from the closed-form derivatives of each Gaussian term, given
    /// `F(x)` and `div F(x)` at the point.
    pub(crate) fn fp_operator_at(&self, state: &MixtureState, x: &[f64], drift: &[f64], divergence: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..state.terms() {
            let a = state.width(k) * state.width(k);
            let c = state.center(k);
            let mut flux = 0.0;
            let mut diff = 0.0;
            for axis in 0..self.dim {
                let dx = x[axis] - c[axis];
                flux += drift[axis] * dx;
                let nu = self.diffusion[axis];
                if nu != 0.0 {
                    diff += nu * (4.0 * dx * dx / (a * a) - 2.0 / a);
                }
            }
            let amp = state.amp(k);
            total += amp * amp * state.term_kernel(k, x) * (-divergence + 2.0 * flux / a + diff);
        }
        total
    }

    /// Pointwise `L p(x)` without building the polynomial representation.
    pub fn fp_operator_pointwise(&self, state: &MixtureState, t: f64, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, state.dim())?;
        check_dim(self.dim, x.len())?;
        let snapshot = self.at(t)?;
        let mut f = vec![0.0; self.dim];
        snapshot.eval(x, &mut f);
        Ok(self.fp_operator_at(state, x, &f, snapshot.divergence.evaluate(x)))
    }

    /// `R(x) = sum_j dp/dtheta_j * thetadot_j - L p(x)`
    pub fn residual(&self, state: &MixtureState, theta_dot: &[f64], t: f64, x: &[f64]) -> Result<f64> {
        check_dim(state.n_params(), theta_dot.len())?;
        let grad = state.param_gradient(x)?;
        let rate: f64 = grad.iter().zip(theta_dot).map(|(g, v)| g * v).sum();
        let lp = self.apply_fp_operator(state, t)?;
        Ok(rate - lp.evaluate(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_operator_at_origin_vanishes() {
        let drift = DriftModel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let state = MixtureState::new(1, vec![1.0], vec![1.0], vec![vec![0.0]]).unwrap();
        let lp = drift.apply_fp_operator(&state, 0.0).unwrap();
        assert!(lp.evaluate(&[0.0]).unwrap().abs() < 1e-15);
        assert!(drift.fp_operator_pointwise(&state, 0.0, &[0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_drift_is_heat_operator() {
        let nu = 0.3;
        let drift = DriftModel::zero(2, nu).unwrap();
        let state = MixtureState::new(2, vec![0.9], vec![0.8], vec![vec![0.1, -0.2]]).unwrap();
        let lp = drift.apply_fp_operator(&state, 0.0).unwrap();
        let g = state.term_gauss_poly(0);
        let lap = g.differentiate(0).unwrap().differentiate(0).unwrap();
        let lap2 = g.differentiate(1).unwrap().differentiate(1).unwrap();
        for x in [[0.0, 0.0], [0.5, -1.0], [1.3, 0.7]] {
            let expected = nu * (lap.evaluate(&x).unwrap() + lap2.evaluate(&x).unwrap());
            assert!((lp.evaluate(&x).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn pointwise_drift_is_unsupported() {
        let drift = DriftModel::pointwise(1, Arc::new(|x: &[f64], _t: f64, out: &mut [f64]| out[0] = x[0].sin()), vec![0.5]).unwrap();
        let state = MixtureState::new(1, vec![1.0], vec![1.0], vec![vec![0.0]]).unwrap();
        assert!(matches!(drift.apply_fp_operator(&state, 0.0), Err(Error::UnsupportedModel(_))));
        let mut out = [0.0];
        drift.eval(&[1.0], 0.0, &mut out);
        assert!((out[0] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn negative_diffusion_rejected() {
        assert!(DriftModel::zero(1, -0.1).is_err());
        assert!(DriftModel::polynomial(2, vec![vec![]], vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn residual_without_motion_is_minus_heat() {
        let drift = DriftModel::zero(1, 0.5).unwrap();
        let state = MixtureState::new(1, vec![1.0], vec![1.0], vec![vec![0.0]]).unwrap();
        // -nu p''(x) with p = exp(-x^2): p'' = (4x^2 - 2) p
        for x in [0.0, 0.4, -1.2] {
            let r = drift.residual(&state, &[0.0; 3], 0.0, &[x]).unwrap();
            let expected = -0.5 * (4.0 * x * x - 2.0) * (-(x * x)).exp();
            assert!((r - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn harmonic_trap_coefficients() {
        let drift = DriftModel::harmonic_trap(
            3,
            0.25,
            0.01,
            Coefficient::Sinusoidal {
                amplitude: 1.25,
                frequency: std::f64::consts::PI,
                offset: 1.5,
            },
        )
        .unwrap();
        let x = [0.3, -1.0, 2.0];
        let t = 0.37;
        let mut out = [0.0; 3];
        drift.eval(&x, t, &mut out);
        let a = 1.25 * ((std::f64::consts::PI * t).sin() + 1.5);
        for i in 0..3 {
            let inter: f64 = (0..3).map(|j| x[j] - x[i]).sum::<f64>() * 0.25 / 3.0;
            assert!((out[i] - (a - x[i] + inter)).abs() < 1e-14);
        }
    }
}
