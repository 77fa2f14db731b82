//! The Gaussian mixture ansatz
//!
//! `p(x) = sum_i A_i^2 exp(-|x - c_i|^2 / L_i^2)`
//!
//! Parameters are flattened term by term as `(A_i, L_i, c_i1, ..., c_id)`,
//! giving `n = r (d + 2)` entries in total.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gausspoly::{GaussPoly, GaussPolySum, Polynomial};

/// Widths at or below this value are treated as a collapsed term.
pub const WIDTH_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    dim: usize,
    amps: Vec<f64>,
    widths: Vec<f64>,
    /// Row-major `terms x dim`.
    centers: Vec<f64>,
}

impl MixtureState {
    pub fn new(dim: usize, amps: Vec<f64>, widths: Vec<f64>, centers: Vec<Vec<f64>>) -> Result<Self> {
        if amps.len() != widths.len() || amps.len() != centers.len() {
            return Err(Error::InvalidArgument(format!(
                "inconsistent term counts: {} amplitudes, {} widths, {} centers",
                amps.len(),
                widths.len(),
                centers.len()
            )));
        }
        let mut flat = Vec::with_capacity(centers.len() * dim);
        for c in &centers {
            check_dim(dim, c.len())?;
            flat.extend_from_slice(c);
        }
        let state = Self {
            dim,
            amps,
            widths,
            centers: flat,
        };
        state.validate()?;
        Ok(state)
    }

    /// `terms` identical copies of one Gaussian.
    pub fn replicated(terms: usize, amp: f64, width: f64, center: &[f64]) -> Result<Self> {
        Self::new(
            center.len(),
            vec![amp; terms],
            vec![width; terms],
            vec![center.to_vec(); terms],
        )
    }

    /// Rebuilds a state from the flattened parameter vector.
    pub fn from_flat(dim: usize, params: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        let stride = dim + 2;
        if params.is_empty() || !params.len().is_multiple_of(stride) {
            return Err(Error::InvalidArgument(format!(
                "parameter vector of length {} is not a multiple of d + 2 = {stride}",
                params.len()
            )));
        }
        let terms = params.len() / stride;
        let mut amps = Vec::with_capacity(terms);
        let mut widths = Vec::with_capacity(terms);
        let mut centers = Vec::with_capacity(terms * dim);
        for chunk in params.chunks_exact(stride) {
            amps.push(chunk[0]);
            widths.push(chunk[1]);
            centers.extend_from_slice(&chunk[2..]);
        }
        let state = Self {
            dim,
            amps,
            widths,
            centers,
        };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if self.amps.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one term".into()));
        }
        for (k, &l) in self.widths.iter().enumerate() {
            if !(l > WIDTH_FLOOR && l.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "width of term {k} must exceed {WIDTH_FLOOR:e}, got {l}"
                )));
            }
        }
        if self.amps.iter().chain(&self.centers).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mixture parameter".into()));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_params()];
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let stride = self.dim + 2;
        for (k, chunk) in out.chunks_exact_mut(stride).enumerate() {
            chunk[0] = self.amps[k];
            chunk[1] = self.widths[k];
            chunk[2..].copy_from_slice(self.center(k));
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> usize {
        self.amps.len()
    }

    pub fn n_params(&self) -> usize {
        self.terms() * (self.dim + 2)
    }

    pub fn amp(&self, k: usize) -> f64 {
        self.amps[k]
    }

    pub fn width(&self, k: usize) -> f64 {
        self.widths[k]
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    pub fn amps(&self) -> &[f64] {
        &self.amps
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Flat index of `A_k`.
    pub fn amp_index(&self, k: usize) -> usize {
        k * (self.dim + 2)
    }

    /// Flat index of `L_k`.
    pub fn width_index(&self, k: usize) -> usize {
        k * (self.dim + 2) + 1
    }

    /// Flat index of `c_{k, axis}`.
    pub fn center_index(&self, k: usize, axis: usize) -> usize {
        k * (self.dim + 2) + 2 + axis
    }

    #[inline]
    fn sq_dist(&self, k: usize, x: &[f64]) -> f64 {
        self.center(k)
            .iter()
            .zip(x)
            .map(|(c, xi)| (xi - c) * (xi - c))
            .sum()
    }

    /// `exp(-|x - c_k|^2 / L_k^2)`
    #[inline]
    pub fn term_kernel(&self, k: usize, x: &[f64]) -> f64 {
        let l = self.widths[k];
        (-self.sq_dist(k, x) / (l * l)).exp()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.density(x))
    }

    pub(crate) fn density(&self, x: &[f64]) -> f64 {
        (0..self.terms())
            .map(|k| self.amps[k] * self.amps[k] * self.term_kernel(k, x))
            .sum()
    }

    /// Gradient of the density with respect to the flattened parameters.
    pub fn param_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.n_params()];
        self.param_gradient_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn param_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let stride = self.dim + 2;
        for (k, row) in out.chunks_exact_mut(stride).enumerate() {
            let a = self.amps[k];
            let l = self.widths[k];
            let l2 = l * l;
            let c = self.center(k);
            let r2 = self.sq_dist(k, x);
            let g = (-r2 / l2).exp();
            row[0] = 2.0 * a * g;
            let a2g = a * a * g;
            row[1] = 2.0 * a2g * r2 / (l2 * l);
            let s = 2.0 * a2g / l2;
            for axis in 0..self.dim {
                row[2 + axis] = s * (x[axis] - c[axis]);
            }
        }
    }

    /// Mass `A_k^2 (pi L_k^2)^{d/2}` of each term.
    pub fn term_masses(&self) -> Vec<f64> {
        let half_d = self.dim as f64 / 2.0;
        self.amps
            .iter()
            .zip(&self.widths)
            .map(|(a, l)| a * a * (PI * l * l).powf(half_d))
            .collect()
    }

    /// `I = sum_i A_i^2 (pi L_i^2)^{d/2}`
    pub fn total_probability(&self) -> f64 {
        self.term_masses().iter().sum()
    }

    pub fn total_probability_gradient(&self) -> Vec<f64> {
        let d = self.dim as f64;
        let pi_half_d = PI.powf(d / 2.0);
        let mut out = vec![0.0; self.n_params()];
        for k in 0..self.terms() {
            let a = self.amps[k];
            let l = self.widths[k];
            out[self.amp_index(k)] = 2.0 * a * (PI * l * l).powf(d / 2.0);
            out[self.width_index(k)] = d * a * a * pi_half_d * l.powf(d - 1.0);
        }
        out
    }

    /// Amplitudes rescaled so that the total probability is one.
    pub fn normalized(&self) -> Self {
        let scale = self.total_probability().powf(-0.5);
        let mut out = self.clone();
        for a in &mut out.amps {
            *a *= scale;
        }
        out
    }

    /// Mean of the normalized density.
    pub fn mean(&self) -> Vec<f64> {
        let masses = self.term_masses();
        let total: f64 = masses.iter().sum();
        let mut mean = vec![0.0; self.dim];
        for (k, w) in masses.iter().enumerate() {
            for (m, c) in mean.iter_mut().zip(self.center(k)) {
                *m += w * c / total;
            }
        }
        mean
    }

    /// Covariance of the normalized density, row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let masses = self.term_masses();
        let total: f64 = masses.iter().sum();
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        for (k, w) in masses.iter().enumerate() {
            let w = w / total;
            let c = self.center(k);
            let var = 0.5 * self.widths[k] * self.widths[k];
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += w * (c[i] - mean[i]) * (c[j] - mean[j]);
                }
                cov[i * d + i] += w * var;
            }
        }
        cov
    }

    /// One-dimensional marginal density along `axis`.
    pub fn marginal(&self, axis: usize, x: f64) -> f64 {
        let half_rest = (self.dim as f64 - 1.0) / 2.0;
        (0..self.terms())
            .map(|k| {
                let l = self.widths[k];
                let dx = x - self.center(k)[axis];
                self.amps[k] * self.amps[k] * (PI * l * l).powf(half_rest) * (-dx * dx / (l * l)).exp()
            })
            .sum()
    }

    /// Two-dimensional marginal density along axes `(i, j)`.
    pub fn marginal2(&self, axes: (usize, usize), x: f64, y: f64) -> f64 {
        let half_rest = (self.dim as f64 - 2.0) / 2.0;
        (0..self.terms())
            .map(|k| {
                let l2 = self.widths[k] * self.widths[k];
                let c = self.center(k);
                let r2 = (x - c[axes.0]).powi(2) + (y - c[axes.1]).powi(2);
                self.amps[k] * self.amps[k] * (PI * l2).powf(half_rest) * (-r2 / l2).exp()
            })
            .sum()
    }

    /// Exact mass of the marginal on `axes` inside the box `[lower, upper]`.
    pub fn window_mass(&self, axes: &[usize], lower: &[f64], upper: &[f64]) -> f64 {
        self.term_masses()
            .iter()
            .enumerate()
            .map(|(k, mass)| {
                let l = self.widths[k];
                let c = self.center(k);
                axes.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&a, (lo, hi))| 0.5 * (libm::erf((hi - c[a]) / l) - libm::erf((lo - c[a]) / l)))
                    .product::<f64>()
                    * mass
            })
            .sum()
    }

    /// Each term `A_k^2 exp(-|x - c_k|^2 / L_k^2)` as a [`GaussPoly`].
    pub fn to_gauss_poly_sum(&self) -> GaussPolySum {
        let terms = (0..self.terms()).map(|k| self.term_gauss_poly(k)).collect();
        GaussPolySum::new(self.dim, terms).expect("terms share the mixture dimension")
    }

    pub fn term_gauss_poly(&self, k: usize) -> GaussPoly {
        let l = self.widths[k];
        GaussPoly::gaussian(self.center(k).to_vec(), l * l, self.amps[k] * self.amps[k])
            .expect("validated mixture terms are valid Gaussians")
    }

    /// Parameter partials of the density in flattening order, each a single
    /// polynomial-times-Gaussian term.
    pub fn partial_gauss_polys(&self) -> Vec<GaussPoly> {
        let mut out = Vec::with_capacity(self.n_params());
        for k in 0..self.terms() {
            out.extend(self.term_partial_polys(k).into_iter().map(|p| {
                GaussPoly::new(p, self.center(k).to_vec(), self.widths[k] * self.widths[k])
                    .expect("validated mixture terms are valid Gaussians")
            }));
        }
        out
    }

    /// Polynomial factors of the `d + 2` partials of term `k`, sharing the
    /// Gaussian `exp(-|x - c_k|^2 / L_k^2)`.
    pub fn term_partial_polys(&self, k: usize) -> Vec<Polynomial> {
        let d = self.dim;
        let a = self.amps[k];
        let l = self.widths[k];
        let c = self.center(k);
        let mut out = Vec::with_capacity(d + 2);
        out.push(Polynomial::constant(d, 2.0 * a));
        out.push(Polynomial::squared_distance(c).scale(2.0 * a * a / (l * l * l)));
        let s = 2.0 * a * a / (l * l);
        for axis in 0..d {
            let shift = &Polynomial::variable(d, axis) - &Polynomial::constant(d, c[axis]);
            out.push(shift.scale(s));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(a: f64, l: f64, c: f64) -> MixtureState {
        MixtureState::new(1, vec![a], vec![l], vec![vec![c]]).unwrap()
    }

    #[test]
    fn window_mass_of_whole_line_is_total() {
        let m = MixtureState::new(2, vec![0.4, 0.3], vec![0.8, 1.1], vec![vec![0.1, -0.3], vec![1.0, 0.5]]).unwrap();
        let big = m.window_mass(&[1], &[-40.0], &[40.0]);
        assert!((big - m.total_probability()).abs() < 1e-14);
        let half = m.window_mass(&[0, 1], &[0.1, -40.0], &[40.0, 40.0]);
        let expected = m.term_masses()[0] * 0.5 + m.term_masses()[1] * 0.5 * (1.0 + libm::erf(0.9 / 1.1));
        assert!((half - expected).abs() < 1e-14);
    }

    #[test]
    fn normalized_gaussian_peak() {
        let m = single(PI.powf(-0.25), 1.0, 0.0);
        let v = m.evaluate(&[0.0]).unwrap();
        assert!((v - 1.0 / PI.sqrt()).abs() < 1e-15);
        assert!((v - 0.564190).abs() < 1e-6);
        assert!((m.total_probability() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decays_at_infinity() {
        let m = single(1.0, 1.0, 0.0);
        assert_eq!(m.evaluate(&[1e3]).unwrap(), 0.0);
        assert_eq!(m.evaluate(&[-1e3]).unwrap(), 0.0);
    }

    #[test]
    fn two_term_direct_sum() {
        let m = MixtureState::new(1, vec![1.0, 1.0], vec![1.0, 2.0], vec![vec![0.0], vec![1.0]]).unwrap();
        let x: f64 = 0.5;
        let expected = (-(x * x)).exp() + (-(x - 1.0) * (x - 1.0) / 4.0).exp();
        assert!((m.evaluate(&[x]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let m = single(1.0, 1.0, 0.0);
        assert!(matches!(m.evaluate(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(m.param_gradient(&[]).is_err());
    }

    #[test]
    fn gradient_at_peak() {
        let m = single(2.0, 1.0, 0.3);
        let g = m.param_gradient(&[0.3]).unwrap();
        assert_eq!(g[0], 4.0);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn total_probability_values() {
        let m = MixtureState::new(2, vec![1.0], vec![1.0], vec![vec![0.0, 0.0]]).unwrap();
        assert!((m.total_probability() - PI).abs() < 1e-14);
        let g = single(1.0, 1.0, 0.0).total_probability_gradient();
        assert!((g[0] - 2.0 * PI.sqrt()).abs() < 1e-14);
        assert!((g[1] - PI.sqrt()).abs() < 1e-14);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn invalid_widths_rejected() {
        assert!(MixtureState::new(1, vec![1.0], vec![0.0], vec![vec![0.0]]).is_err());
        assert!(MixtureState::new(1, vec![1.0], vec![1e-11], vec![vec![0.0]]).is_err());
        assert!(MixtureState::new(1, vec![1.0], vec![-1.0], vec![vec![0.0]]).is_err());
        assert!(MixtureState::from_flat(2, &[1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn flat_layout() {
        let m = MixtureState::new(
            2,
            vec![0.5, 0.7],
            vec![1.0, 2.0],
            vec![vec![-1.0, 1.0], vec![3.0, 4.0]],
        )
        .unwrap();
        assert_eq!(m.n_params(), 8);
        assert_eq!(m.to_flat(), vec![0.5, 1.0, -1.0, 1.0, 0.7, 2.0, 3.0, 4.0]);
        assert_eq!(m.center_index(1, 1), 7);
    }

    #[test]
    fn moments_of_two_terms() {
        let m = MixtureState::new(1, vec![1.0, 1.0], vec![1.0, 1.0], vec![vec![-1.0], vec![1.0]])
            .unwrap()
            .normalized();
        assert!(m.mean()[0].abs() < 1e-15);
        // variance = L^2/2 + 1
        assert!((m.covariance()[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn partial_polys_match_gradient() {
        let m = MixtureState::new(
            2,
            vec![0.8, -1.1],
            vec![0.9, 1.4],
            vec![vec![0.2, -0.4], vec![1.0, 0.5]],
        )
        .unwrap();
        let x = [0.37, -0.81];
        let g = m.param_gradient(&x).unwrap();
        for (i, p) in m.partial_gauss_polys().iter().enumerate() {
            let v = p.evaluate(&x).unwrap();
            assert!((v - g[i]).abs() < 1e-14, "entry {i}: {v} vs {}", g[i]);
        }
    }
}
