//! First and second moment ODEs of the interacting harmonic trap
//!
//! `dX_i = (a(t) - X_i + (gamma/d) sum_j (X_j - X_i)) dt + sqrt(2 nu) dW_i`,
//!
//! solved by classical RK4 with step doubling. The right-hand side is
//! written out directly from the SDE and shares no code with the drift
//! polynomials used by the solver.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::operator::Coefficient;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentPoint {
    pub t: f64,
    pub mean: Vec<f64>,
    /// Row-major `d x d`, `E[X_i X_j] - mean_i mean_j`.
    pub covariance: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HarmonicMoments {
    pub forcing: Coefficient,
    pub gamma: f64,
    pub nu: f64,
    pub dim: usize,
}

impl HarmonicMoments {
    /// State is `(mean, second moment)` packed as `d + d*d` numbers.
    fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let df = d as f64;
        let a = self.forcing.value(t);
        let (mean, second) = y.split_at(d);
        let mean_sum: f64 = mean.iter().sum();
        for i in 0..d {
            out[i] = a - mean[i] + self.gamma / df * (mean_sum - df * mean[i]);
        }
        // column sums of the (symmetric) second-moment matrix
        let col: Vec<f64> = (0..d).map(|j| (0..d).map(|l| second[l * d + j]).sum()).collect();
        for i in 0..d {
            for j in 0..d {
                let mut v = a * (mean[i] + mean[j]) - 2.0 * (1.0 + self.gamma) * second[i * d + j]
                    + self.gamma / df * (col[j] + col[i]);
                if i == j {
                    v += 2.0 * self.nu;
                }
                out[d + i * d + j] = v;
            }
        }
    }

    fn rk4(&self, t: f64, y: &[f64], h: f64) -> Vec<f64> {
        let n = y.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.rhs(t, y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        self.rhs(t + h, &tmp, &mut k4);
        (0..n)
            .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    /// Solves from `(t0, mean0, cov0)` and reports the moments at each of
    /// `times` (sorted, `> t0`). `tol` bounds the per-step doubling error
    /// relative to `1 + |y|`.
    pub fn solve(&self, t0: f64, mean0: &[f64], cov0: &[f64], times: &[f64], tol: f64) -> Result<Vec<MomentPoint>> {
        let d = self.dim;
        check_dim(d, mean0.len())?;
        check_dim(d * d, cov0.len())?;
        if times.iter().any(|t| *t < t0) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("output times must be sorted and not before t0".into()));
        }
        let mut y: Vec<f64> = mean0.to_vec();
        y.extend((0..d * d).map(|k| cov0[k] + mean0[k / d] * mean0[k % d]));
        let mut t = t0;
        let mut h = 1e-3;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            while t < target {
                let last = h >= target - t;
                let step = if last { target - t } else { h };
                let full = self.rk4(t, &y, step);
                let half = self.rk4(t, &y, 0.5 * step);
                let double = self.rk4(t + 0.5 * step, &half, 0.5 * step);
                let err = full
                    .iter()
                    .zip(&double)
                    .map(|(a, b)| (a - b).abs() / 15.0 / (1.0 + b.abs()))
                    .fold(0.0, f64::max);
                if err <= tol {
                    for i in 0..y.len() {
                        y[i] = double[i] + (double[i] - full[i]) / 15.0;
                    }
                    t = if last { target } else { t + step };
                }
                let factor = if err == 0.0 { 2.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 2.0) };
                if !last || err > tol {
                    h = step * factor;
                }
                if h < 1e-12 {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
            }
            let mean = y[..d].to_vec();
            let covariance = (0..d * d).map(|k| y[d + k] - mean[k / d] * mean[k % d]).collect();
            out.push(MomentPoint { t, mean, covariance });
        }
        Ok(out)
    }
}

/// Harmonic-trap moments at `times` with a `1e-12` step tolerance.
pub fn harmonic_moment_odes(
    forcing: Coefficient,
    gamma: f64,
    dim: usize,
    nu: f64,
    mean0: &[f64],
    cov0: &[f64],
    times: &[f64],
) -> Result<Vec<MomentPoint>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    HarmonicMoments {
        forcing,
        gamma,
        nu,
        dim,
    }
    .solve(0.0, mean0, cov0, times, 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_forcing_fixed_point() {
        let pts = harmonic_moment_odes(Coefficient::Constant(2.0), 0.3, 1, 0.1, &[2.0], &[0.1], &[5.0]).unwrap();
        assert!((pts[0].mean[0] - 2.0).abs() < 1e-14);
        assert!((pts[0].covariance[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn symmetric_start_stays_symmetric() {
        let d = 4;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 0.1;
        }
        let forcing = Coefficient::Sinusoidal {
            amplitude: 1.25,
            frequency: std::f64::consts::PI,
            offset: 1.5,
        };
        let pts = harmonic_moment_odes(forcing, 0.25, d, 0.01, &[0.7; 4], &cov, &[1.0, 3.0]).unwrap();
        for p in &pts {
            assert!(p.mean.iter().all(|m| (m - p.mean[0]).abs() < 1e-13));
        }
    }

    #[test]
    fn scalar_ou_closed_form() {
        // dX = (a - X) dt + sqrt(2 nu) dW
        let (a, nu, m0, v0, t) = (1.5, 0.2, -0.5, 0.05, 2.0);
        let pts = harmonic_moment_odes(Coefficient::Constant(a), 0.0, 1, nu, &[m0], &[v0], &[t]).unwrap();
        let e = (-t).exp();
        let mean = a + (m0 - a) * e;
        let var = nu + (v0 - nu) * e * e;
        assert!((pts[0].mean[0] - mean).abs() < 1e-11);
        assert!((pts[0].covariance[0] - var).abs() < 1e-11);
    }
}
