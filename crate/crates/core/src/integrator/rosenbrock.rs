//! Two-stage L-stable Rosenbrock method of order 2 with an order-3 error
//! estimate (Shampine-Reichelt), with a finite-difference Jacobian.

use nalgebra::{DMatrix, DVector, LU, Dyn};

const D: f64 = 0.292_893_218_813_452_5; // 1 / (2 + sqrt 2)
const E32: f64 = 7.414_213_562_373_095; // 6 + sqrt 2

/// `df/dy` and `df/dt` at the step's base point.
pub(crate) struct Linearization {
    jac: DMatrix<f64>,
    dfdt: DVector<f64>,
}

pub(crate) fn linearize<S, E, F>(f: &mut F, t: f64, y: &[f64], f0: &[f64]) -> Result<Linearization, E>
where
    F: FnMut(f64, &[f64]) -> Result<(Vec<f64>, S), E>,
{
    let n = y.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.to_vec();
    for c in 0..n {
        let h = 1e-7 * y[c].abs().max(1e-3);
        yp[c] = y[c] + h;
        let (fp, _) = f(t, &yp)?;
        yp[c] = y[c];
        for r in 0..n {
            jac[(r, c)] = (fp[r] - f0[r]) / h;
        }
    }
    let ht = 1e-7 * t.abs().max(1e-3);
    let (ft, _) = f(t + ht, y)?;
    let dfdt = DVector::from_iterator(n, ft.iter().zip(f0).map(|(a, b)| (a - b) / ht));
    Ok(Linearization { jac, dfdt })
}

pub(crate) use super::dopri::Trial;

/// One step of size `h`. `None` inside `Ok` signals a singular iteration
/// matrix, handled by the caller as a rejection.
pub(crate) fn step<S, E, F>(
    f: &mut F,
    lin: &Linearization,
    t: f64,
    y: &[f64],
    f0: &[f64],
    h: f64,
) -> Result<Option<Trial<S>>, E>
where
    F: FnMut(f64, &[f64]) -> Result<(Vec<f64>, S), E>,
{
    let n = y.len();
    let w = DMatrix::identity(n, n) - &lin.jac * (h * D);
    let lu: LU<f64, Dyn, Dyn> = w.lu();
    if !lu.is_invertible() {
        return Ok(None);
    }
    let f0v = DVector::from_column_slice(f0);
    let Some(k1) = lu.solve(&(&f0v + &lin.dfdt * (h * D))) else {
        return Ok(None);
    };
    let mid: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    let (f1, _) = f(t + 0.5 * h, &mid)?;
    let f1v = DVector::from_vec(f1);
    let Some(k2) = lu.solve(&(&f1v - &k1)).map(|v| v + &k1) else {
        return Ok(None);
    };
    let y_new: Vec<f64> = (0..n).map(|i| y[i] + h * k2[i]).collect();
    let (f2, info) = f(t + h, &y_new)?;
    let f2v = DVector::from_column_slice(&f2);
    let rhs3 = &f2v - (&k2 - &f1v) * E32 - (&k1 - &f0v) * 2.0 + &lin.dfdt * (h * D);
    let Some(k3) = lu.solve(&rhs3) else {
        return Ok(None);
    };
    let err = ((&k1 - &k2 * 2.0 + &k3) * (h / 6.0)).as_slice().to_vec();
    Ok(Some(Trial {
        y: y_new,
        err,
        k7: f2,
        k7_info: info,
    }))
}
