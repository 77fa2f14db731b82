//! Dormand-Prince 5(4) tableau with the first-same-as-last property.

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Fifth-order weights minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Result of one trial step.
pub(crate) struct Trial<S> {
    pub y: Vec<f64>,
    pub err: Vec<f64>,
    /// Derivative at the new point, reusable as the next step's first stage.
    pub k7: Vec<f64>,
    pub k7_info: S,
}

fn combine(y: &[f64], h: f64, ks: &[(&[f64], f64)]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (k, c) in ks {
        if *c == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += h * c * v;
        }
    }
    out
}

/// Takes one step of size `h` from `(t, y)` with first stage `k1`.
/// `f` returns `Err` for stage states it cannot evaluate.
pub(crate) fn step<S, E, F>(f: &mut F, t: f64, y: &[f64], k1: &[f64], h: f64) -> Result<Trial<S>, E>
where
    F: FnMut(f64, &[f64]) -> Result<(Vec<f64>, S), E>,
{
    let (k2, _) = f(t + C2 * h, &combine(y, h, &[(k1, A21)]))?;
    let (k3, _) = f(t + C3 * h, &combine(y, h, &[(k1, A31), (&k2, A32)]))?;
    let (k4, _) = f(t + C4 * h, &combine(y, h, &[(k1, A41), (&k2, A42), (&k3, A43)]))?;
    let (k5, _) = f(
        t + C5 * h,
        &combine(y, h, &[(k1, A51), (&k2, A52), (&k3, A53), (&k4, A54)]),
    )?;
    let (k6, _) = f(
        t + h,
        &combine(y, h, &[(k1, A61), (&k2, A62), (&k3, A63), (&k4, A64), (&k5, A65)]),
    )?;
    let y_new = combine(y, h, &[(k1, A71), (&k3, A73), (&k4, A74), (&k5, A75), (&k6, A76)]);
    let (k7, k7_info) = f(t + h, &y_new)?;
    let err = (0..y.len())
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    Ok(Trial {
        y: y_new,
        err,
        k7,
        k7_info,
    })
}

/// Scaled RMS norm of the error estimate.
pub(crate) fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let scale = atol + rtol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_rhs(_t: f64, y: &[f64]) -> Result<(Vec<f64>, ()), ()> {
        Ok((vec![-y[0]], ()))
    }

    #[test]
    fn fifth_order_local_error() {
        let mut f = exp_rhs;
        let mut local = |h: f64| {
            let trial = step(&mut f, 0.0, &[1.0], &[-1.0], h).ok().unwrap();
            (trial.y[0] - (-h).exp()).abs()
        };
        let ratio = local(0.1) / local(0.05);
        // local error is O(h^6)
        assert!(ratio > 50.0 && ratio < 80.0, "{ratio}");
    }

    #[test]
    fn error_estimate_is_small_for_smooth_problem() {
        let mut f = exp_rhs;
        let trial = step(&mut f, 0.0, &[1.0], &[-1.0], 0.1).ok().unwrap();
        assert!(trial.err[0].abs() < 1e-6);
        assert!((trial.k7[0] + trial.y[0]).abs() < 1e-15);
    }
}
