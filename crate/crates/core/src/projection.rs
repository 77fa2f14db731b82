//! Least-squares projection of an initial density onto the mixture manifold
//! by damped Gauss-Newton (Levenberg-Marquardt) iterations.

use nalgebra::{DMatrix, DVector};

use crate::assembler::{covering_box, metric_l2_kernels, HilbertChoice, HilbertMode, WEIGHT_FLOOR};
use crate::error::{Error, Result};
use crate::gausspoly::{inner_product, GaussPolySum};
use crate::mixture::{MixtureState, WIDTH_FLOOR};
use crate::oracle::quadrature::CompositeRule;

/// Density to project.
#[derive(Clone, Copy)]
pub enum TargetDensity<'a> {
    Pointwise(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    /// Exact `L2` objective through the polynomial-Gaussian algebra.
    Closed(&'a GaussPolySum),
}

impl TargetDensity<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TargetDensity::Pointwise(f) => f(x),
            TargetDensity::Closed(s) => s.terms().iter().map(|g| g.poly().evaluate(x) * g.gaussian_factor(x)).sum(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionOptions {
    pub max_iterations: usize,
    /// Stop when the objective decreases by less than this fraction.
    pub rel_tol: f64,
    /// Quadrature panels per axis (8 nodes each) for a pointwise target in
    /// symbolic `L2` mode; `d <= 3`.
    pub quadrature_panels: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tol: 1e-14,
            quadrature_panels: 24,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    /// Minimizer rescaled to unit total probability.
    pub state: MixtureState,
    /// Objective at the minimizer before rescaling.
    pub objective: f64,
    pub initial_objective: f64,
    /// Objective after each accepted iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

enum Objective<'a> {
    Exact(&'a GaussPolySum, f64),
    Points { points: Vec<Vec<f64>>, weights: Vec<f64>, target: Vec<f64> },
}

impl Objective<'_> {
    fn value(&self, state: &MixtureState) -> f64 {
        match self {
            Objective::Exact(target, target_sq) => {
                let own = state.to_gauss_poly_sum();
                let cross = own.inner_product_l2(target).expect("dimensions checked");
                let sq = own.inner_product_l2(&own).expect("dimensions checked");
                (sq - 2.0 * cross + target_sq).max(0.0)
            }
            Objective::Points { points, weights, target } => points
                .iter()
                .zip(weights)
                .zip(target)
                .map(|((x, w), t)| w * (state.density(x) - t).powi(2))
                .sum(),
        }
    }

    /// Gauss-Newton matrix and gradient half `J^T W r`.
    fn normal(&self, state: &MixtureState) -> (DMatrix<f64>, DVector<f64>) {
        let n = state.n_params();
        match self {
            Objective::Exact(target, _) => {
                let metric = metric_l2_kernels(state);
                let partials = state.partial_gauss_polys();
                let own = state.to_gauss_poly_sum();
                let mut grad = DVector::zeros(n);
                for (i, p) in partials.iter().enumerate() {
                    let plus: f64 = own.terms().iter().map(|g| inner_product(p, g).unwrap()).sum();
                    let minus: f64 = target.terms().iter().map(|g| inner_product(p, g).unwrap()).sum();
                    grad[i] = plus - minus;
                }
                (metric, grad)
            }
            Objective::Points { points, weights, target } => {
                let mut a = DMatrix::zeros(n, n);
                let mut g = DVector::zeros(n);
                let mut row = vec![0.0; n];
                for ((x, w), t) in points.iter().zip(weights).zip(target) {
                    state.param_gradient_into(x, &mut row);
                    let r = state.density(x) - t;
                    for i in 0..n {
                        let wi = w * row[i];
                        g[i] += wi * r;
                        for j in i..n {
                            a[(i, j)] += wi * row[j];
                        }
                    }
                }
                a.fill_lower_triangle_with_upper_triangle();
                (a, g)
            }
        }
    }
}

fn quadrature_points(lower: &[f64], upper: &[f64], panels: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rules: Vec<CompositeRule> = lower
        .iter()
        .zip(upper)
        .map(|(&a, &b)| CompositeRule::new(a, b, panels, 8))
        .collect();
    let m = rules[0].nodes.len();
    let d = rules.len();
    let total = m.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut x = vec![0.0; d];
        let mut w = 1.0;
        for (axis, rule) in rules.iter().enumerate() {
            let i = rem % m;
            rem /= m;
            x[axis] = rule.nodes[i];
            w *= rule.weights[i];
        }
        points.push(x);
        weights.push(w);
    }
    (points, weights)
}

/// Minimizes `|p(theta) - p0|^2` in the norm selected by `space`, starting
/// from `guess`, then rescales amplitudes to unit total probability.
pub fn project_initial_condition(
    p0: TargetDensity<'_>,
    guess: &MixtureState,
    space: &HilbertChoice,
    options: &ProjectionOptions,
) -> Result<Projection> {
    let d = guess.dim();
    let objective = match (space.mode(), p0) {
        (HilbertMode::L2Symbolic, TargetDensity::Closed(target)) => {
            crate::error::check_dim(d, target.dim())?;
            Objective::Exact(target, target.inner_product_l2(target)?)
        }
        (HilbertMode::L2Symbolic, TargetDensity::Pointwise(_)) => {
            if d > 3 {
                return Err(Error::InvalidArgument(format!(
                    "quadrature projection supports d <= 3, got {d}; supply a closed-form target"
                )));
            }
            let (lower, upper) = covering_box(guess, 8.0);
            let (points, weights) = quadrature_points(&lower, &upper, options.quadrature_panels);
            let target = points.iter().map(|x| p0.eval(x)).collect();
            Objective::Points { points, weights, target }
        }
        (mode, _) => {
            let grid = space.collocation().expect("collocation modes carry a grid");
            crate::error::check_dim(d, grid.dim())?;
            let points: Vec<Vec<f64>> = grid.points().map(<[f64]>::to_vec).collect();
            let target: Vec<f64> = points.iter().map(|x| p0.eval(x)).collect();
            let weights = match mode {
                HilbertMode::WeightedCollocation => target.iter().map(|t| 1.0 / t.max(WEIGHT_FLOOR)).collect(),
                _ => vec![1.0; points.len()],
            };
            Objective::Points { points, weights, target }
        }
    };

    let mut state = guess.clone();
    let initial_objective = objective.value(&state);
    let mut value = initial_objective;
    let mut history = vec![value];
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let n = state.n_params();

    while iterations < options.max_iterations {
        iterations += 1;
        if value == 0.0 {
            converged = true;
            break;
        }
        let (a, g) = objective.normal(&state);
        let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
        let theta = DVector::from_vec(state.to_flat());
        let mut improved = None;
        while mu < 1e16 {
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += mu * (a[(i, i)] + 1e-12 * scale);
            }
            let step = match damped.clone().cholesky() {
                Some(c) => Some(c.solve(&g)),
                None => damped.lu().solve(&g),
            };
            let Some(step) = step else {
                mu *= 4.0;
                continue;
            };
            let trial = &theta - step;
            let widths_ok = trial.as_slice().chunks_exact(d + 2).all(|c| c[1] > WIDTH_FLOOR);
            if widths_ok {
                if let Ok(candidate) = MixtureState::from_flat(d, trial.as_slice()) {
                    let v = objective.value(&candidate);
                    if v < value {
                        improved = Some((candidate, v));
                        mu = (mu / 3.0).max(1e-12);
                        break;
                    }
                }
            }
            mu *= 4.0;
        }
        let Some((candidate, v)) = improved else {
            // no damped step decreases the objective: stationary point
            converged = true;
            break;
        };
        let decrease = value - v;
        state = candidate;
        value = v;
        history.push(v);
        if decrease <= options.rel_tol * value || value < 1e-300 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            objective: value,
        });
    }
    let total = state.total_probability();
    if (total - 1.0).abs() > 4.0 * f64::EPSILON {
        state = state.normalized();
    }
    Ok(Projection {
        state,
        objective: value,
        initial_objective,
        history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::CollocationGrid;

    #[test]
    fn exact_mixture_is_a_fixed_point() {
        let s = MixtureState::new(1, vec![0.5, 0.6], vec![0.8, 1.1], vec![vec![-1.0], vec![0.7]])
            .unwrap()
            .normalized();
        let target = s.to_gauss_poly_sum();
        let out = project_initial_condition(
            TargetDensity::Closed(&target),
            &s,
            &HilbertChoice::l2_symbolic(),
            &ProjectionOptions::default(),
        )
        .unwrap();
        assert!(out.objective < 1e-28);
        for (a, b) in out.state.to_flat().iter().zip(s.to_flat()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn collocation_projection_of_single_gaussian() {
        let f = |x: &[f64]| (-(x[0] - 0.3).powi(2) / 0.5).exp() / (0.5 * std::f64::consts::PI).sqrt();
        let guess = MixtureState::new(1, vec![0.9], vec![1.0], vec![vec![0.0]]).unwrap();
        let grid = CollocationGrid::equidistant(&[-5.0], &[5.0], &[201]).unwrap();
        let out = project_initial_condition(
            TargetDensity::Pointwise(&f),
            &guess,
            &HilbertChoice::l2_collocation(grid),
            &ProjectionOptions::default(),
        )
        .unwrap();
        assert!((out.state.width(0) - 0.5f64.sqrt()).abs() < 1e-8);
        assert!((out.state.center(0)[0] - 0.3).abs() < 1e-8);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
