//! Adaptive explicit time integration of the parameter ODEs.

mod dopri;
mod rosenbrock;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembler::{self, HilbertChoice};
use crate::error::{check_dim, Error, Result};
use crate::mixture::{MixtureState, WIDTH_FLOOR};
use crate::operator::DriftModel;

/// Smallest step accepted before declaring the problem too stiff.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub h0: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Store every `output_stride`-th accepted step; 0 stores checkpoints only.
    #[serde(default)]
    pub output_stride: usize,
    /// Times hit exactly and always stored. `t_end` is implied.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64) -> Self {
        Self {
            t0,
            t_end,
            h0: 1e-3,
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 1_000_000,
            output_stride: 0,
            checkpoints: Vec::new(),
        }
    }

    pub fn tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn initial_step(mut self, h0: f64) -> Self {
        self.h0 = h0;
        self
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.output_stride = stride;
        self
    }

    pub fn checkpoints(mut self, times: Vec<f64>) -> Self {
        self.checkpoints = times;
        self
    }

    /// `n` evenly spaced checkpoints after `t0`, ending at `t_end`.
    pub fn uniform_checkpoints(self, n: usize) -> Self {
        let (t0, t1) = (self.t0, self.t_end);
        let times = (1..=n)
            .map(|i| if i == n { t1 } else { t0 + (t1 - t0) * i as f64 / n as f64 })
            .collect();
        self.checkpoints(times)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t_end > self.t0) {
            return bad(format!("need finite t_end > t0, got [{}, {}]", self.t0, self.t_end));
        }
        if !(self.h0 > 0.0 && self.h0.is_finite()) {
            return bad(format!("initial step must be positive, got {}", self.h0));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if let Some(t) = self.checkpoints.iter().find(|t| !(**t > self.t0 && **t <= self.t_end)) {
            return bad(format!("checkpoint {t} outside ({}, {}]", self.t0, self.t_end));
        }
        Ok(())
    }

    fn output_times(&self) -> Vec<f64> {
        let mut times = self.checkpoints.clone();
        times.push(self.t_end);
        // descending, so that of two times closer than roundoff the later survives
        times.sort_by(|a, b| b.total_cmp(a));
        times.dedup_by(|a, b| (*b - *a) <= 1e-12 * b.abs().max(1.0));
        times.reverse();
        times
    }
}

/// Stop criterion on the relative parameter velocity `|thetadot| / |theta|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumStop {
    /// Consecutive accepted steps required below the threshold.
    pub window: usize,
    pub threshold: f64,
    /// End the run at detection rather than only recording the time.
    pub stop: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Explicit Dormand-Prince 5(4).
    #[default]
    Dopri5,
    /// Linearly implicit Rosenbrock 2(3) with a finite-difference Jacobian,
    /// for stiff parameter flows.
    Rosenbrock23,
}

impl Method {
    /// Exponent in the step-size update `h * err^(-1/q)`.
    fn control_order(self) -> f64 {
        match self {
            Method::Dopri5 => 5.0,
            Method::Rosenbrock23 => 3.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IntegrateOptions {
    pub method: Method,
    pub equilibrium: Option<EquilibriumStop>,
    /// Amplitudes are rescaled when `|I - 1|` exceeds this after a step.
    pub renormalize_tol: f64,
    /// Hard failure threshold on `|I - 1|` after a step.
    pub conservation_limit: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            equilibrium: None,
            renormalize_tol: 1e-10,
            conservation_limit: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub t: f64,
    pub state: MixtureState,
    pub total_probability: f64,
    /// Trial steps rejected since the previous stored sample.
    pub rejected: usize,
    /// Condition estimate of the regularized metric at this state.
    pub condition: f64,
    /// `|thetadot| / |theta|`
    pub rate: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub renormalizations: usize,
    /// Largest `|I - 1|` seen after a step, before renormalization.
    pub max_drift: f64,
    pub max_clamped_points: usize,
    pub max_condition: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub stats: IntegrationStats,
    pub equilibrium_time: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory always holds the initial state")
    }

    /// `max |I - 1|` over stored samples.
    pub fn max_conservation_error(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.total_probability - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Sample stored at time `t`, if any.
    pub fn at(&self, t: f64) -> Option<&Sample> {
        self.samples.iter().find(|s| s.t == t)
    }
}

struct StageInfo {
    condition: f64,
    clamped: usize,
}

enum StageError {
    Collapse { term: usize, width: f64 },
    Fatal(Error),
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn integrate(
    drift: &DriftModel,
    theta0: &MixtureState,
    space: &HilbertChoice,
    alpha: f64,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    integrate_with(drift, theta0, space, alpha, grid, &IntegrateOptions::default())
}

pub fn integrate_with(
    drift: &DriftModel,
    theta0: &MixtureState,
    space: &HilbertChoice,
    alpha: f64,
    grid: &TimeGrid,
    options: &IntegrateOptions,
) -> Result<Trajectory> {
    grid.validate()?;
    check_dim(drift.dim(), theta0.dim())?;
    let total0 = theta0.total_probability();
    if (total0 - 1.0).abs() > options.renormalize_tol {
        return Err(Error::NotNormalized(total0));
    }
    let started = Instant::now();
    let dim = theta0.dim();
    let mut stats = IntegrationStats::default();
    let mut assembly_seconds = 0.0;
    let mut solve_seconds = 0.0;
    let mut rhs_evals = 0;

    let mut rhs = |t: f64, y: &[f64]| -> std::result::Result<(Vec<f64>, StageInfo), StageError> {
        for (k, chunk) in y.chunks_exact(dim + 2).enumerate() {
            if !(chunk[1] > WIDTH_FLOOR) {
                return Err(StageError::Collapse { term: k, width: chunk[1] });
            }
        }
        let state = MixtureState::from_flat(dim, y).map_err(StageError::Fatal)?;
        rhs_evals += 1;
        let clock = Instant::now();
        let sys = assembler::assemble(drift, &state, t, alpha, space).map_err(StageError::Fatal)?;
        assembly_seconds += clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let sol = sys.solve().map_err(StageError::Fatal)?;
        solve_seconds += clock.elapsed().as_secs_f64();
        Ok((
            sol.theta_dot.as_slice().to_vec(),
            StageInfo {
                condition: sol.condition,
                clamped: sys.clamped_points,
            },
        ))
    };

    let fatal = |e: StageError, t: f64| match e {
        StageError::Fatal(e) => e,
        StageError::Collapse { term, width } => Error::WidthCollapse { term, width, t },
    };

    let mut t = grid.t0;
    let mut y = theta0.to_flat();
    let (mut k1, mut info) = rhs(t, &y).map_err(|e| fatal(e, t))?;
    let mut rate = norm(&k1) / norm(&y);
    let mut samples = vec![Sample {
        t,
        state: theta0.clone(),
        total_probability: total0,
        rejected: 0,
        condition: info.condition,
        rate,
    }];
    stats.max_condition = info.condition;
    stats.max_clamped_points = info.clamped;

    let outputs = grid.output_times();
    let mut next_out = 0;
    let mut h = grid.h0.min(grid.t_end - grid.t0);
    let mut rejected_since = 0;
    let mut last_collapse: Option<(usize, f64)> = None;
    let mut quiet_steps = 0usize;
    let mut quiet_since = t;
    let mut equilibrium_time = None;
    let mut steps = 0usize;
    let mut linearization = None;

    loop {
        if steps >= grid.max_steps {
            return Err(Error::MaxStepsExceeded { steps, t });
        }
        steps += 1;
        let target = outputs[next_out];
        let remaining = target - t;
        let hits = h >= remaining * (1.0 - 1e-12);
        let h_try = if hits { remaining } else { h };
        if h_try < MIN_STEP {
            return Err(match last_collapse {
                Some((term, width)) => Error::WidthCollapse { term, width, t },
                None => Error::StepSizeUnderflow { t, h: h_try },
            });
        }

        let attempt = match options.method {
            Method::Dopri5 => dopri::step(&mut rhs, t, &y, &k1, h_try).map(Some),
            Method::Rosenbrock23 => {
                if linearization.is_none() {
                    linearization = Some(rosenbrock::linearize(&mut rhs, t, &y, &k1).map_err(|e| fatal(e, t))?);
                }
                let lin = linearization.as_ref().expect("just computed");
                rosenbrock::step(&mut rhs, lin, t, &y, &k1, h_try)
            }
        };
        let trial = match attempt {
            Ok(Some(trial)) => trial,
            Ok(None) => {
                stats.rejected += 1;
                rejected_since += 1;
                h = h_try * 0.25;
                continue;
            }
            Err(StageError::Collapse { term, width }) => {
                last_collapse = Some((term, width));
                stats.rejected += 1;
                rejected_since += 1;
                h = h_try * 0.25;
                continue;
            }
            Err(e) => return Err(fatal(e, t)),
        };
        let err = dopri::error_norm(&trial.err, &y, &trial.y, grid.rtol, grid.atol);
        let inv_order = 1.0 / options.method.control_order();
        if !(err <= 1.0) {
            stats.rejected += 1;
            rejected_since += 1;
            let factor = if err.is_finite() { (0.9 * err.powf(-inv_order)).max(0.2) } else { 0.2 };
            h = h_try * factor;
            continue;
        }

        last_collapse = None;
        stats.accepted += 1;
        linearization = None;
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-inv_order)).clamp(0.2, 5.0) };
        let proposal = h_try * factor;
        h = if hits { proposal.max(h) } else { proposal };
        t = if hits { target } else { t + h_try };
        y = trial.y;
        k1 = trial.k7;
        info = trial.k7_info;

        let mut state = MixtureState::from_flat(dim, &y)?;
        let mut total = state.total_probability();
        let drift_mass = (total - 1.0).abs();
        stats.max_drift = stats.max_drift.max(drift_mass);
        if drift_mass > options.conservation_limit {
            return Err(Error::ConservationViolated { t, total });
        }
        if drift_mass > options.renormalize_tol {
            state = state.normalized();
            total = state.total_probability();
            y = state.to_flat();
            stats.renormalizations += 1;
            let (k, i) = rhs(t, &y).map_err(|e| fatal(e, t))?;
            k1 = k;
            info = i;
        }
        stats.max_condition = stats.max_condition.max(info.condition);
        stats.max_clamped_points = stats.max_clamped_points.max(info.clamped);
        rate = norm(&k1) / norm(&y);

        let mut stop = false;
        if let Some(eq) = options.equilibrium {
            if rate < eq.threshold {
                if quiet_steps == 0 {
                    quiet_since = t;
                }
                quiet_steps += 1;
                if quiet_steps >= eq.window.max(1) && equilibrium_time.is_none() {
                    equilibrium_time = Some(quiet_since);
                    stop = eq.stop;
                }
            } else {
                quiet_steps = 0;
            }
        }

        let stride_hit = grid.output_stride > 0 && stats.accepted % grid.output_stride == 0;
        if hits || stride_hit || stop {
            samples.push(Sample {
                t,
                state,
                total_probability: total,
                rejected: rejected_since,
                condition: info.condition,
                rate,
            });
            rejected_since = 0;
        }
        if hits {
            next_out += 1;
        }
        if stop || next_out == outputs.len() {
            break;
        }
    }

    stats.rhs_evals = rhs_evals;
    stats.assembly_seconds = assembly_seconds;
    stats.solve_seconds = solve_seconds;
    stats.total_seconds = started.elapsed().as_secs_f64();
    Ok(Trajectory {
        samples,
        stats,
        equilibrium_time,
    })
}

/// First stored time from which `rate` stays below `threshold` for `window`
/// consecutive samples.
pub fn detect_equilibrium(samples: &[Sample], window: usize, threshold: f64) -> Option<f64> {
    let window = window.max(1);
    let mut run = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.rate < threshold {
            run += 1;
            if run == window {
                return Some(samples[i + 1 - window].t);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_initial(t0: f64) -> MixtureState {
        let a_paper = (1.0 / (std::f64::consts::PI * (1.0 - (-2.0 * t0).exp()))).sqrt();
        let l = 1.0 / (std::f64::consts::PI.sqrt() * a_paper);
        MixtureState::new(1, vec![a_paper.sqrt()], vec![l], vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn null_dynamics_keep_state() {
        let theta = MixtureState::new(2, vec![1.0], vec![std::f64::consts::PI.powf(-0.5)], vec![vec![0.3, -0.2]])
            .unwrap()
            .normalized();
        let drift = DriftModel::zero(2, 0.0).unwrap();
        let traj = integrate(&drift, &theta, &HilbertChoice::l2_symbolic(), 0.0, &TimeGrid::new(0.0, 1.0)).unwrap();
        assert_eq!(traj.last().state, theta);
        assert_eq!(traj.last().t, 1.0);
    }

    #[test]
    fn rejects_unnormalized_start() {
        let theta = MixtureState::new(1, vec![1.0], vec![1.0], vec![vec![0.0]]).unwrap();
        let drift = DriftModel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let err = integrate(&drift, &theta, &HilbertChoice::l2_symbolic(), 0.0, &TimeGrid::new(0.0, 1.0));
        assert!(matches!(err, Err(Error::NotNormalized(_))));
    }

    #[test]
    fn checkpoints_are_hit_exactly() {
        let drift = DriftModel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.01, 1.0).checkpoints(vec![0.1, 0.25, 0.5]);
        let traj = integrate(&drift, &ou_initial(0.01), &HilbertChoice::l2_symbolic(), 0.0, &grid).unwrap();
        let times: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
        assert_eq!(times, vec![0.01, 0.1, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn equilibrium_of_constant_trajectory_is_first_window() {
        let state = ou_initial(1.0);
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample {
                t: i as f64,
                state: state.clone(),
                total_probability: 1.0,
                rejected: 0,
                condition: 1.0,
                rate: 0.0,
            })
            .collect();
        assert_eq!(detect_equilibrium(&samples, 3, 1e-8), Some(0.0));
        assert_eq!(detect_equilibrium(&samples, 6, 1e-8), None);
    }

    #[test]
    fn width_collapse_is_reported() {
        // pure contraction with no diffusion drives L to zero in finite precision
        let drift = DriftModel::harmonic_trap(1, 0.0, 0.0, crate::operator::Coefficient::Constant(0.0)).unwrap();
        let theta = MixtureState::new(1, vec![std::f64::consts::PI.powf(-0.25)], vec![1.0], vec![vec![0.0]]).unwrap();
        let grid = TimeGrid::new(0.0, 100.0).tolerances(1e-10, 1e-30);
        let result = integrate(&drift, &theta, &HilbertChoice::l2_symbolic(), 0.0, &grid);
        assert!(matches!(result, Err(Error::WidthCollapse { term: 0, .. })), "{result:?}");
    }
}
