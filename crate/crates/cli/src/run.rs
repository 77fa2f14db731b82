//! The `run` subcommand: integrate, optionally simulate the SDE ensemble, and
//! write every output file.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use rons_core::assembler::covering_box;
use rons_core::integrator::{integrate_with, Trajectory};
use rons_core::oracle::{
    empirical_moments, l2_relative_error, simulate_sde, EmpiricalMoments, Ensemble, EnsembleSpec, EquilibriumRef,
    HarmonicMoments, InitialSampler, NormSpec, OuExact,
};
use rons_core::MixtureState;

use crate::config::{BoxSpec, ProblemSpec, RunConfig, SliceSpec};
use crate::output::{write_json, MomentRow, MomentTable, Table};

/// Where a run failed, which decides the exit code.
#[derive(Debug)]
pub enum RunError {
    Config(Vec<String>),
    Solver(String),
    Io(String),
}

pub struct RunArgs {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub timing: bool,
}

#[derive(Serialize)]
struct Report {
    problem: &'static str,
    dim: usize,
    terms: usize,
    hilbert: String,
    method: String,
    alpha: f64,
    t0: f64,
    t_end: f64,
    final_time: f64,
    samples: usize,
    equilibrium_time: Option<f64>,
    conservation: Conservation,
    steps: Steps,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection: Option<ProjectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ou_parameter_error: Option<OuReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    equilibrium_error: Option<EquilibriumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    moment_error: Option<MomentErrorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<MonteCarloReport>,
    slices: Vec<SliceReport>,
}

#[derive(Serialize)]
struct Conservation {
    max_abs_error: f64,
    max_pre_renormalization_drift: f64,
    renormalizations: usize,
}

#[derive(Serialize)]
struct Steps {
    accepted: usize,
    rejected: usize,
    rhs_evaluations: usize,
    max_condition: f64,
    max_clamped_points: usize,
}

#[derive(Serialize)]
struct ProjectionReport {
    initial_objective: f64,
    final_objective: f64,
}

#[derive(Serialize)]
struct OuReport {
    /// Worst relative error over all samples of the peak height `A^2`.
    max_peak_relative_error: f64,
    /// Worst relative error of the width `L`.
    max_width_relative_error: f64,
    /// Worst absolute deviation of the center from zero.
    max_center_error: f64,
    final_peak_relative_error: f64,
    final_width_relative_error: f64,
}

#[derive(Serialize)]
struct EquilibriumReport {
    relative_l2_error: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    panels: usize,
}

#[derive(Serialize)]
struct MomentErrorReport {
    /// `|mean - ref| / |mean_ref|`, maximized over samples.
    max_mean_relative_error: f64,
    /// `|cov - ref|_F / |cov_ref|_F`, maximized over samples.
    max_covariance_relative_error: f64,
    final_mean_relative_error: f64,
    final_covariance_relative_error: f64,
}

#[derive(Serialize)]
struct MonteCarloReport {
    particles: usize,
    dt: f64,
    scheme: String,
    seed: u64,
    escaped: usize,
    checkpoints: Vec<McCheckpoint>,
}

#[derive(Serialize)]
struct McCheckpoint {
    t: f64,
    /// Largest `|rons - mc| / se` over mean entries.
    max_mean_z: f64,
    /// Largest `|rons - mc| / se` over covariance entries.
    max_covariance_z: f64,
    within_three_standard_errors: bool,
}

#[derive(Serialize)]
struct SliceReport {
    file: String,
    axes: Vec<usize>,
    t: f64,
    trapezoid_mass: f64,
    marginal_mass: f64,
}

#[derive(Serialize)]
struct Timing {
    total_seconds: f64,
    setup_seconds: f64,
    integration_seconds: f64,
    assembly_seconds: f64,
    solve_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo_to_rons_ratio: Option<f64>,
}

pub fn execute(mut config: RunConfig, args: &RunArgs) -> Result<PathBuf, RunError> {
    let started = Instant::now();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args.out.clone().or_else(|| config.output_dir.as_ref().map(PathBuf::from));
    let resolved = match (config.resolve(), &out) {
        (Ok(r), Some(_)) => r,
        (resolved, _) => {
            let mut errors = resolved.err().unwrap_or_default();
            if out.is_none() {
                errors.push("output_dir: no output directory; set it or pass --out".into());
            }
            return Err(RunError::Config(errors));
        }
    };
    let out = out.expect("checked above");
    let setup_seconds = started.elapsed().as_secs_f64();

    let integration_started = Instant::now();
    let trajectory = integrate_with(
        &resolved.drift,
        &resolved.initial,
        &resolved.space,
        config.alpha,
        &resolved.grid,
        &resolved.options,
    )
    .map_err(|e| RunError::Solver(e.to_string()))?;
    let integration_seconds = integration_started.elapsed().as_secs_f64();

    let ensemble = match &config.ensemble {
        Some(e) => {
            let spec = EnsembleSpec {
                particles: e.particles,
                dt: e.dt,
                scheme: e.scheme,
                seed: config.ensemble_seed(),
                initial: InitialSampler::Mixture(resolved.initial.clone()),
            };
            let mut times = e.times.clone();
            times.sort_by(f64::total_cmp);
            times.dedup();
            Some(simulate_sde(&resolved.drift, &spec, config.time.t0, &times).map_err(|e| RunError::Solver(e.to_string()))?)
        }
        None => None,
    };

    let io = |e: std::io::Error| RunError::Io(e.to_string());
    let dim = resolved.initial.dim();
    write_trajectory(&out.join("trajectory.csv"), &trajectory).map_err(io)?;
    write_conservation(&out.join("conservation.csv"), &trajectory).map_err(io)?;
    rons_moments(&trajectory).save(&out.join("moments.csv")).map_err(io)?;

    let moment_error = match &config.problem {
        ProblemSpec::HarmonicTrap { dim, gamma, nu, forcing } => {
            let reference = harmonic_reference(&trajectory, &resolved.initial, *dim, *gamma, *nu, forcing.clone(), config.time.t0)?;
            reference.save(&out.join("reference_moments.csv")).map_err(io)?;
            Some(moment_errors(&rons_moments(&trajectory), &reference))
        }
        _ => None,
    };

    let monte_carlo = match (&ensemble, &config.ensemble) {
        (Some(ens), Some(spec)) => {
            let (table, report) = compare_ensemble(&trajectory, ens)?;
            table.save(&out.join("mc_moments.csv")).map_err(io)?;
            Some(MonteCarloReport {
                particles: spec.particles,
                dt: spec.dt,
                scheme: serde_json::to_value(spec.scheme).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
                seed: config.ensemble_seed(),
                escaped: ens.escaped,
                checkpoints: report,
            })
        }
        _ => None,
    };

    let mut slices = Vec::new();
    for (i, spec) in config.slices.iter().enumerate() {
        let name = format!("slices/slice_{i}.csv");
        let report = write_slice(&out.join(&name), spec, &trajectory.last().state, trajectory.last().t).map_err(io)?;
        slices.push(SliceReport { file: name, ..report });
    }

    let ou_parameter_error = match config.problem {
        ProblemSpec::Ou { gamma, sigma } => Some(ou_errors(&trajectory, &OuExact { gamma, sigma })),
        _ => None,
    };

    let equilibrium_error = match &resolved.equilibrium {
        Some(kind) if dim <= 2 => Some(equilibrium_error(kind, &trajectory.last().state, config.error_box.as_ref())?),
        _ => None,
    };

    let report = Report {
        problem: config.problem.name(),
        dim,
        terms: resolved.initial.terms(),
        hilbert: serde_json::to_value(config.hilbert.mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
        method: format!("{:?}", config.method).to_lowercase(),
        alpha: config.alpha,
        t0: config.time.t0,
        t_end: config.time.t_end,
        final_time: trajectory.last().t,
        samples: trajectory.samples.len(),
        equilibrium_time: trajectory.equilibrium_time,
        conservation: Conservation {
            max_abs_error: trajectory.max_conservation_error(),
            max_pre_renormalization_drift: trajectory.stats.max_drift,
            renormalizations: trajectory.stats.renormalizations,
        },
        steps: Steps {
            accepted: trajectory.stats.accepted,
            rejected: trajectory.stats.rejected,
            rhs_evaluations: trajectory.stats.rhs_evals,
            max_condition: trajectory.stats.max_condition,
            max_clamped_points: trajectory.stats.max_clamped_points,
        },
        projection: resolved.projection_objective.map(|(initial_objective, final_objective)| ProjectionReport {
            initial_objective,
            final_objective,
        }),
        ou_parameter_error,
        equilibrium_error,
        moment_error,
        monte_carlo,
        slices,
    };
    write_json(&out.join("report.json"), &report).map_err(io)?;

    if args.timing {
        let mc = ensemble.as_ref().map(|e| e.seconds);
        let timing = Timing {
            total_seconds: started.elapsed().as_secs_f64(),
            setup_seconds,
            integration_seconds,
            assembly_seconds: trajectory.stats.assembly_seconds,
            solve_seconds: trajectory.stats.solve_seconds,
            monte_carlo_seconds: mc,
            monte_carlo_to_rons_ratio: mc.map(|m| m / integration_seconds),
        };
        write_json(&out.join("timing.json"), &timing).map_err(io)?;
    }
    Ok(out)
}

fn write_trajectory(path: &Path, trajectory: &Trajectory) -> std::io::Result<()> {
    let first = &trajectory.samples[0].state;
    let (r, d) = (first.terms(), first.dim());
    let mut header = vec!["t".to_string(), "total_probability".to_string()];
    for k in 0..r {
        header.push(format!("A_{k}"));
        header.push(format!("L_{k}"));
        header.extend((0..d).map(|a| format!("c_{k}_{a}")));
    }
    let mut table = Table::new(header);
    for s in &trajectory.samples {
        let mut row = vec![s.t, s.total_probability];
        row.extend(s.state.to_flat());
        table.row(&row);
    }
    table.save(path)
}

fn write_conservation(path: &Path, trajectory: &Trajectory) -> std::io::Result<()> {
    let mut table = Table::new(["t", "total_probability", "abs_error", "rejected_steps", "condition", "rate"]);
    for s in &trajectory.samples {
        table.row(&[
            s.t,
            s.total_probability,
            (s.total_probability - 1.0).abs(),
            s.rejected as f64,
            s.condition,
            s.rate,
        ]);
    }
    table.save(path)
}

fn rons_moments(trajectory: &Trajectory) -> MomentTable {
    let dim = trajectory.samples[0].state.dim();
    MomentTable {
        dim,
        rows: trajectory
            .samples
            .iter()
            .map(|s| MomentRow {
                t: s.t,
                mean: s.state.mean(),
                covariance: s.state.covariance(),
                mean_std_error: None,
                covariance_std_error: None,
            })
            .collect(),
    }
}

fn harmonic_reference(
    trajectory: &Trajectory,
    initial: &MixtureState,
    dim: usize,
    gamma: f64,
    nu: f64,
    forcing: crate::config::CoefficientSpec,
    t0: f64,
) -> Result<MomentTable, RunError> {
    let times: Vec<f64> = trajectory.samples.iter().map(|s| s.t).collect();
    let solver = HarmonicMoments {
        forcing: forcing.build(),
        gamma,
        nu,
        dim,
    };
    let points = solver
        .solve(t0, &initial.mean(), &initial.covariance(), &times, 1e-12)
        .map_err(|e| RunError::Solver(format!("moment reference: {e}")))?;
    Ok(MomentTable {
        dim,
        rows: points
            .into_iter()
            .map(|p| MomentRow {
                t: p.t,
                mean: p.mean,
                covariance: p.covariance,
                mean_std_error: None,
                covariance_std_error: None,
            })
            .collect(),
    })
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn relative_errors(row: &MomentRow, reference: &MomentRow) -> (f64, f64) {
    (relative(&row.mean, &reference.mean), relative(&row.covariance, &reference.covariance))
}

/// Relative difference; absolute when the reference vanishes (a centered mean).
fn relative(a: &[f64], b: &[f64]) -> f64 {
    let diff = norm(a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(b.iter().copied());
    if scale > 0.0 { diff / scale } else { diff }
}

fn moment_errors(rons: &MomentTable, reference: &MomentTable) -> MomentErrorReport {
    let errors: Vec<(f64, f64)> = rons.rows.iter().zip(&reference.rows).map(|(a, b)| relative_errors(a, b)).collect();
    let last = errors.last().copied().unwrap_or((0.0, 0.0));
    MomentErrorReport {
        max_mean_relative_error: errors.iter().map(|e| e.0).fold(0.0, f64::max),
        max_covariance_relative_error: errors.iter().map(|e| e.1).fold(0.0, f64::max),
        final_mean_relative_error: last.0,
        final_covariance_relative_error: last.1,
    }
}

fn compare_ensemble(trajectory: &Trajectory, ensemble: &Ensemble) -> Result<(MomentTable, Vec<McCheckpoint>), RunError> {
    let dim = trajectory.samples[0].state.dim();
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    for snap in &ensemble.snapshots {
        let m: EmpiricalMoments = empirical_moments(snap).map_err(|e| RunError::Solver(format!("ensemble at t = {}: {e}", snap.t)))?;
        let sample = trajectory
            .at(snap.t)
            .ok_or_else(|| RunError::Solver(format!("no solver sample at ensemble time {}", snap.t)))?;
        let z = |a: &[f64], b: &[f64], se: &[f64]| {
            a.iter()
                .zip(b)
                .zip(se)
                .map(|((x, y), s)| (x - y).abs() / s)
                .fold(0.0, f64::max)
        };
        let max_mean_z = z(&sample.state.mean(), &m.mean, &m.mean_std_error);
        let max_covariance_z = z(&sample.state.covariance(), &m.covariance, &m.covariance_std_error);
        checkpoints.push(McCheckpoint {
            t: snap.t,
            max_mean_z,
            max_covariance_z,
            within_three_standard_errors: max_mean_z <= 3.0 && max_covariance_z <= 3.0,
        });
        rows.push(MomentRow {
            t: snap.t,
            mean: m.mean,
            covariance: m.covariance,
            mean_std_error: Some(m.mean_std_error),
            covariance_std_error: Some(m.covariance_std_error),
        });
    }
    Ok((MomentTable { dim, rows }, checkpoints))
}

fn write_slice(path: &Path, spec: &SliceSpec, state: &MixtureState, t: f64) -> std::io::Result<SliceReport> {
    let n = spec.points;
    let grid = |axis: usize| -> Vec<f64> {
        (0..n)
            .map(|i| spec.lower[axis] + (spec.upper[axis] - spec.lower[axis]) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let trapezoid_weight = |i: usize, h: f64| if i == 0 || i == n - 1 { 0.5 * h } else { h };
    let mut mass = 0.0;
    let table = if spec.axes.len() == 1 {
        let xs = grid(0);
        let h = xs[1] - xs[0];
        let mut table = Table::new([format!("x_{}", spec.axes[0]), "density".to_string()]);
        for (i, x) in xs.iter().enumerate() {
            let p = state.marginal(spec.axes[0], *x);
            mass += trapezoid_weight(i, h) * p;
            table.row(&[*x, p]);
        }
        table
    } else {
        let (xs, ys) = (grid(0), grid(1));
        let (hx, hy) = (xs[1] - xs[0], ys[1] - ys[0]);
        let mut table = Table::new([
            format!("x_{}", spec.axes[0]),
            format!("x_{}", spec.axes[1]),
            "density".to_string(),
        ]);
        for (j, y) in ys.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                let p = state.marginal2((spec.axes[0], spec.axes[1]), *x, *y);
                mass += trapezoid_weight(i, hx) * trapezoid_weight(j, hy) * p;
                table.row(&[*x, *y, p]);
            }
        }
        table
    };
    table.save(path)?;
    Ok(SliceReport {
        file: String::new(),
        axes: spec.axes.clone(),
        t,
        trapezoid_mass: mass,
        marginal_mass: state.window_mass(&spec.axes, &spec.lower, &spec.upper),
    })
}

fn ou_errors(trajectory: &Trajectory, exact: &OuExact) -> OuReport {
    let errors: Vec<(f64, f64, f64)> = trajectory
        .samples
        .iter()
        .map(|s| {
            let e = exact.state(s.t);
            let peak = s.state.amp(0).powi(2);
            let exact_peak = e.amp(0).powi(2);
            (
                ((peak - exact_peak) / exact_peak).abs(),
                ((s.state.width(0) - e.width(0)) / e.width(0)).abs(),
                s.state.center(0)[0].abs(),
            )
        })
        .collect();
    let last = *errors.last().expect("trajectory has samples");
    OuReport {
        max_peak_relative_error: errors.iter().map(|e| e.0).fold(0.0, f64::max),
        max_width_relative_error: errors.iter().map(|e| e.1).fold(0.0, f64::max),
        max_center_error: errors.iter().map(|e| e.2).fold(0.0, f64::max),
        final_peak_relative_error: last.0,
        final_width_relative_error: last.1,
    }
}

fn equilibrium_error(
    kind: &rons_core::oracle::EquilibriumKind,
    state: &MixtureState,
    error_box: Option<&BoxSpec>,
) -> Result<EquilibriumReport, RunError> {
    let reference = EquilibriumRef::new(*kind).map_err(|e| RunError::Solver(format!("equilibrium reference: {e}")))?;
    let (lower, upper, panels) = match error_box {
        Some(b) => (b.lower.clone(), b.upper.clone(), b.panels),
        None => {
            let (lo, hi) = covering_box(state, 6.0);
            (lo, hi, 32)
        }
    };
    let spec = NormSpec::Quadrature {
        lower: lower.clone(),
        upper: upper.clone(),
        panels,
    };
    let relative_l2_error =
        l2_relative_error(state, &|x| reference.density(x), &spec).map_err(|e| RunError::Solver(format!("equilibrium error: {e}")))?;
    Ok(EquilibriumReport {
        relative_l2_error,
        lower,
        upper,
        panels,
    })
}
