//! The `compare` subcommand: moment differences between two outputs at
//! shared checkpoints, with z-scores when standard errors are present and
//! exact `L2` differences when both sides carry mixture trajectories.

use std::path::{Path, PathBuf};

use serde::Serialize;

use rons_core::MixtureState;

use crate::output::{MomentRow, MomentTable};
use crate::run::relative_errors;

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub a: String,
    pub b: String,
    pub dim: usize,
    pub checkpoints: Vec<CheckpointDiff>,
    pub max_abs_mean_difference: f64,
    pub max_abs_covariance_difference: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_three_standard_errors: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct CheckpointDiff {
    pub t: f64,
    /// `a - b`
    pub mean_difference: Vec<f64>,
    /// `a - b`, row-major.
    pub covariance_difference: Vec<f64>,
    /// Relative to `b`.
    pub mean_relative_error: f64,
    pub covariance_relative_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_mean_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_covariance_z: Option<f64>,
    /// `|p_a - p_b| / |p_b|` in `L2`, exact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_relative_difference: Option<f64>,
}

struct Source {
    label: String,
    moments: MomentTable,
    trajectory: Option<Vec<(f64, MixtureState)>>,
}

fn load_source(path: &Path) -> Result<Source, String> {
    let (moments_path, trajectory_path): (PathBuf, Option<PathBuf>) = if path.is_dir() {
        let t = path.join("trajectory.csv");
        (path.join("moments.csv"), t.exists().then_some(t))
    } else {
        (path.to_path_buf(), None)
    };
    let moments = MomentTable::load(&moments_path)?;
    let trajectory = trajectory_path.map(|p| load_trajectory(&p)).transpose()?;
    Ok(Source {
        label: path.display().to_string(),
        moments,
        trajectory,
    })
}

/// Reads a `trajectory.csv` written by `run` back into mixture states.
pub fn load_trajectory(path: &Path) -> Result<Vec<(f64, MixtureState)>, String> {
    let err = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(&e))?;
    let header = reader.headers().map_err(|e| err(&e))?.clone();
    if header.get(0) != Some("t") || header.get(1) != Some("total_probability") {
        return Err(err(&"not a trajectory file"));
    }
    let dim = header.iter().filter(|h| h.starts_with("c_0_")).count();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(&e))?;
        let values: Vec<f64> = record
            .iter()
            .map(str::parse::<f64>)
            .collect::<Result<_, _>>()
            .map_err(|e| err(&e))?;
        let state = MixtureState::from_flat(dim, &values[2..]).map_err(|e| err(&e))?;
        out.push((values[0], state));
    }
    Ok(out)
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Pairs rows at common times. The coarser grid must be contained in the
/// finer one.
fn match_times<'a>(a: &'a [MomentRow], b: &'a [MomentRow]) -> Result<Vec<(&'a MomentRow, &'a MomentRow)>, String> {
    let swap = a.len() < b.len();
    let (coarse, fine) = if swap { (a, b) } else { (b, a) };
    let mut pairs = Vec::with_capacity(coarse.len());
    for row in coarse {
        let other = fine
            .iter()
            .find(|r| same_time(r.t, row.t))
            .ok_or_else(|| format!("time-grid mismatch: t = {} has no counterpart", row.t))?;
        pairs.push(if swap { (row, other) } else { (other, row) });
    }
    if pairs.is_empty() {
        return Err("time-grid mismatch: no checkpoints".into());
    }
    Ok(pairs)
}

fn l2_difference(a: &MixtureState, b: &MixtureState) -> Option<f64> {
    let pa = a.to_gauss_poly_sum();
    let pb = b.to_gauss_poly_sum();
    let aa = pa.inner_product_l2(&pa).ok()?;
    let bb = pb.inner_product_l2(&pb).ok()?;
    let ab = pa.inner_product_l2(&pb).ok()?;
    Some((aa - 2.0 * ab + bb).max(0.0).sqrt() / bb.sqrt())
}

fn max_z(a: &[f64], b: &[f64], se_a: Option<&[f64]>, se_b: Option<&[f64]>) -> Option<f64> {
    if se_a.is_none() && se_b.is_none() {
        return None;
    }
    let se = |s: Option<&[f64]>, i: usize| s.map_or(0.0, |v| v[i]);
    Some(
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| {
                let s = (se(se_a, i).powi(2) + se(se_b, i).powi(2)).sqrt();
                if x == y {
                    0.0
                } else {
                    (x - y).abs() / s
                }
            })
            .fold(0.0, f64::max),
    )
}

pub fn compare(a: &Path, b: &Path) -> Result<CompareReport, String> {
    let sa = load_source(a)?;
    let sb = load_source(b)?;
    if sa.moments.dim != sb.moments.dim {
        return Err(format!("dimension mismatch: {} vs {}", sa.moments.dim, sb.moments.dim));
    }
    let pairs = match_times(&sa.moments.rows, &sb.moments.rows)?;
    let find_state = |traj: &Option<Vec<(f64, MixtureState)>>, t: f64| {
        traj.as_ref()
            .and_then(|v| v.iter().find(|(s, _)| same_time(*s, t)).map(|(_, m)| m.clone()))
    };

    let mut checkpoints = Vec::with_capacity(pairs.len());
    for (ra, rb) in pairs {
        let (mean_relative_error, covariance_relative_error) = relative_errors(ra, rb);
        let l2 = match (find_state(&sa.trajectory, ra.t), find_state(&sb.trajectory, rb.t)) {
            (Some(x), Some(y)) => l2_difference(&x, &y),
            _ => None,
        };
        checkpoints.push(CheckpointDiff {
            t: rb.t,
            mean_difference: ra.mean.iter().zip(&rb.mean).map(|(x, y)| x - y).collect(),
            covariance_difference: ra.covariance.iter().zip(&rb.covariance).map(|(x, y)| x - y).collect(),
            mean_relative_error,
            covariance_relative_error,
            max_mean_z: max_z(&ra.mean, &rb.mean, ra.mean_std_error.as_deref(), rb.mean_std_error.as_deref()),
            max_covariance_z: max_z(
                &ra.covariance,
                &rb.covariance,
                ra.covariance_std_error.as_deref(),
                rb.covariance_std_error.as_deref(),
            ),
            l2_relative_difference: l2,
        });
    }
    let abs_max = |f: &dyn Fn(&CheckpointDiff) -> &Vec<f64>| {
        checkpoints
            .iter()
            .flat_map(|c| f(c).iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    };
    let max_z = checkpoints
        .iter()
        .flat_map(|c| [c.max_mean_z, c.max_covariance_z])
        .flatten()
        .reduce(f64::max);
    Ok(CompareReport {
        a: sa.label,
        b: sb.label,
        dim: sa.moments.dim,
        max_abs_mean_difference: abs_max(&|c| &c.mean_difference),
        max_abs_covariance_difference: abs_max(&|c| &c.covariance_difference),
        within_three_standard_errors: max_z.map(|z| z <= 3.0),
        max_z,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, m: f64) -> MomentRow {
        MomentRow {
            t,
            mean: vec![m],
            covariance: vec![1.0],
            mean_std_error: None,
            covariance_std_error: None,
        }
    }

    #[test]
    fn coarse_grid_must_be_contained() {
        let fine = vec![row(0.0, 0.0), row(0.5, 0.0), row(1.0, 0.0)];
        let coarse = vec![row(1.0, 0.0)];
        assert_eq!(match_times(&fine, &coarse).unwrap().len(), 1);
        assert_eq!(match_times(&coarse, &fine).unwrap().len(), 1);
        assert!(match_times(&fine, &[row(0.75, 0.0)]).unwrap_err().contains("mismatch"));
    }

    #[test]
    fn z_uses_combined_error() {
        let z = max_z(&[1.0], &[0.0], Some(&[0.3]), Some(&[0.4])).unwrap();
        assert!((z - 2.0).abs() < 1e-15);
        assert_eq!(max_z(&[1.0], &[0.0], None, None), None);
    }

    #[test]
    fn l2_difference_of_identical_states_is_zero() {
        let s = MixtureState::new(1, vec![0.5, 0.4], vec![1.0, 0.7], vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(l2_difference(&s, &s).unwrap() < 1e-7);
    }
}
