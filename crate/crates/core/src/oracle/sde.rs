//! Monte Carlo ensembles of the underlying SDE `dX = F(X, t) dt + sqrt(2 nu) dW`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembler::sample_mixture;
use crate::error::{check_dim, Error, Result};
use crate::gausspoly::monomial_value;
use crate::mixture::MixtureState;
use crate::operator::{DriftField, DriftModel};

/// Particles per random substream. Fixed so that results do not depend on
/// the number of worker threads.
const BLOCK: usize = 1024;

/// Coordinates beyond this magnitude mark a particle as escaped.
const ESCAPE_RADIUS: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeScheme {
    EulerMaruyama,
    /// Trapezoidal corrector on the drift, Euler increment for the noise.
    PredictorCorrector,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialSampler {
    Mixture(MixtureState),
    /// Independent normal coordinates.
    Gaussian { mean: Vec<f64>, std_dev: Vec<f64> },
    Point(Vec<f64>),
}

impl InitialSampler {
    fn dim(&self) -> usize {
        match self {
            InitialSampler::Mixture(m) => m.dim(),
            InitialSampler::Gaussian { mean, .. } => mean.len(),
            InitialSampler::Point(p) => p.len(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            InitialSampler::Mixture(m) => sample_mixture(m, rng, out),
            InitialSampler::Gaussian { mean, std_dev } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std_dev) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
            InitialSampler::Point(p) => out.copy_from_slice(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub particles: usize,
    pub dt: f64,
    pub scheme: SdeScheme,
    pub seed: u64,
    pub initial: InitialSampler,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one particle".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("SDE step must be positive, got {}", self.dt)));
        }
        if let InitialSampler::Gaussian { mean, std_dev } = &self.initial {
            check_dim(mean.len(), std_dev.len())?;
            if std_dev.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::InvalidArgument("standard deviations must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Particle positions at one time, row-major `P x d`. Escaped particles are
/// stored as NaN rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub dim: usize,
    pub positions: Vec<f64>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows with every coordinate finite.
    pub fn live(&self) -> impl Iterator<Item = &[f64]> {
        self.positions
            .chunks_exact(self.dim)
            .filter(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub snapshots: Vec<Snapshot>,
    pub escaped: usize,
    pub seconds: f64,
}

/// Drift with coefficients frozen at one time, evaluated per particle.
struct FrozenDrift<'a> {
    model: &'a DriftModel,
    t: f64,
    terms: Vec<Vec<(&'a [u8], f64)>>,
}

impl<'a> FrozenDrift<'a> {
    fn new(model: &'a DriftModel, t: f64) -> Self {
        let terms = match model.field() {
            DriftField::Polynomial(components) => components
                .iter()
                .map(|c| c.iter().map(|term| (&term.exponent[..], term.coefficient.value(t))).collect())
                .collect(),
            DriftField::Pointwise(_) => Vec::new(),
        };
        Self { model, t, terms }
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        if self.terms.is_empty() {
            self.model.eval(x, self.t, out);
            return;
        }
        for (o, comp) in out.iter_mut().zip(&self.terms) {
            *o = comp.iter().map(|(e, c)| c * monomial_value(e, x)).sum();
        }
    }
}

/// Simulates the ensemble from `t0`, storing positions at each of `times`
/// (sorted, all `>= t0`). Each interval is split into equal steps no longer
/// than `spec.dt`.
pub fn simulate_sde(drift: &DriftModel, spec: &EnsembleSpec, t0: f64, times: &[f64]) -> Result<Ensemble> {
    spec.validate()?;
    check_dim(drift.dim(), spec.initial.dim())?;
    if times.is_empty() {
        return Err(Error::InvalidArgument("need at least one snapshot time".into()));
    }
    if times[0] < t0 || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("snapshot times must be sorted and not before t0".into()));
    }
    let started = std::time::Instant::now();
    let d = drift.dim();
    let sigma = drift.noise_scales();
    let blocks = spec.particles.div_ceil(BLOCK);

    let results: Vec<(Vec<Vec<f64>>, usize)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK.min(spec.particles - b * BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(b as u64);
            let mut x = vec![0.0; count * d];
            for p in x.chunks_exact_mut(d) {
                spec.initial.draw(&mut rng, p);
            }
            let mut escaped = vec![false; count];
            let mut shots = Vec::with_capacity(times.len());
            let mut t = t0;
            let mut f0 = vec![0.0; d];
            let mut f1 = vec![0.0; d];
            let mut pred = vec![0.0; d];
            let mut dw = vec![0.0; d];
            for &target in times {
                let span = target - t;
                let steps = if span > 0.0 { (span / spec.dt).ceil() as usize } else { 0 };
                let h = if steps > 0 { span / steps as f64 } else { 0.0 };
                let sqrt_h = h.sqrt();
                for s in 0..steps {
                    let ts = t + s as f64 * h;
                    let now = FrozenDrift::new(drift, ts);
                    let next = match spec.scheme {
                        SdeScheme::PredictorCorrector => Some(FrozenDrift::new(drift, ts + h)),
                        SdeScheme::EulerMaruyama => None,
                    };
                    for (i, p) in x.chunks_exact_mut(d).enumerate() {
                        for (w, s) in dw.iter_mut().zip(&sigma) {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            *w = if *s == 0.0 { 0.0 } else { s * sqrt_h * z };
                        }
                        if escaped[i] {
                            continue;
                        }
                        now.eval(p, &mut f0);
                        match &next {
                            None => {
                                for l in 0..d {
                                    p[l] += f0[l] * h + dw[l];
                                }
                            }
                            Some(next) => {
                                for l in 0..d {
                                    pred[l] = p[l] + f0[l] * h + dw[l];
                                }
                                next.eval(&pred, &mut f1);
                                for l in 0..d {
                                    p[l] += 0.5 * (f0[l] + f1[l]) * h + dw[l];
                                }
                            }
                        }
                        if p.iter().any(|v| !v.is_finite() || v.abs() > ESCAPE_RADIUS) {
                            escaped[i] = true;
                            p.fill(f64::NAN);
                        }
                    }
                }
                t = target;
                shots.push(x.clone());
            }
            (shots, escaped.iter().filter(|e| **e).count())
        })
        .collect();

    let mut snapshots: Vec<Snapshot> = times
        .iter()
        .map(|&t| Snapshot {
            t,
            dim: d,
            positions: Vec::with_capacity(spec.particles * d),
        })
        .collect();
    let mut escaped = 0;
    for (shots, esc) in results {
        escaped += esc;
        for (snap, block) in snapshots.iter_mut().zip(shots) {
            snap.positions.extend_from_slice(&block);
        }
    }
    Ok(Ensemble {
        snapshots,
        escaped,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Sample moments with standard errors. Matrices are row-major `d x d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    pub count: usize,
    pub mean: Vec<f64>,
    /// `E[X_i X_j]`
    pub second_moment: Vec<f64>,
    /// `E[X_i X_j] - mean_i mean_j`
    pub covariance: Vec<f64>,
    pub mean_std_error: Vec<f64>,
    pub covariance_std_error: Vec<f64>,
}

pub fn empirical_moments(snapshot: &Snapshot) -> Result<EmpiricalMoments> {
    let d = snapshot.dim;
    let n = snapshot.live().count();
    if n == 0 {
        return Err(Error::InvalidArgument("no live particles in snapshot".into()));
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for p in snapshot.live() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);

    // centered products give the covariance and the spread of its estimator
    let mut cov = vec![0.0; d * d];
    let mut cov_sq = vec![0.0; d * d];
    for p in snapshot.live() {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in 0..d {
                let prod = di * (p[j] - mean[j]);
                cov[i * d + j] += prod;
                cov_sq[i * d + j] += prod * prod;
            }
        }
    }
    let mut covariance_std_error = vec![0.0; d * d];
    for k in 0..d * d {
        cov[k] /= nf;
        let var = (cov_sq[k] / nf - cov[k] * cov[k]).max(0.0);
        covariance_std_error[k] = (var / nf).sqrt();
    }
    let mean_std_error = (0..d).map(|i| (cov[i * d + i] / nf).sqrt()).collect();
    let second_moment = (0..d * d)
        .map(|k| cov[k] + mean[k / d] * mean[k % d])
        .collect();
    Ok(EmpiricalMoments {
        count: n,
        mean,
        second_moment,
        covariance: cov,
        mean_std_error,
        covariance_std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_spec(particles: usize, seed: u64) -> EnsembleSpec {
        EnsembleSpec {
            particles,
            dt: 0.01,
            scheme: SdeScheme::EulerMaruyama,
            seed,
            initial: InitialSampler::Point(vec![0.0]),
        }
    }

    #[test]
    fn noise_free_flow_is_deterministic() {
        let drift = DriftModel::bistable(0.0).unwrap();
        let mut spec = ou_spec(50, 3);
        spec.initial = InitialSampler::Point(vec![0.3]);
        let ens = simulate_sde(&drift, &spec, 0.0, &[1.0]).unwrap();
        let first = ens.snapshots[0].particle(0)[0];
        assert!(ens.snapshots[0].positions.iter().all(|v| *v == first));
        assert!(first > 0.3 && first < 1.0);
    }

    #[test]
    fn same_seed_same_ensemble() {
        let drift = DriftModel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let a = simulate_sde(&drift, &ou_spec(3000, 11), 0.0, &[0.5, 1.0]).unwrap();
        let b = simulate_sde(&drift, &ou_spec(3000, 11), 0.0, &[0.5, 1.0]).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        let c = simulate_sde(&drift, &ou_spec(3000, 12), 0.0, &[0.5, 1.0]).unwrap();
        assert_ne!(a.snapshots, c.snapshots);
    }

    #[test]
    fn single_particle_moments() {
        let snap = Snapshot {
            t: 0.0,
            dim: 2,
            positions: vec![1.5, -2.0],
        };
        let m = empirical_moments(&snap).unwrap();
        assert_eq!(m.mean, vec![1.5, -2.0]);
        assert!(m.covariance.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn escaped_particles_are_excluded() {
        let snap = Snapshot {
            t: 0.0,
            dim: 1,
            positions: vec![1.0, f64::NAN, 3.0],
        };
        let m = empirical_moments(&snap).unwrap();
        assert_eq!(m.count, 2);
        assert_eq!(m.mean, vec![2.0]);
    }

    #[test]
    fn predictor_corrector_matches_euler_for_linear_drift_mean() {
        let drift = DriftModel::ornstein_uhlenbeck(1.0, 0.0).unwrap();
        let mut spec = ou_spec(1, 0);
        spec.initial = InitialSampler::Point(vec![1.0]);
        spec.scheme = SdeScheme::PredictorCorrector;
        let pc = simulate_sde(&drift, &spec, 0.0, &[1.0]).unwrap().snapshots[0].positions[0];
        spec.scheme = SdeScheme::EulerMaruyama;
        let em = simulate_sde(&drift, &spec, 0.0, &[1.0]).unwrap().snapshots[0].positions[0];
        let exact = (-1.0f64).exp();
        assert!((pc - exact).abs() < (em - exact).abs() / 10.0);
    }
}
