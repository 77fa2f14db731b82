//! Run configuration: JSON schema, validation and translation into solver inputs.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rons_core::assembler::{CollocationGrid, HilbertChoice, HilbertMode};
use rons_core::gausspoly::{GaussPoly, GaussPolySum};
use rons_core::integrator::{EquilibriumStop, IntegrateOptions, Method, TimeGrid};
use rons_core::oracle::{EquilibriumKind, OuExact, SdeScheme};
use rons_core::projection::{project_initial_condition, ProjectionOptions, TargetDensity};
use rons_core::{Coefficient, DriftModel, DriftTerm, MixtureState};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub hilbert: HilbertSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub time: TimeSpec,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumStop>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub slices: Vec<SliceSpec>,
    /// Box for the `L2` error against an analytic equilibrium.
    #[serde(default)]
    pub error_box: Option<BoxSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_alpha() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Ou { gamma: f64, sigma: f64 },
    Bistable { sigma: f64 },
    Duffing { a1: f64, a2: f64, a3: f64, sigma: f64 },
    HarmonicTrap { dim: usize, gamma: f64, nu: f64, forcing: CoefficientSpec },
    CustomPolynomial { dim: usize, components: Vec<Vec<TermSpec>>, diffusion: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant { value: f64 },
    Affine { offset: f64, slope: f64 },
    /// `amplitude * (sin(frequency * t) + offset)`
    Sinusoidal { amplitude: f64, frequency: f64, offset: f64 },
}

impl CoefficientSpec {
    pub fn build(&self) -> Coefficient {
        match *self {
            CoefficientSpec::Constant { value } => Coefficient::Constant(value),
            CoefficientSpec::Affine { offset, slope } => Coefficient::Affine { offset, slope },
            CoefficientSpec::Sinusoidal {
                amplitude,
                frequency,
                offset,
            } => Coefficient::Sinusoidal {
                amplitude,
                frequency,
                offset,
            },
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            CoefficientSpec::Constant { value } => vec![value],
            CoefficientSpec::Affine { offset, slope } => vec![offset, slope],
            CoefficientSpec::Sinusoidal {
                amplitude,
                frequency,
                offset,
            } => vec![amplitude, frequency, offset],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub exponent: Vec<u8>,
    pub coefficient: CoefficientSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub amps: Vec<f64>,
    pub widths: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub count: usize,
    pub amp: f64,
    pub width: f64,
    pub center: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Mixture {
        #[serde(flatten)]
        mixture: MixtureSpec,
        #[serde(default)]
        normalize: bool,
    },
    /// Groups of coincident terms. Within a group of `n`, term `k` is offset by
    /// `spread * (k - (n-1)/2) * direction`; the default direction is the unit
    /// diagonal.
    Groups {
        groups: Vec<GroupSpec>,
        #[serde(default)]
        spread: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
        #[serde(default)]
        normalize: bool,
    },
    /// Exact Ornstein-Uhlenbeck solution at `time.t0`.
    OuExact,
    /// Least-squares fit of `target` starting from `guess`, in the run's
    /// Hilbert space.
    Projection { target: TargetSpec, guess: MixtureSpec },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Isotropic normal density.
    Gaussian { mean: Vec<f64>, variance: f64 },
    Mixture {
        #[serde(flatten)]
        mixture: MixtureSpec,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HilbertSpec {
    #[serde(default = "default_mode")]
    pub mode: HilbertMode,
    #[serde(default)]
    pub collocation: Option<CollocationSpec>,
}

fn default_mode() -> HilbertMode {
    HilbertMode::L2Symbolic
}

impl Default for HilbertSpec {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            collocation: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum CollocationSpec {
    EquidistantBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
    },
    RandomUniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
        count: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    SampledFromMixture {
        count: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t0: f64,
    pub t_end: f64,
    #[serde(default = "default_h0")]
    pub h0: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub output_stride: usize,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    /// Adds this many evenly spaced checkpoints.
    #[serde(default)]
    pub uniform_checkpoints: usize,
}

fn default_h0() -> f64 {
    1e-3
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-10
}
fn default_max_steps() -> usize {
    1_000_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub particles: usize,
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: SdeScheme,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Snapshot times; each is also made a solver checkpoint.
    pub times: Vec<f64>,
}

fn default_scheme() -> SdeScheme {
    SdeScheme::EulerMaruyama
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    /// One axis for a 1D marginal, two for a 2D marginal.
    pub axes: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_panels")]
    pub panels: usize,
}

fn default_panels() -> usize {
    32
}

/// Everything the solver needs, resolved from a validated config.
pub struct Resolved {
    pub drift: DriftModel,
    pub initial: MixtureState,
    pub space: HilbertChoice,
    pub grid: TimeGrid,
    pub options: IntegrateOptions,
    pub equilibrium: Option<EquilibriumKind>,
    pub projection_objective: Option<(f64, f64)>,
}

pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "cannot read config: {m}"),
            ConfigError::Parse(m) => write!(f, "config does not match the schema: {m}"),
            ConfigError::Invalid(errors) => {
                writeln!(f, "config has {} error(s):", errors.len())?;
                for e in errors {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Ou { .. } | ProblemSpec::Bistable { .. } => 1,
            ProblemSpec::Duffing { .. } => 2,
            ProblemSpec::HarmonicTrap { dim, .. } | ProblemSpec::CustomPolynomial { dim, .. } => *dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Ou { .. } => "ou",
            ProblemSpec::Bistable { .. } => "bistable",
            ProblemSpec::Duffing { .. } => "duffing",
            ProblemSpec::HarmonicTrap { .. } => "harmonic_trap",
            ProblemSpec::CustomPolynomial { .. } => "custom_polynomial",
        }
    }

    fn check(&self, errors: &mut Vec<String>) {
        let finite = |errors: &mut Vec<String>, name: &str, v: f64| {
            if !v.is_finite() {
                errors.push(format!("problem.{name} must be finite, got {v}"));
            }
        };
        match self {
            ProblemSpec::Ou { gamma, sigma } => {
                finite(errors, "gamma", *gamma);
                finite(errors, "sigma", *sigma);
                if !(*gamma > 0.0) {
                    errors.push(format!("problem.gamma must be positive, got {gamma}"));
                }
                if !(*sigma > 0.0) {
                    errors.push(format!("problem.sigma must be positive, got {sigma}"));
                }
            }
            ProblemSpec::Bistable { sigma } => {
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    errors.push(format!("problem.sigma must be non-negative, got {sigma}"));
                }
            }
            ProblemSpec::Duffing { a1, a2, a3, sigma } => {
                finite(errors, "a1", *a1);
                finite(errors, "a2", *a2);
                finite(errors, "a3", *a3);
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    errors.push(format!("problem.sigma must be non-negative, got {sigma}"));
                }
            }
            ProblemSpec::HarmonicTrap { dim, gamma, nu, forcing } => {
                if *dim == 0 {
                    errors.push("problem.dim must be at least 1".into());
                }
                finite(errors, "gamma", *gamma);
                if !(*nu >= 0.0 && nu.is_finite()) {
                    errors.push(format!("problem.nu must be non-negative, got {nu}"));
                }
                if forcing.values().iter().any(|v| !v.is_finite()) {
                    errors.push("problem.forcing parameters must be finite".into());
                }
            }
            ProblemSpec::CustomPolynomial {
                dim,
                components,
                diffusion,
            } => {
                if *dim == 0 {
                    errors.push("problem.dim must be at least 1".into());
                }
                if components.len() != *dim {
                    errors.push(format!("problem.components has {} entries, expected dim = {dim}", components.len()));
                }
                if diffusion.len() != *dim {
                    errors.push(format!("problem.diffusion has {} entries, expected dim = {dim}", diffusion.len()));
                }
                for (i, nu) in diffusion.iter().enumerate() {
                    if !(*nu >= 0.0 && nu.is_finite()) {
                        errors.push(format!("problem.diffusion[{i}] must be non-negative, got {nu}"));
                    }
                }
                for (i, comp) in components.iter().enumerate() {
                    for (j, term) in comp.iter().enumerate() {
                        if term.exponent.len() != *dim {
                            errors.push(format!("problem.components[{i}][{j}].exponent has length {}, expected {dim}", term.exponent.len()));
                        }
                        if term.coefficient.values().iter().any(|v| !v.is_finite()) {
                            errors.push(format!("problem.components[{i}][{j}].coefficient must be finite"));
                        }
                    }
                }
            }
        }
    }

    fn build(&self) -> rons_core::Result<DriftModel> {
        match self {
            ProblemSpec::Ou { gamma, sigma } => DriftModel::ornstein_uhlenbeck(*gamma, *sigma),
            ProblemSpec::Bistable { sigma } => DriftModel::bistable(*sigma),
            ProblemSpec::Duffing { a1, a2, a3, sigma } => DriftModel::duffing(*a1, *a2, *a3, *sigma),
            ProblemSpec::HarmonicTrap { dim, gamma, nu, forcing } => DriftModel::harmonic_trap(*dim, *gamma, *nu, forcing.build()),
            ProblemSpec::CustomPolynomial {
                dim,
                components,
                diffusion,
            } => DriftModel::polynomial(
                *dim,
                components
                    .iter()
                    .map(|c| c.iter().map(|t| DriftTerm::new(&t.exponent, t.coefficient.build())).collect())
                    .collect(),
                diffusion.clone(),
            ),
        }
    }

    fn equilibrium(&self) -> Option<EquilibriumKind> {
        match *self {
            ProblemSpec::Ou { gamma, sigma } => Some(EquilibriumKind::OrnsteinUhlenbeck { gamma, sigma }),
            ProblemSpec::Bistable { sigma } if sigma > 0.0 => Some(EquilibriumKind::Bistable { sigma }),
            ProblemSpec::Duffing { a1, a2, a3, sigma } if sigma > 0.0 => Some(EquilibriumKind::Duffing { a1, a2, a3, sigma }),
            _ => None,
        }
    }
}

fn check_mixture(prefix: &str, m: &MixtureSpec, dim: usize, errors: &mut Vec<String>) {
    let r = m.amps.len();
    if r == 0 {
        errors.push(format!("{prefix}.amps must not be empty"));
    }
    if m.widths.len() != r {
        errors.push(format!("{prefix}.widths has {} entries, expected {r}", m.widths.len()));
    }
    if m.centers.len() != r {
        errors.push(format!("{prefix}.centers has {} entries, expected {r}", m.centers.len()));
    }
    for (k, c) in m.centers.iter().enumerate() {
        if c.len() != dim {
            errors.push(format!("{prefix}.centers[{k}] has length {}, expected {dim}", c.len()));
        }
        if c.iter().any(|v| !v.is_finite()) {
            errors.push(format!("{prefix}.centers[{k}] must be finite"));
        }
    }
    for (k, l) in m.widths.iter().enumerate() {
        if !(*l > 0.0 && l.is_finite()) {
            errors.push(format!("{prefix}.widths[{k}] must be positive, got {l}"));
        }
    }
    for (k, a) in m.amps.iter().enumerate() {
        if !a.is_finite() {
            errors.push(format!("{prefix}.amps[{k}] must be finite"));
        }
    }
}

fn mixture_state(m: &MixtureSpec, dim: usize) -> rons_core::Result<MixtureState> {
    MixtureState::new(dim, m.amps.clone(), m.widths.clone(), m.centers.clone())
}

fn check_box(prefix: &str, lower: &[f64], upper: &[f64], dim: usize, errors: &mut Vec<String>) {
    if lower.len() != dim || upper.len() != dim {
        errors.push(format!("{prefix} bounds must have length {dim}"));
    } else if lower.iter().zip(upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
        errors.push(format!("{prefix} needs finite bounds with lower < upper"));
    }
}

impl RunConfig {
    /// Every schema-level and semantic problem, in a stable order.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let dim = self.problem.dim();
        self.problem.check(&mut errors);

        match &self.initial {
            InitialSpec::Mixture { mixture, .. } => check_mixture("initial", mixture, dim, &mut errors),
            InitialSpec::Groups {
                groups,
                spread,
                direction,
                ..
            } => {
                if let Some(v) = direction {
                    if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                        errors.push(format!("initial.direction needs {dim} finite entries"));
                    }
                }
                if groups.is_empty() {
                    errors.push("initial.groups must not be empty".into());
                }
                if !spread.is_finite() {
                    errors.push("initial.spread must be finite".into());
                }
                for (i, g) in groups.iter().enumerate() {
                    if g.count == 0 {
                        errors.push(format!("initial.groups[{i}].count must be at least 1"));
                    }
                    if !(g.width > 0.0 && g.width.is_finite()) {
                        errors.push(format!("initial.groups[{i}].width must be positive, got {}", g.width));
                    }
                    if !g.amp.is_finite() {
                        errors.push(format!("initial.groups[{i}].amp must be finite"));
                    }
                    if g.center.len() != dim {
                        errors.push(format!("initial.groups[{i}].center has length {}, expected {dim}", g.center.len()));
                    }
                }
            }
            InitialSpec::OuExact => {
                if !matches!(self.problem, ProblemSpec::Ou { .. }) {
                    errors.push("initial.source = ou_exact requires problem.kind = ou".into());
                }
                if !(self.time.t0 > 0.0) {
                    errors.push(format!("initial.source = ou_exact requires time.t0 > 0, got {}", self.time.t0));
                }
            }
            InitialSpec::Projection { target, guess } => {
                check_mixture("initial.guess", guess, dim, &mut errors);
                match target {
                    TargetSpec::Gaussian { mean, variance } => {
                        if mean.len() != dim {
                            errors.push(format!("initial.target.mean has length {}, expected {dim}", mean.len()));
                        }
                        if !(*variance > 0.0 && variance.is_finite()) {
                            errors.push(format!("initial.target.variance must be positive, got {variance}"));
                        }
                    }
                    TargetSpec::Mixture { mixture } => check_mixture("initial.target", mixture, dim, &mut errors),
                }
            }
        }

        match (self.hilbert.mode, &self.hilbert.collocation) {
            (HilbertMode::L2Symbolic, Some(_)) => errors.push("hilbert.collocation must be absent in l2_symbolic mode".into()),
            (HilbertMode::L2Collocation | HilbertMode::WeightedCollocation, None) => {
                errors.push("hilbert.collocation is required in collocation modes".into())
            }
            (_, Some(spec)) => match spec {
                CollocationSpec::EquidistantBox { lower, upper, counts } => {
                    check_box("hilbert.collocation", lower, upper, dim, &mut errors);
                    if counts.len() != dim || counts.iter().any(|c| *c < 2) {
                        errors.push(format!("hilbert.collocation.counts needs {dim} entries, each at least 2"));
                    }
                }
                CollocationSpec::RandomUniformBox { lower, upper, count, .. } => {
                    check_box("hilbert.collocation", lower, upper, dim, &mut errors);
                    if *count == 0 {
                        errors.push("hilbert.collocation.count must be positive".into());
                    }
                }
                CollocationSpec::SampledFromMixture { count, .. } => {
                    if *count == 0 {
                        errors.push("hilbert.collocation.count must be positive".into());
                    }
                }
            },
            _ => {}
        }

        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            errors.push(format!("alpha must be non-negative, got {}", self.alpha));
        }

        let t = &self.time;
        if !(t.t0.is_finite() && t.t_end.is_finite() && t.t_end > t.t0) {
            errors.push(format!("time.t_end must exceed time.t0, got [{}, {}]", t.t0, t.t_end));
        }
        if !(t.h0 > 0.0 && t.h0.is_finite()) {
            errors.push(format!("time.h0 must be positive, got {}", t.h0));
        }
        if !(t.rtol > 0.0) {
            errors.push(format!("time.rtol must be positive, got {}", t.rtol));
        }
        if !(t.atol > 0.0) {
            errors.push(format!("time.atol must be positive, got {}", t.atol));
        }
        if t.max_steps == 0 {
            errors.push("time.max_steps must be positive".into());
        }
        for (i, c) in t.checkpoints.iter().enumerate() {
            if !(*c > t.t0 && *c <= t.t_end) {
                errors.push(format!("time.checkpoints[{i}] = {c} lies outside (t0, t_end]"));
            }
        }

        if let Some(eq) = &self.equilibrium {
            if eq.window == 0 {
                errors.push("equilibrium.window must be at least 1".into());
            }
            if !(eq.threshold > 0.0) {
                errors.push(format!("equilibrium.threshold must be positive, got {}", eq.threshold));
            }
        }

        if let Some(ens) = &self.ensemble {
            if ens.particles == 0 {
                errors.push("ensemble.particles must be positive".into());
            }
            if !(ens.dt > 0.0 && ens.dt.is_finite()) {
                errors.push(format!("ensemble.dt must be positive, got {}", ens.dt));
            }
            if ens.times.is_empty() {
                errors.push("ensemble.times must not be empty".into());
            }
            for (i, s) in ens.times.iter().enumerate() {
                if !(*s > t.t0 && *s <= t.t_end) {
                    errors.push(format!("ensemble.times[{i}] = {s} lies outside (t0, t_end]"));
                }
            }
        }

        for (i, s) in self.slices.iter().enumerate() {
            if s.axes.is_empty() || s.axes.len() > 2 {
                errors.push(format!("slices[{i}].axes must name one or two axes"));
            }
            if s.axes.iter().any(|a| *a >= dim) {
                errors.push(format!("slices[{i}].axes must be below dim = {dim}"));
            }
            if s.axes.len() == 2 && s.axes[0] == s.axes[1] {
                errors.push(format!("slices[{i}].axes must be distinct"));
            }
            check_box(&format!("slices[{i}]"), &s.lower, &s.upper, s.axes.len(), &mut errors);
            if s.points < 2 {
                errors.push(format!("slices[{i}].points must be at least 2"));
            }
        }

        if let Some(b) = &self.error_box {
            check_box("error_box", &b.lower, &b.upper, dim, &mut errors);
            if dim > 2 {
                errors.push("error_box is only supported for dim <= 2".into());
            }
            if b.panels == 0 {
                errors.push("error_box.panels must be positive".into());
            }
        }
        errors
    }

    pub fn ensemble_seed(&self) -> u64 {
        self.ensemble.as_ref().and_then(|e| e.seed).unwrap_or(self.seed)
    }

    fn time_grid(&self) -> TimeGrid {
        let t = &self.time;
        let mut grid = TimeGrid::new(t.t0, t.t_end)
            .initial_step(t.h0)
            .tolerances(t.rtol, t.atol)
            .stride(t.output_stride);
        grid.max_steps = t.max_steps;
        let mut checkpoints = t.checkpoints.clone();
        if t.uniform_checkpoints > 0 {
            let n = t.uniform_checkpoints;
            checkpoints.extend((1..=n).map(|i| t.t0 + (t.t_end - t.t0) * i as f64 / n as f64));
        }
        if let Some(ens) = &self.ensemble {
            checkpoints.extend(ens.times.iter().copied());
        }
        checkpoints.sort_by(f64::total_cmp);
        checkpoints.dedup();
        grid.checkpoints(checkpoints)
    }

    fn build_space(&self, initial: Option<&MixtureState>) -> rons_core::Result<HilbertChoice> {
        let grid = match &self.hilbert.collocation {
            None => return HilbertChoice::new(self.hilbert.mode, None),
            Some(CollocationSpec::EquidistantBox { lower, upper, counts }) => CollocationGrid::equidistant(lower, upper, counts)?,
            Some(CollocationSpec::RandomUniformBox { lower, upper, count, seed }) => {
                CollocationGrid::random_uniform(lower, upper, *count, seed.unwrap_or(self.seed))?
            }
            Some(CollocationSpec::SampledFromMixture { count, seed }) => {
                let state = initial.ok_or_else(|| {
                    rons_core::Error::InvalidArgument("sampled_from_mixture collocation cannot be used for projection".into())
                })?;
                CollocationGrid::sampled_from_mixture(state, *count, seed.unwrap_or(self.seed))?
            }
        };
        HilbertChoice::new(self.hilbert.mode, Some(grid))
    }

    /// Builds the solver inputs. Errors here are configuration errors that
    /// only show up once values are combined (e.g. an unnormalized start).
    pub fn resolve(&self) -> Result<Resolved, Vec<String>> {
        let errors = self.validate();
        if !errors.is_empty() {
            return Err(errors);
        }
        let dim = self.problem.dim();
        fn wrap(field: &'static str) -> impl Fn(rons_core::Error) -> Vec<String> {
            move |e| vec![format!("{field}: {e}")]
        }
        let drift = self.problem.build().map_err(wrap("problem"))?;
        let mut projection_objective = None;
        let initial = match &self.initial {
            InitialSpec::Mixture { mixture, normalize } => {
                let s = mixture_state(mixture, dim).map_err(wrap("initial"))?;
                if *normalize {
                    s.normalized()
                } else {
                    s
                }
            }
            InitialSpec::Groups {
                groups,
                spread,
                direction,
                normalize,
            } => {
                let direction = direction.clone().unwrap_or_else(|| vec![1.0 / (dim as f64).sqrt(); dim]);
                let (mut amps, mut widths, mut centers) = (Vec::new(), Vec::new(), Vec::new());
                for g in groups {
                    for k in 0..g.count {
                        let o = spread * (k as f64 - (g.count as f64 - 1.0) / 2.0);
                        amps.push(g.amp);
                        widths.push(g.width);
                        centers.push(g.center.iter().zip(&direction).map(|(c, v)| c + o * v).collect());
                    }
                }
                let s = MixtureState::new(dim, amps, widths, centers).map_err(wrap("initial"))?;
                if *normalize {
                    s.normalized()
                } else {
                    s
                }
            }
            InitialSpec::OuExact => {
                let ProblemSpec::Ou { gamma, sigma } = self.problem else {
                    unreachable!("validated above")
                };
                OuExact { gamma, sigma }.state(self.time.t0)
            }
            InitialSpec::Projection { target, guess } => {
                let guess = mixture_state(guess, dim).map_err(wrap("initial.guess"))?;
                let target_sum = match target {
                    TargetSpec::Gaussian { mean, variance } => {
                        let width = 2.0 * variance;
                        let scale = (PI * width).powf(-(dim as f64) / 2.0);
                        GaussPolySum::single(GaussPoly::gaussian(mean.clone(), width, scale).map_err(wrap("initial.target"))?)
                    }
                    TargetSpec::Mixture { mixture } => mixture_state(mixture, dim).map_err(wrap("initial.target"))?.to_gauss_poly_sum(),
                };
                let space = self.build_space(None).map_err(wrap("hilbert"))?;
                let eval = |x: &[f64]| target_sum.evaluate(x).unwrap_or(0.0);
                let target_density = if space.mode() == HilbertMode::L2Symbolic {
                    TargetDensity::Closed(&target_sum)
                } else {
                    TargetDensity::Pointwise(&eval)
                };
                let fit = project_initial_condition(target_density, &guess, &space, &ProjectionOptions::default())
                    .map_err(wrap("initial"))?;
                projection_objective = Some((fit.initial_objective, fit.objective));
                fit.state
            }
        };
        let total = initial.total_probability();
        if (total - 1.0).abs() > 1e-10 {
            return Err(vec![format!(
                "initial: total probability is {total}, not 1; set \"normalize\": true or fix the amplitudes"
            )]);
        }
        let space = self.build_space(Some(&initial)).map_err(wrap("hilbert"))?;
        Ok(Resolved {
            drift,
            initial,
            space,
            grid: self.time_grid(),
            options: IntegrateOptions {
                method: self.method,
                equilibrium: self.equilibrium,
                ..IntegrateOptions::default()
            },
            equilibrium: self.problem.equilibrium(),
            projection_objective,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_config() -> RunConfig {
        serde_json::from_str(
            r#"{
                "problem": {"kind": "ou", "gamma": 1.0, "sigma": 1.0},
                "initial": {"source": "ou_exact"},
                "alpha": 0.0,
                "time": {"t0": 0.01, "t_end": 1.0}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_resolves() {
        let r = ou_config().resolve().ok().unwrap();
        assert_eq!(r.initial.terms(), 1);
        assert!((r.initial.total_probability() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn all_errors_are_reported() {
        let mut c = ou_config();
        c.alpha = -1.0;
        c.time.rtol = 0.0;
        c.problem = ProblemSpec::HarmonicTrap {
            dim: 2,
            gamma: 0.1,
            nu: -0.5,
            forcing: CoefficientSpec::Constant { value: 1.0 },
        };
        let errors = c.validate();
        assert!(errors.iter().any(|e| e.contains("problem.nu")));
        assert!(errors.iter().any(|e| e.contains("alpha")));
        assert!(errors.iter().any(|e| e.contains("time.rtol")));
        assert!(errors.iter().any(|e| e.contains("ou_exact")));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"problem": {"kind": "ou", "gamma": 1.0, "sigma": 1.0, "extra": 1},
                      "initial": {"source": "ou_exact"}, "time": {"t0": 0.01, "t_end": 1.0}}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn groups_are_spread_symmetrically() {
        let mut c = ou_config();
        c.initial = InitialSpec::Groups {
            groups: vec![GroupSpec {
                count: 3,
                amp: (1.0 / 3.0f64).sqrt() * PI.powf(-0.25),
                width: 1.0,
                center: vec![0.5],
            }],
            spread: 0.1,
            direction: None,
            normalize: true,
        };
        let r = c.resolve().ok().unwrap();
        let cs: Vec<f64> = (0..3).map(|k| r.initial.center(k)[0]).collect();
        assert!((cs[0] - 0.4).abs() < 1e-15 && (cs[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_start_is_a_config_error() {
        let mut c = ou_config();
        c.initial = InitialSpec::Mixture {
            mixture: MixtureSpec {
                amps: vec![1.0],
                widths: vec![1.0],
                centers: vec![vec![0.0]],
            },
            normalize: false,
        };
        let errors = c.resolve().err().unwrap();
        assert!(errors[0].contains("total probability"));
    }
}
