//! Assembly and solution of the constrained parameter-velocity system
//!
//! `[M + alpha I] thetadot = f - lambda grad I`
//!
//! with `M_ij = <dp/dtheta_i, dp/dtheta_j>_H`, `f_i = <dp/dtheta_i, L p>_H`
//! and `lambda` chosen so that `<grad I, thetadot> = 0`. The inner product is
//! either exact in `L2(R^d)` (closed form) or a (weighted) sum over
//! collocation points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, FullPivLU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gausspoly::{raw_moments, Exponent, Polynomial};
use crate::mixture::MixtureState;
use crate::operator::DriftModel;
use crate::oracle::quadrature;

/// Density floor below which a weighted collocation point is clamped.
pub const WEIGHT_FLOOR: f64 = 1e-14;

/// Relative size below which an off-diagonal entry is dropped before factorizing.
const NEGLIGIBLE: f64 = 1e-100;

/// Points per parallel chunk in collocation assembly. Chunks are reduced in
/// index order, so results do not depend on the thread count.
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HilbertMode {
    /// Exact `L2(R^d)` inner products.
    L2Symbolic,
    /// Unweighted least squares over collocation points.
    L2Collocation,
    /// Collocation with weights `1 / p(x_i)`, a discrete Fisher metric.
    WeightedCollocation,
}

#[derive(Clone, Debug)]
pub struct HilbertChoice {
    mode: HilbertMode,
    collocation: Option<CollocationGrid>,
}

impl HilbertChoice {
    pub fn new(mode: HilbertMode, collocation: Option<CollocationGrid>) -> Result<Self> {
        match (mode, &collocation) {
            (HilbertMode::L2Symbolic, Some(_)) => Err(Error::InvalidArgument(
                "symbolic L2 mode takes no collocation grid".into(),
            )),
            (HilbertMode::L2Collocation | HilbertMode::WeightedCollocation, None) => Err(
                Error::InvalidArgument("collocation modes need a collocation grid".into()),
            ),
            _ => Ok(Self { mode, collocation }),
        }
    }

    pub fn l2_symbolic() -> Self {
        Self {
            mode: HilbertMode::L2Symbolic,
            collocation: None,
        }
    }

    pub fn l2_collocation(grid: CollocationGrid) -> Self {
        Self {
            mode: HilbertMode::L2Collocation,
            collocation: Some(grid),
        }
    }

    pub fn weighted_collocation(grid: CollocationGrid) -> Self {
        Self {
            mode: HilbertMode::WeightedCollocation,
            collocation: Some(grid),
        }
    }

    pub fn mode(&self) -> HilbertMode {
        self.mode
    }

    pub fn collocation(&self) -> Option<&CollocationGrid> {
        self.collocation.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum GridScheme {
    EquidistantBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
        counts: Vec<usize>,
    },
    RandomUniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
        count: usize,
        seed: u64,
    },
    SampledFromMixture {
        count: usize,
        seed: u64,
    },
    Explicit,
}

/// Collocation points, stored row-major `N x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationGrid {
    dim: usize,
    points: Vec<f64>,
    scheme: GridScheme,
}

impl CollocationGrid {
    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not form a nonempty set of {dim}-dimensional points",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("collocation points must be finite".into()));
        }
        Ok(Self {
            dim,
            points,
            scheme: GridScheme::Explicit,
        })
    }

    /// Tensor grid including both box ends on every axis; the first axis
    /// varies fastest.
    pub fn equidistant(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Self> {
        check_box(lower, upper)?;
        check_dim(lower.len(), counts.len())?;
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidArgument("equidistant grids need at least 2 points per axis".into()));
        }
        let dim = lower.len();
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            for axis in 0..dim {
                let h = (upper[axis] - lower[axis]) / (counts[axis] - 1) as f64;
                points.push(lower[axis] + h * idx[axis] as f64);
            }
            for axis in 0..dim {
                idx[axis] += 1;
                if idx[axis] < counts[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(Self {
            dim,
            points,
            scheme: GridScheme::EquidistantBox {
                lower: lower.to_vec(),
                upper: upper.to_vec(),
                counts: counts.to_vec(),
            },
        })
    }

    pub fn random_uniform(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Result<Self> {
        check_box(lower, upper)?;
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one collocation point".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = lower.len();
        let mut points = Vec::with_capacity(count * dim);
        for _ in 0..count {
            for axis in 0..dim {
                points.push(rng.random_range(lower[axis]..upper[axis]));
            }
        }
        Ok(Self {
            dim,
            points,
            scheme: GridScheme::RandomUniformBox {
                lower: lower.to_vec(),
                upper: upper.to_vec(),
                count,
                seed,
            },
        })
    }

    /// Points drawn once from the normalized mixture density.
    pub fn sampled_from_mixture(state: &MixtureState, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one collocation point".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count * state.dim());
        let mut x = vec![0.0; state.dim()];
        for _ in 0..count {
            sample_mixture(state, &mut rng, &mut x);
            points.extend_from_slice(&x);
        }
        Ok(Self {
            dim: state.dim(),
            points,
            scheme: GridScheme::SampledFromMixture { count, seed },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn scheme(&self) -> &GridScheme {
        &self.scheme
    }

    /// Quadrature weight per point for box schemes: the grid cell volume for
    /// equidistant grids, `volume / N` for uniform random points.
    pub fn cell_volume(&self) -> Option<f64> {
        match &self.scheme {
            GridScheme::EquidistantBox { lower, upper, counts } => Some(
                lower
                    .iter()
                    .zip(upper)
                    .zip(counts)
                    .map(|((a, b), &n)| (b - a) / (n - 1) as f64)
                    .product(),
            ),
            GridScheme::RandomUniformBox { lower, upper, count, .. } => {
                Some(lower.iter().zip(upper).map(|(a, b)| b - a).product::<f64>() / *count as f64)
            }
            _ => None,
        }
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    check_dim(lower.len(), upper.len())?;
    if lower.is_empty() {
        return Err(Error::InvalidArgument("box must have at least one axis".into()));
    }
    if lower.iter().zip(upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidArgument("box bounds must be finite with lower < upper".into()));
    }
    Ok(())
}

/// Draws one point from the normalized mixture into `out`.
pub fn sample_mixture<R: Rng + ?Sized>(state: &MixtureState, rng: &mut R, out: &mut [f64]) {
    let masses = state.term_masses();
    let total: f64 = masses.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut k = masses.len() - 1;
    for (i, m) in masses.iter().enumerate() {
        if u < *m {
            k = i;
            break;
        }
        u -= m;
    }
    let sd = state.width(k) / std::f64::consts::SQRT_2;
    for (o, c) in out.iter_mut().zip(state.center(k)) {
        let z: f64 = StandardNormal.sample(rng);
        *o = c + sd * z;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    Symbolic,
    MonteCarlo,
    Collocation,
    WeightedCollocation,
}

/// Linear system for one evaluation of the parameter velocity.
#[derive(Clone, Debug)]
pub struct RonsSystem {
    pub metric: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub constraint_grad: DVector<f64>,
    pub alpha: f64,
    /// Filled in by [`RonsSystem::solve`].
    pub lambda: Option<f64>,
    pub mode: AssemblyMode,
    /// Weighted collocation points whose density fell below [`WEIGHT_FLOOR`].
    pub clamped_points: usize,
}

/// Solution of the constrained system.
#[derive(Clone, Debug)]
pub struct ConstrainedSolution {
    pub theta_dot: DVector<f64>,
    pub lambda: f64,
    /// Rough condition estimate of `M + alpha I` from its factorization.
    pub condition: f64,
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(FullPivLU<f64, Dyn, Dyn>),
}

impl Factor {
    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Cholesky(c) => Some(c.solve(b)),
            Factor::Lu(lu) => lu.solve(b),
        }
    }
}

impl RonsSystem {
    /// `M + alpha I` with entries below `NEGLIGIBLE * sqrt(K_ii K_jj)` set to
    /// zero. Cross terms of distant Gaussians otherwise drive the
    /// factorization into subnormal arithmetic.
    fn regularized(&self) -> DMatrix<f64> {
        let mut k = self.metric.clone();
        let n = k.nrows();
        for i in 0..n {
            k[(i, i)] += self.alpha;
        }
        let diag: Vec<f64> = (0..n).map(|i| k[(i, i)].abs().sqrt()).collect();
        for j in 0..n {
            for i in 0..n {
                if i != j && k[(i, j)].abs() < NEGLIGIBLE * diag[i] * diag[j] {
                    k[(i, j)] = 0.0;
                }
            }
        }
        k
    }

    fn factorize(&self) -> Result<(Factor, f64)> {
        let k = self.regularized();
        if let Some(chol) = Cholesky::new(k.clone()) {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
            if lo > 0.0 && lo.is_finite() {
                return Ok((Factor::Cholesky(chol), (hi / lo).powi(2)));
            }
        }
        let lu = FullPivLU::new(k);
        if !lu.is_invertible() {
            return Err(Error::RegularizationTooSmall { alpha: self.alpha });
        }
        Ok((Factor::Lu(lu), f64::INFINITY))
    }

    /// Solves for the parameter velocity and the Lagrange multiplier, sharing
    /// one factorization between the two right-hand sides.
    pub fn solve(&self) -> Result<ConstrainedSolution> {
        let (factor, condition) = self.factorize()?;
        let too_small = || Error::RegularizationTooSmall { alpha: self.alpha };
        let y_f = factor.solve(&self.rhs).ok_or_else(too_small)?;
        let y_g = factor.solve(&self.constraint_grad).ok_or_else(too_small)?;
        let denom = self.constraint_grad.dot(&y_g);
        if !(denom > 0.0) || !denom.is_finite() {
            if self.constraint_grad.iter().all(|v| *v == 0.0) {
                return Err(Error::Invariant("constraint gradient vanishes".into()));
            }
            return Err(too_small());
        }
        let lambda = self.constraint_grad.dot(&y_f) / denom;
        let theta_dot = y_f - &y_g * lambda;
        if theta_dot.iter().any(|v| !v.is_finite()) {
            return Err(too_small());
        }
        Ok(ConstrainedSolution {
            theta_dot,
            lambda,
            condition,
        })
    }
}

/// `lambda = <grad I, K^-1 f> / <grad I, K^-1 grad I>` with `K = M + alpha I`.
pub fn lagrange_multiplier(sys: &RonsSystem) -> Result<f64> {
    sys.solve().map(|s| s.lambda)
}

/// `thetadot = K^-1 (f - lambda grad I)`
pub fn solve_constrained(sys: &RonsSystem) -> Result<DVector<f64>> {
    sys.solve().map(|s| s.theta_dot)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must be finite and non-negative, got {alpha}")))
    }
}

/// Assembles in the mode selected by `space`.
pub fn assemble(drift: &DriftModel, state: &MixtureState, t: f64, alpha: f64, space: &HilbertChoice) -> Result<RonsSystem> {
    match (space.mode, &space.collocation) {
        (HilbertMode::L2Symbolic, _) => assemble_srons(drift, state, t, alpha),
        (HilbertMode::L2Collocation, Some(grid)) => assemble_crons(drift, state, t, alpha, grid, false),
        (HilbertMode::WeightedCollocation, Some(grid)) => assemble_crons(drift, state, t, alpha, grid, true),
        _ => Err(Error::InvalidArgument("collocation modes need a collocation grid".into())),
    }
}

/// Exact `L2(R^d)` assembly from the closed-form polynomial-Gaussian algebra.
pub fn assemble_srons(drift: &DriftModel, state: &MixtureState, t: f64, alpha: f64) -> Result<RonsSystem> {
    check_alpha(alpha)?;
    check_dim(drift.dim(), state.dim())?;
    let lp = drift.apply_fp_operator(state, t)?;
    let r = state.terms();
    let d = state.dim();
    let block = d + 2;
    let n = state.n_params();

    let bases: Vec<PartialBasis> = (0..r).map(|k| PartialBasis::new(&state.term_partial_polys(k), d)).collect();
    let sources: Vec<FlatPoly> = lp.terms().iter().map(|g| FlatPoly::new(g.poly(), d)).collect();
    let lp_degree = sources.iter().map(|q| q.max_axis_degree).max().unwrap_or(0);
    let basis_degree = bases.iter().map(|b| b.max_axis_degree).max().unwrap_or(0);
    let stride = basis_degree + basis_degree.max(lp_degree) + 1;

    // Row block k holds M[k, m] for m >= k and the f entries of term k.
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..r)
        .into_par_iter()
        .map(|k| {
            let mut metric = vec![0.0; block * block * (r - k)];
            let mut f = vec![0.0; block];
            let mut tables = vec![0.0; d * stride];
            let mut moments = Vec::new();
            let mut gram = Vec::new();
            let mut half = Vec::new();
            let basis = &bases[k];
            let wk = state.width(k) * state.width(k);
            for m in 0..r {
                let wm = state.width(m) * state.width(m);
                let prefactor = pair_tables(state.center(k), wk, state.center(m), wm, stride, &mut tables);
                if prefactor < NEGLIGIBLE {
                    continue;
                }
                // int x^e L(phi_m) over the pair Gaussian, for every basis monomial e
                moments.clear();
                moments.extend((0..basis.len).map(|e| sources[m].contract(basis.exponent(e), &tables, stride)));
                for i in 0..block {
                    f[i] += prefactor * dot(basis.row(i), &moments);
                }
                if m >= k {
                    let other = &bases[m];
                    let base = (m - k) * block * block;
                    // H = C_k G with G[e1][e2] = int x^{e1 + e2}, then M = H C_m^T
                    gram.clear();
                    for e1 in 0..basis.len {
                        gram.extend((0..other.len).map(|e2| pair_moment(basis.exponent(e1), other.exponent(e2), &tables, stride)));
                    }
                    half.clear();
                    for i in 0..block {
                        let lhs = basis.row(i);
                        half.extend((0..other.len).map(|e2| (0..basis.len).map(|e1| lhs[e1] * gram[e1 * other.len + e2]).sum::<f64>()));
                    }
                    for i in 0..block {
                        let h = &half[i * other.len..(i + 1) * other.len];
                        let first = if m == k { i } else { 0 };
                        for j in first..block {
                            metric[base + i * block + j] = prefactor * dot(h, other.row(j));
                        }
                    }
                }
            }
            (metric, f)
        })
        .collect();

    let mut metric = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (k, (blocks, f)) in rows.iter().enumerate() {
        for i in 0..block {
            rhs[k * block + i] = f[i];
        }
        for m in k..r {
            let base = (m - k) * block * block;
            for i in 0..block {
                for j in 0..block {
                    if m == k && j < i {
                        continue;
                    }
                    let v = blocks[base + i * block + j];
                    let (row, col) = (k * block + i, m * block + j);
                    metric[(row, col)] = v;
                    metric[(col, row)] = v;
                }
            }
        }
    }

    Ok(RonsSystem {
        metric,
        rhs,
        constraint_grad: DVector::from_vec(state.total_probability_gradient()),
        alpha,
        lambda: None,
        mode: AssemblyMode::Symbolic,
        clamped_points: 0,
    })
}

/// A polynomial flattened into contiguous exponent and coefficient arrays.
struct FlatPoly {
    exponents: Vec<u8>,
    coefficients: Vec<f64>,
    max_axis_degree: usize,
}

impl FlatPoly {
    fn new(p: &Polynomial, d: usize) -> Self {
        let mut exponents = Vec::with_capacity(p.len() * d);
        let mut coefficients = Vec::with_capacity(p.len());
        for (e, c) in p.iter() {
            exponents.extend_from_slice(e);
            coefficients.push(c);
        }
        Self {
            exponents,
            coefficients,
            max_axis_degree: p.max_axis_degree(),
        }
    }

    /// `sum_q c_q prod_a T_a[e_a + q_a]`
    #[inline]
    fn contract(&self, e: &[u8], tables: &[f64], stride: usize) -> f64 {
        let d = e.len();
        self.coefficients
            .iter()
            .zip(self.exponents.chunks_exact(d.max(1)))
            .map(|(c, q)| c * pair_moment(e, q, tables, stride))
            .sum()
    }
}

/// The partials of one mixture term over the union of their monomials:
/// a dense `(d + 2) x len` coefficient matrix.
struct PartialBasis {
    exponents: Vec<u8>,
    rows: Vec<f64>,
    len: usize,
    dim: usize,
    max_axis_degree: usize,
}

impl PartialBasis {
    fn new(partials: &[Polynomial], d: usize) -> Self {
        let mut union: Vec<Exponent> = partials.iter().flat_map(|p| p.iter().map(|(e, _)| e.clone())).collect();
        union.sort();
        union.dedup();
        let len = union.len();
        let mut rows = vec![0.0; partials.len() * len];
        for (i, p) in partials.iter().enumerate() {
            for (j, e) in union.iter().enumerate() {
                rows[i * len + j] = p.coefficient(e);
            }
        }
        Self {
            exponents: union.iter().flat_map(|e| e.iter().copied()).collect(),
            rows,
            len,
            dim: d,
            max_axis_degree: partials.iter().map(Polynomial::max_axis_degree).max().unwrap_or(0),
        }
    }

    #[inline]
    fn exponent(&self, e: usize) -> &[u8] {
        &self.exponents[e * self.dim..(e + 1) * self.dim]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.len..(i + 1) * self.len]
    }
}

/// Fills per-axis raw moment tables of the product Gaussian of two terms and
/// returns the cross prefactor `exp(-|c1 - c2|^2 / (a1 + a2))`.
fn pair_tables(c1: &[f64], a1: f64, c2: &[f64], a2: f64, stride: usize, tables: &mut [f64]) -> f64 {
    let sum = a1 + a2;
    let width = a1 * a2 / sum;
    let mut sep = 0.0;
    for (axis, (m1, m2)) in c1.iter().zip(c2).enumerate() {
        let mu = (a2 * m1 + a1 * m2) / sum;
        sep += (m1 - m2) * (m1 - m2);
        raw_moments(mu, width, &mut tables[axis * stride..(axis + 1) * stride]);
    }
    (-sep / sum).exp()
}

#[inline]
fn pair_moment(e1: &[u8], e2: &[u8], tables: &[f64], stride: usize) -> f64 {
    let mut acc = 1.0;
    for (axis, (&k1, &k2)) in e1.iter().zip(e2).enumerate() {
        acc *= tables[axis * stride + (k1 + k2) as usize];
    }
    acc
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Collocation assembly: `M = J^T W J`, `f = J^T W (L p)(x_i)` with
/// `J_ij = dp/dtheta_j (x_i)` and `W = diag(1 / p(x_i))` when `weighted`.
pub fn assemble_crons(
    drift: &DriftModel,
    state: &MixtureState,
    t: f64,
    alpha: f64,
    grid: &CollocationGrid,
    weighted: bool,
) -> Result<RonsSystem> {
    check_alpha(alpha)?;
    check_dim(drift.dim(), state.dim())?;
    check_dim(state.dim(), grid.dim())?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("collocation grid is empty".into()));
    }
    let snapshot = drift.at(t)?;
    let n = state.n_params();
    let d = state.dim();
    let npts = grid.len();

    let partials: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..npts.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut m = vec![0.0; n * n];
            let mut f = vec![0.0; n];
            let mut clamped = 0;
            let mut row = vec![0.0; n];
            let mut drift_val = vec![0.0; d];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(npts) {
                let x = grid.point(i);
                state.param_gradient_into(x, &mut row);
                snapshot.eval(x, &mut drift_val);
                let lp = drift.fp_operator_at(state, x, &drift_val, snapshot.divergence.evaluate(x));
                let w2 = if weighted {
                    let p = state.density(x);
                    if p < WEIGHT_FLOOR {
                        clamped += 1;
                        1.0 / WEIGHT_FLOOR
                    } else {
                        1.0 / p
                    }
                } else {
                    1.0
                };
                accumulate(&mut m, &mut f, &row, lp, w2);
            }
            (m, f, clamped)
        })
        .collect();

    let (metric, rhs, clamped_points) = reduce(n, partials);
    Ok(RonsSystem {
        metric,
        rhs,
        constraint_grad: DVector::from_vec(state.total_probability_gradient()),
        alpha,
        lambda: None,
        mode: if weighted {
            AssemblyMode::WeightedCollocation
        } else {
            AssemblyMode::Collocation
        },
        clamped_points,
    })
}

/// Closed-form `L2` integrands estimated by Monte Carlo:
/// `M_ij ~ (V/N) sum_k dp_i(x_k) dp_j(x_k)`, with the partials and `L p`
/// evaluated from their polynomial-Gaussian representations.
pub fn assemble_srons_monte_carlo(
    drift: &DriftModel,
    state: &MixtureState,
    t: f64,
    alpha: f64,
    samples: &CollocationGrid,
    volume: f64,
) -> Result<RonsSystem> {
    check_alpha(alpha)?;
    check_dim(drift.dim(), state.dim())?;
    check_dim(state.dim(), samples.dim())?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no Monte Carlo samples".into()));
    }
    let lp = drift.apply_fp_operator(state, t)?;
    let partials = state.partial_gauss_polys();
    let n = state.n_params();
    let npts = samples.len();

    let chunks: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..npts.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut m = vec![0.0; n * n];
            let mut f = vec![0.0; n];
            let mut row = vec![0.0; n];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(npts) {
                let x = samples.point(i);
                for (r, p) in row.iter_mut().zip(&partials) {
                    *r = p.poly().evaluate(x) * p.gaussian_factor(x);
                }
                let lpx: f64 = lp.terms().iter().map(|g| g.poly().evaluate(x) * g.gaussian_factor(x)).sum();
                accumulate(&mut m, &mut f, &row, lpx, 1.0);
            }
            (m, f, 0)
        })
        .collect();

    let (mut metric, mut rhs, _) = reduce(n, chunks);
    let scale = volume / npts as f64;
    metric *= scale;
    rhs *= scale;
    Ok(RonsSystem {
        metric,
        rhs,
        constraint_grad: DVector::from_vec(state.total_probability_gradient()),
        alpha,
        lambda: None,
        mode: AssemblyMode::MonteCarlo,
        clamped_points: 0,
    })
}

#[inline]
fn accumulate(m: &mut [f64], f: &mut [f64], row: &[f64], lp: f64, w2: f64) {
    let n = row.len();
    for i in 0..n {
        let ri = w2 * row[i];
        if ri == 0.0 {
            continue;
        }
        f[i] += ri * lp;
        let line = &mut m[i * n..(i + 1) * n];
        for j in i..n {
            line[j] += ri * row[j];
        }
    }
}

fn reduce(n: usize, chunks: Vec<(Vec<f64>, Vec<f64>, usize)>) -> (DMatrix<f64>, DVector<f64>, usize) {
    let mut m = vec![0.0; n * n];
    let mut f = vec![0.0; n];
    let mut clamped = 0;
    for (cm, cf, cc) in chunks {
        for (a, b) in m.iter_mut().zip(&cm) {
            *a += b;
        }
        for (a, b) in f.iter_mut().zip(&cf) {
            *a += b;
        }
        clamped += cc;
    }
    let mut metric = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            metric[(i, j)] = m[i * n + j];
            metric[(j, i)] = m[i * n + j];
        }
    }
    (metric, DVector::from_vec(f), clamped)
}

/// `L2` metric from the six closed-form kernel families (amplitude,
/// width and center partials, pairwise). Equal to the generic assembly.
pub fn metric_l2_kernels(state: &MixtureState) -> DMatrix<f64> {
    let d = state.dim();
    let df = d as f64;
    let block = d + 2;
    let n = state.n_params();
    let mut metric = DMatrix::zeros(n, n);
    let coeffs: Vec<(f64, f64, f64)> = (0..state.terms())
        .map(|k| {
            let (a, l) = (state.amp(k), state.width(k));
            (2.0 * a, 2.0 * a * a / (l * l * l), 2.0 * a * a / (l * l))
        })
        .collect();
    let mut p = vec![0.0; d];
    let mut q = vec![0.0; d];
    for k in 0..state.terms() {
        for m in k..state.terms() {
            let (ak, am) = (state.width(k).powi(2), state.width(m).powi(2));
            let sum = ak + am;
            let a = ak * am / sum;
            let s = 0.5 * a;
            let (ck, cm) = (state.center(k), state.center(m));
            let mut sep = 0.0;
            for axis in 0..d {
                let mu = (am * ck[axis] + ak * cm[axis]) / sum;
                p[axis] = mu - ck[axis];
                q[axis] = mu - cm[axis];
                sep += (ck[axis] - cm[axis]).powi(2);
            }
            let overlap = (std::f64::consts::PI * a).powf(df / 2.0) * (-sep / sum).exp();
            let p2: f64 = p.iter().map(|v| v * v).sum();
            let q2: f64 = q.iter().map(|v| v * v).sum();
            let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
            let (ka, kl, kc) = coeffs[k];
            let (ma, ml, mc) = coeffs[m];
            let mut entry = |i: usize, j: usize, v: f64| {
                metric[(k * block + i, m * block + j)] = v;
                metric[(m * block + j, k * block + i)] = v;
            };
            entry(0, 0, ka * ma * overlap);
            entry(0, 1, ka * ml * overlap * (df * s + q2));
            entry(1, 0, kl * ma * overlap * (df * s + p2));
            entry(
                1,
                1,
                kl * ml * overlap * ((df * s + p2) * (df * s + q2) + 2.0 * df * s * s + 4.0 * s * pq),
            );
            for j in 0..d {
                entry(0, 2 + j, ka * mc * overlap * q[j]);
                entry(2 + j, 0, kc * ma * overlap * p[j]);
                entry(1, 2 + j, kl * mc * overlap * ((df * s + p2) * q[j] + 2.0 * p[j] * s));
                entry(2 + j, 1, kc * ml * overlap * ((df * s + q2) * p[j] + 2.0 * q[j] * s));
                for i in 0..d {
                    let delta = if i == j { s } else { 0.0 };
                    entry(2 + i, 2 + j, kc * mc * overlap * (delta + p[i] * q[j]));
                }
            }
        }
    }
    metric
}

/// Fisher information `g_ij = int (1/p) dp_i dp_j dx` by tensor Gauss-Legendre
/// quadrature over a box covering every term to ten widths. `panels` panels
/// of 8 nodes per axis; `d <= 2`.
pub fn fisher_metric_quadrature(state: &MixtureState, panels: usize) -> Result<DMatrix<f64>> {
    let d = state.dim();
    if d > 2 {
        return Err(Error::InvalidArgument(format!(
            "quadrature Fisher metric supports d <= 2, got {d}"
        )));
    }
    let (lower, upper) = covering_box(state, 10.0);
    let n = state.n_params();
    let mut row = vec![0.0; n];
    let mut metric = DMatrix::zeros(n, n);
    let rules: Vec<quadrature::CompositeRule> = lower
        .iter()
        .zip(&upper)
        .map(|(&a, &b)| quadrature::CompositeRule::new(a, b, panels, 8))
        .collect();
    let mut sums = vec![0.0; n * n];
    let mut x = vec![0.0; d];
    let m = rules[0].nodes.len();
    let total = m.pow(d as u32);
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for axis in 0..d {
            let i = rem % m;
            rem /= m;
            x[axis] = rules[axis].nodes[i];
            w *= rules[axis].weights[i];
        }
        let p = state.density(&x);
        if p <= 1e-300 {
            continue;
        }
        state.param_gradient_into(&x, &mut row);
        for i in 0..n {
            let ri = w * row[i] / p;
            for j in i..n {
                sums[i * n + j] += ri * row[j];
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            metric[(i, j)] = sums[i * n + j];
            metric[(j, i)] = sums[i * n + j];
        }
    }
    Ok(metric)
}

/// Axis-aligned box covering every term to `spread` widths.
pub fn covering_box(state: &MixtureState, spread: f64) -> (Vec<f64>, Vec<f64>) {
    let d = state.dim();
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for k in 0..state.terms() {
        let l = state.width(k);
        for (axis, c) in state.center(k).iter().enumerate() {
            lower[axis] = lower[axis].min(c - spread * l);
            upper[axis] = upper[axis].max(c + spread * l);
        }
    }
    (lower, upper)
}
