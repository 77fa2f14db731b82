//! Closed algebra of polynomial-times-Gaussian functions.
//!
//! A [`GaussPoly`] is `P(x) exp(-|x - mu|^2 / a)` where `P` is a sparse
//! polynomial in the global coordinates `x`. Products, partial derivatives
//! and integrals over `R^d` are all exact, which is what makes the closed-form
//! (symbolic) assembly of the metric tensor and right-hand side possible
//! without a computer algebra system.

mod poly;

pub use poly::{monomial_value, Exponent, Polynomial};

use crate::error::{check_dim, Error, Result};

/// `P(x) * exp(-|x - center|^2 / width)`
#[derive(Clone, Debug, PartialEq)]
pub struct GaussPoly {
    poly: Polynomial,
    center: Vec<f64>,
    width: f64,
}

impl GaussPoly {
    pub fn new(poly: Polynomial, center: Vec<f64>, width: f64) -> Result<Self> {
        check_dim(center.len(), poly.dim())?;
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian width must be positive and finite, got {width}"
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("Gaussian center must be finite".into()));
        }
        Ok(Self {
            poly,
            center,
            width,
        })
    }

    /// `scale * exp(-|x - center|^2 / width)`
    pub fn gaussian(center: Vec<f64>, width: f64, scale: f64) -> Result<Self> {
        let dim = center.len();
        Self::new(Polynomial::constant(dim, scale), center, width)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn gaussian_factor(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(xi, ci)| (xi - ci) * (xi - ci))
            .sum();
        (-r2 / self.width).exp()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.poly.evaluate(x) * self.gaussian_factor(x))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            poly: self.poly.scale(factor),
            center: self.center.clone(),
            width: self.width,
        }
    }

    /// Exact product. The Gaussian cross factor is folded into the coefficients.
    pub fn product(&self, other: &GaussPoly) -> Result<GaussPoly> {
        check_dim(self.dim(), other.dim())?;
        let (center, width, prefactor) = combine(self, other);
        let poly = (&self.poly * &other.poly).scale(prefactor);
        Ok(GaussPoly {
            poly,
            center,
            width,
        })
    }

    /// Exact integral over `R^d`.
    pub fn integral(&self) -> f64 {
        if self.poly.is_zero() {
            return 0.0;
        }
        let moments = GaussianMoments::new(&self.center, self.width, self.poly.max_axis_degree());
        self.poly
            .iter()
            .map(|(e, c)| c * moments.monomial_integral(e))
            .sum()
    }

    /// Exact partial derivative along `axis` (0-based).
    pub fn differentiate(&self, axis: usize) -> Result<GaussPoly> {
        if axis >= self.dim() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for dimension {}",
                self.dim()
            )));
        }
        // d/dx_l [P g] = (dP/dx_l - (2/a)(x_l - mu_l) P) g
        let dim = self.dim();
        let shift = &Polynomial::variable(dim, axis) - &Polynomial::constant(dim, self.center[axis]);
        let poly = &self.poly.derivative(axis) - &(&shift * &self.poly).scale(2.0 / self.width);
        Ok(GaussPoly {
            poly,
            center: self.center.clone(),
            width: self.width,
        })
    }
}

/// Center, width and scalar prefactor of the product of two Gaussian factors.
fn combine(g1: &GaussPoly, g2: &GaussPoly) -> (Vec<f64>, f64, f64) {
    let (a1, a2) = (g1.width, g2.width);
    let sum = a1 + a2;
    let center = g1
        .center
        .iter()
        .zip(&g2.center)
        .map(|(m1, m2)| (a2 * m1 + a1 * m2) / sum)
        .collect();
    let sep: f64 = g1
        .center
        .iter()
        .zip(&g2.center)
        .map(|(m1, m2)| (m1 - m2) * (m1 - m2))
        .sum();
    (center, a1 * a2 / sum, (-sep / sum).exp())
}

/// Raw one-dimensional moments `int x^k exp(-(x - mu_l)^2 / a) dx` of an
/// isotropic Gaussian, tabulated per axis. The integral of any monomial
/// against the Gaussian factorizes into a product of table entries.
#[derive(Clone, Debug)]
pub struct GaussianMoments {
    tables: Vec<Vec<f64>>,
}

impl GaussianMoments {
    pub fn new(center: &[f64], width: f64, max_degree: usize) -> Self {
        let tables = center
            .iter()
            .map(|&mu| {
                let mut raw = vec![0.0; max_degree + 1];
                raw_moments(mu, width, &mut raw);
                raw
            })
            .collect();
        Self { tables }
    }

    pub fn dim(&self) -> usize {
        self.tables.len()
    }

    pub fn max_degree(&self) -> usize {
        self.tables.first().map_or(0, |t| t.len() - 1)
    }

    #[inline]
    pub fn monomial_integral(&self, exponent: &[u8]) -> f64 {
        exponent
            .iter()
            .zip(&self.tables)
            .map(|(&k, t)| t[k as usize])
            .product()
    }

    /// Integral of the product of two monomials.
    #[inline]
    pub fn pair_integral(&self, e1: &[u8], e2: &[u8]) -> f64 {
        let mut acc = 1.0;
        for ((&k1, &k2), t) in e1.iter().zip(e2).zip(&self.tables) {
            acc *= t[(k1 + k2) as usize];
        }
        acc
    }

    /// `int P(x) Q(x) exp(-|x - mu|^2 / a) dx`
    pub fn bilinear(&self, p: &Polynomial, q: &Polynomial) -> f64 {
        let mut acc = 0.0;
        for (e1, c1) in p.iter() {
            let mut row = 0.0;
            for (e2, c2) in q.iter() {
                row += c2 * self.pair_integral(e1, e2);
            }
            acc += c1 * row;
        }
        acc
    }
}

/// `out[j] = int x^j exp(-(x - mu)^2 / a) dx` for `j < out.len()`, from
/// `m_{j+1} = mu m_j + j (a/2) m_{j-1}`.
#[inline]
pub fn raw_moments(mu: f64, width: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let s = 0.5 * width;
    out[0] = (std::f64::consts::PI * width).sqrt();
    if out.len() > 1 {
        out[1] = mu * out[0];
    }
    for j in 1..out.len() - 1 {
        out[j + 1] = mu * out[j] + j as f64 * s * out[j - 1];
    }
}

/// Geometry shared by every product of two fixed Gaussian factors: the moment
/// tables of the combined Gaussian and the scalar cross prefactor.
#[derive(Clone, Debug)]
pub struct PairGeometry {
    pub moments: GaussianMoments,
    pub prefactor: f64,
}

impl PairGeometry {
    pub fn new(c1: &[f64], a1: f64, c2: &[f64], a2: f64, max_degree: usize) -> Self {
        let sum = a1 + a2;
        let mut center = Vec::with_capacity(c1.len());
        let mut sep = 0.0;
        for (m1, m2) in c1.iter().zip(c2) {
            center.push((a2 * m1 + a1 * m2) / sum);
            sep += (m1 - m2) * (m1 - m2);
        }
        Self {
            moments: GaussianMoments::new(&center, a1 * a2 / sum, max_degree),
            prefactor: (-sep / sum).exp(),
        }
    }

    pub fn inner(&self, p: &Polynomial, q: &Polynomial) -> f64 {
        if self.prefactor == 0.0 {
            return 0.0;
        }
        self.prefactor * self.moments.bilinear(p, q)
    }
}

/// L2 inner product of two single terms, computed without materializing
/// the product polynomial.
pub fn inner_product(g1: &GaussPoly, g2: &GaussPoly) -> Result<f64> {
    check_dim(g1.dim(), g2.dim())?;
    if g1.poly.is_zero() || g2.poly.is_zero() {
        return Ok(0.0);
    }
    let geometry = PairGeometry::new(
        &g1.center,
        g1.width,
        &g2.center,
        g2.width,
        g1.poly.max_axis_degree() + g2.poly.max_axis_degree(),
    );
    Ok(geometry.inner(&g1.poly, &g2.poly))
}

/// A finite sum of [`GaussPoly`] terms sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussPolySum {
    dim: usize,
    terms: Vec<GaussPoly>,
}

impl GaussPolySum {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn new(dim: usize, terms: Vec<GaussPoly>) -> Result<Self> {
        for t in &terms {
            check_dim(dim, t.dim())?;
        }
        Ok(Self { dim, terms })
    }

    pub fn single(term: GaussPoly) -> Self {
        Self {
            dim: term.dim(),
            terms: vec![term],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[GaussPoly] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, term: GaussPoly) -> Result<()> {
        check_dim(self.dim, term.dim())?;
        self.terms.push(term);
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self
            .terms
            .iter()
            .map(|t| t.poly.evaluate(x) * t.gaussian_factor(x))
            .sum())
    }

    pub fn integral(&self) -> f64 {
        self.terms.iter().map(GaussPoly::integral).sum()
    }

    /// `<s1, s2>_{L2(R^d)}`, summed over all term pairs.
    pub fn inner_product_l2(&self, other: &GaussPolySum) -> Result<f64> {
        check_dim(self.dim, other.dim)?;
        let mut acc = 0.0;
        for t1 in &self.terms {
            for t2 in &other.terms {
                acc += inner_product(t1, t2)?;
            }
        }
        Ok(acc)
    }
}
