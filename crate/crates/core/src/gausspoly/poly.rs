//! Sparse multivariate polynomials with real coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use smallvec::SmallVec;

/// Exponent multi-index of a monomial, one entry per axis.
pub type Exponent = SmallVec<[u8; 8]>;

/// A polynomial over `R^d` stored as a map from exponent multi-index to
/// coefficient. Zero coefficients are never stored.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<Exponent, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(&Exponent::from_elem(0, dim), value);
        p
    }

    /// The coordinate function `x_axis` (0-based axis).
    pub fn variable(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis {axis} out of range for dimension {dim}");
        let mut e = Exponent::from_elem(0, dim);
        e[axis] = 1;
        Self::monomial(e, 1.0)
    }

    pub fn monomial(exponent: Exponent, coefficient: f64) -> Self {
        let mut p = Self::zero(exponent.len());
        p.add_term(&exponent, coefficient);
        p
    }

    /// Builds a polynomial from `(exponent, coefficient)` pairs, merging duplicates.
    pub fn from_terms<I>(dim: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Exponent, f64)>,
    {
        let mut p = Self::zero(dim);
        for (e, c) in terms {
            assert_eq!(e.len(), dim, "exponent length must equal the dimension");
            p.add_term(&e, c);
        }
        p
    }

    /// `sum_l (x_l - center_l)^2`
    pub fn squared_distance(center: &[f64]) -> Self {
        let dim = center.len();
        let mut p = Self::zero(dim);
        let mut constant = 0.0;
        for (axis, &c) in center.iter().enumerate() {
            let mut e = Exponent::from_elem(0, dim);
            e[axis] = 2;
            p.add_term(&e, 1.0);
            e[axis] = 1;
            p.add_term(&e, -2.0 * c);
            constant += c * c;
        }
        p.add_term(&Exponent::from_elem(0, dim), constant);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of stored (nonzero) monomials.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; zero for the zero polynomial.
    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&k| k as usize).sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    /// Largest exponent of any single axis.
    pub fn max_axis_degree(&self) -> usize {
        self.terms
            .keys()
            .flat_map(|e| e.iter().map(|&k| k as usize))
            .max()
            .unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Exponent, f64)> + '_ {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn coefficient(&self, exponent: &[u8]) -> f64 {
        self.terms.get(exponent).copied().unwrap_or(0.0)
    }

    pub fn add_term(&mut self, exponent: &[u8], coefficient: f64) {
        debug_assert_eq!(exponent.len(), self.dim);
        if coefficient == 0.0 {
            return;
        }
        match self.terms.get_mut(exponent) {
            Some(c) => {
                *c += coefficient;
                if *c == 0.0 {
                    self.terms.remove(exponent);
                }
            }
            None => {
                self.terms.insert(Exponent::from_slice(exponent), coefficient);
            }
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = Self::zero(self.dim);
        if factor != 0.0 {
            for (e, c) in self.iter() {
                out.add_term(e, c * factor);
            }
        }
        out
    }

    pub fn derivative(&self, axis: usize) -> Self {
        assert!(axis < self.dim, "axis {axis} out of range");
        let mut out = Self::zero(self.dim);
        for (e, c) in self.iter() {
            let k = e[axis];
            if k > 0 {
                let mut de = e.clone();
                de[axis] = k - 1;
                out.add_term(&de, c * k as f64);
            }
        }
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.iter()
            .map(|(e, c)| c * monomial_value(e, x))
            .sum()
    }
}

/// `prod_l x_l^{e_l}`
#[inline]
pub fn monomial_value(exponent: &[u8], x: &[f64]) -> f64 {
    exponent
        .iter()
        .zip(x)
        .fold(1.0, |acc, (&k, &xi)| match k {
            0 => acc,
            1 => acc * xi,
            _ => acc * xi.powi(k as i32),
        })
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in self.iter() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (axis, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => write!(f, "*x{axis}")?,
                    _ => write!(f, "*x{axis}^{k}")?,
                }
            }
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;

    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (e, c) in rhs.iter() {
            out.add_term(e, c);
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;

    fn sub(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (e, c) in rhs.iter() {
            out.add_term(e, -c);
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;

    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;

    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = Polynomial::zero(self.dim);
        let mut e = Exponent::from_elem(0, self.dim);
        for (e1, c1) in self.iter() {
            for (e2, c2) in rhs.iter() {
                for axis in 0..self.dim {
                    e[axis] = e1[axis] + e2[axis];
                }
                out.add_term(&e, c1 * c2);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(v: &[u8]) -> Exponent {
        Exponent::from_slice(v)
    }

    #[test]
    fn zero_coefficients_are_dropped() {
        let mut p = Polynomial::variable(2, 0);
        p.add_term(&exp(&[1, 0]), -1.0);
        assert!(p.is_zero());
        assert_eq!(p.len(), 0);
    }

    #[test]
    fn squared_distance_evaluates() {
        let p = Polynomial::squared_distance(&[1.0, -2.0]);
        let v = p.evaluate(&[0.5, 0.5]);
        assert!((v - (0.25 + 6.25)).abs() < 1e-14);
    }

    #[test]
    fn product_and_derivative() {
        // (x0 + 2)(x0 x1) = x0^2 x1 + 2 x0 x1
        let a = &Polynomial::variable(2, 0) + &Polynomial::constant(2, 2.0);
        let b = Polynomial::monomial(exp(&[1, 1]), 1.0);
        let p = &a * &b;
        assert_eq!(p.coefficient(&[2, 1]), 1.0);
        assert_eq!(p.coefficient(&[1, 1]), 2.0);
        let d = p.derivative(0);
        assert_eq!(d.coefficient(&[1, 1]), 2.0);
        assert_eq!(d.coefficient(&[0, 1]), 2.0);
        assert_eq!(p.degree(), 3);
        assert_eq!(p.max_axis_degree(), 2);
    }
}
