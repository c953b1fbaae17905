//! Grassmann algebra over `M ≤ 31` generators with exact coefficients.
//!
//! Monomials are bitmasks read in ascending generator order: mask `0b1011`
//! is `ξ_0 ξ_1 ξ_3`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_traits::{One, Zero};
use thiserror::Error;

use crate::scalar::{factorial, Rational};

pub const GENERATOR_CAP: usize = 31;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrassmannError {
    #[error("generator counts differ ({left} vs {right})")]
    GeneratorMismatch { left: usize, right: usize },
    #[error("{0} generators exceed the cap of {GENERATOR_CAP}")]
    TooManyGenerators(usize),
    #[error("generator {index} out of range for {generators} generators")]
    OutOfRange { index: usize, generators: usize },
    #[error("exponential argument has a nonzero scalar term")]
    ScalarTerm,
    #[error("exponential argument has an odd-degree term")]
    OddTerm,
}

#[derive(Clone, PartialEq, Eq)]
pub struct GrassmannPolynomial {
    generators: usize,
    terms: BTreeMap<u32, Rational>,
}

impl fmt::Debug for GrassmannPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(&mask, c)| {
                let gens: Vec<String> = (0..self.generators).filter(|&i| mask >> i & 1 == 1).map(|i| format!("ξ{i}")).collect();
                if gens.is_empty() {
                    c.to_string()
                } else {
                    format!("{c}·{}", gens.join(""))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Sign of reordering `ξ_I ξ_J` (disjoint) into ascending order: one
/// transposition per pair `a ∈ I, b ∈ J` with `a > b`.
pub fn merge_sign(i: u32, j: u32) -> bool {
    let mut inversions = 0u32;
    let mut rest = j;
    while rest != 0 {
        let b = rest.trailing_zeros();
        rest &= rest - 1;
        inversions += (i >> b >> 1).count_ones();
    }
    inversions % 2 == 1
}

impl GrassmannPolynomial {
    pub fn zero(generators: usize) -> Result<Self, GrassmannError> {
        if generators > GENERATOR_CAP {
            return Err(GrassmannError::TooManyGenerators(generators));
        }
        Ok(Self { generators, terms: BTreeMap::new() })
    }

    pub fn scalar(generators: usize, c: Rational) -> Result<Self, GrassmannError> {
        Self::monomial(generators, 0, c)
    }

    pub fn one(generators: usize) -> Result<Self, GrassmannError> {
        Self::scalar(generators, Rational::one())
    }

    /// `c · ξ_mask` in ascending order.
    pub fn monomial(generators: usize, mask: u32, c: Rational) -> Result<Self, GrassmannError> {
        let mut p = Self::zero(generators)?;
        if generators < 32 && mask >> generators != 0 {
            return Err(GrassmannError::OutOfRange { index: 31 - mask.leading_zeros() as usize, generators });
        }
        if !c.is_zero() {
            p.terms.insert(mask, c);
        }
        Ok(p)
    }

    /// Product of generators in the given order (not necessarily sorted).
    pub fn product_of(generators: usize, order: &[usize]) -> Result<Self, GrassmannError> {
        let mut p = Self::one(generators)?;
        for &i in order {
            p = p.mul(&Self::generator(generators, i)?)?;
        }
        Ok(p)
    }

    pub fn generator(generators: usize, index: usize) -> Result<Self, GrassmannError> {
        if index >= generators {
            return Err(GrassmannError::OutOfRange { index, generators });
        }
        Self::monomial(generators, 1 << index, Rational::one())
    }

    pub fn generators(&self) -> usize {
        self.generators
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, &Rational)> {
        self.terms.iter().map(|(&m, c)| (m, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, mask: u32) -> Rational {
        self.terms.get(&mask).cloned().unwrap_or_else(Rational::zero)
    }

    fn check(&self, other: &Self) -> Result<(), GrassmannError> {
        if self.generators != other.generators {
            return Err(GrassmannError::GeneratorMismatch { left: self.generators, right: other.generators });
        }
        Ok(())
    }

    fn accumulate(terms: &mut BTreeMap<u32, Rational>, mask: u32, c: Rational) {
        let entry = terms.entry(mask).or_insert_with(Rational::zero);
        *entry += c;
        if entry.is_zero() {
            terms.remove(&mask);
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, GrassmannError> {
        self.check(other)?;
        let mut terms = self.terms.clone();
        for (&m, c) in &other.terms {
            Self::accumulate(&mut terms, m, c.clone());
        }
        Ok(Self { generators: self.generators, terms })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GrassmannError> {
        self.add(&other.scale(&-Rational::one()))
    }

    pub fn scale(&self, c: &Rational) -> Self {
        if c.is_zero() {
            return Self { generators: self.generators, terms: BTreeMap::new() };
        }
        Self { generators: self.generators, terms: self.terms.iter().map(|(&m, v)| (m, v * c)).collect() }
    }

    /// Bilinear, associative product; overlapping monomials annihilate.
    pub fn mul(&self, other: &Self) -> Result<Self, GrassmannError> {
        self.check(other)?;
        let mut terms = BTreeMap::new();
        for (&a, ca) in &self.terms {
            for (&b, cb) in &other.terms {
                if a & b != 0 {
                    continue;
                }
                let c = ca * cb;
                Self::accumulate(&mut terms, a | b, if merge_sign(a, b) { -c } else { c });
            }
        }
        Ok(Self { generators: self.generators, terms })
    }

    /// Left derivative `∂_{ξ_k}`: moves `ξ_k` to the front, then drops it.
    pub fn derivative(&self, k: usize) -> Result<Self, GrassmannError> {
        if k >= self.generators {
            return Err(GrassmannError::OutOfRange { index: k, generators: self.generators });
        }
        let bit = 1u32 << k;
        let terms = self
            .terms
            .iter()
            .filter(|(&m, _)| m & bit != 0)
            .map(|(&m, c)| (m ^ bit, if (m & (bit - 1)).count_ones() % 2 == 1 { -c.clone() } else { c.clone() }))
            .collect();
        Ok(Self { generators: self.generators, terms })
    }

    /// `∫ ∂_{ξ_0} ∂_{ξ_1} ⋯ ∂_{ξ_{M-1}} F`: the rightmost derivative acts
    /// first, so `∫ ξ_0 ξ_1 ⋯ ξ_{M-1} = (-1)^{M(M-1)/2}`.
    pub fn berezin_integrate(&self) -> Rational {
        let top = if self.generators == 32 { u32::MAX } else { (1u32 << self.generators) - 1 };
        let c = self.coefficient(top);
        let m = self.generators as u64;
        if (m * m.saturating_sub(1) / 2) % 2 == 1 {
            -c
        } else {
            c
        }
    }

    /// Same integral by applying the derivatives one at a time.
    pub fn berezin_by_derivatives(&self) -> Rational {
        let mut p = self.clone();
        for k in (0..self.generators).rev() {
            p = p.derivative(k).expect("index in range");
        }
        p.coefficient(0)
    }

    pub fn is_even(&self) -> bool {
        self.terms.keys().all(|m| m.count_ones() % 2 == 0)
    }

    /// Nilpotent exponential `Σ_k F^k / k!` of an even element without scalar term.
    pub fn exp(&self) -> Result<Self, GrassmannError> {
        if self.terms.contains_key(&0) {
            return Err(GrassmannError::ScalarTerm);
        }
        if !self.is_even() {
            return Err(GrassmannError::OddTerm);
        }
        let mut result = Self::one(self.generators)?;
        let mut power = Self::one(self.generators)?;
        let mut k = 0u32;
        loop {
            power = power.mul(self)?;
            k += 1;
            if power.is_empty() {
                return Ok(result);
            }
            let inv = Rational::new(1.into(), factorial(k).into());
            result = result.add(&power.scale(&inv))?;
        }
    }
}

impl Add for &GrassmannPolynomial {
    type Output = GrassmannPolynomial;

    fn add(self, rhs: Self) -> GrassmannPolynomial {
        GrassmannPolynomial::add(self, rhs).expect("generator counts agree")
    }
}

impl Sub for &GrassmannPolynomial {
    type Output = GrassmannPolynomial;

    fn sub(self, rhs: Self) -> GrassmannPolynomial {
        GrassmannPolynomial::sub(self, rhs).expect("generator counts agree")
    }
}

impl Neg for &GrassmannPolynomial {
    type Output = GrassmannPolynomial;

    fn neg(self) -> GrassmannPolynomial {
        self.scale(&-Rational::one())
    }
}

/// `exp(F)` for an even, nilpotent `F`.
pub fn grassmann_exp(f: &GrassmannPolynomial) -> Result<GrassmannPolynomial, GrassmannError> {
    f.exp()
}
