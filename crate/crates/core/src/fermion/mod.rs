//! Fermionic Gaussian states, their cumulants, and the bosonic–fermionic
//! duality checks.
//!
//! A state over `m` pairs `ψ_i, ψ̄_i` is parameterized by its correlation
//! matrix `K`: `⟨∏_{i∈A} ψ̄_i ψ_i⟩ = det(K_AA)`. With generators
//! `ξ_{2i} = ψ_i`, `ξ_{2i+1} = ψ̄_i` the Berezin form of the state is
//! `⟨F⟩ = det(C)^{-1} ∫ F exp(ψ̄ᵀ C ψ)` with `C = K^{-T}`.

mod grassmann;

pub use grassmann::{grassmann_exp, merge_sign, GrassmannError, GrassmannPolynomial, GENERATOR_CAP};

use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::complexboson::{complex_cumulant_matrix, complex_multiplicity, ComplexError, ReplicatedMatrix, PERMANENT_CAP};
use crate::matrix::{Matrix, MatrixError};
use crate::multigraph::{delta_bar, enumerate_multigraphs, DegreeSequence, MultigraphError, PARTITION_CAP};
use crate::scalar::{rational, Rational, Scalar};
use crate::wick::{
    kernel_product, mask_members, moments_to_cumulants, wick_power_cumulant_matrix, wick_product_oracle, SetFunction, WickError,
};

/// Largest `m` for [`gaussian_berezin_det_check`] (`2^{2m}` monomials).
pub const BEREZIN_CHECK_CAP: usize = 6;
/// Largest state for which expectations are also expanded by brute force.
pub const BRUTE_FORCE_CAP: usize = 4;
/// Largest `|A|` for [`duality_check_r1`].
pub const DUALITY_CAP: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FermionError {
    #[error("matrix size {size} exceeds the cap {cap}")]
    Cap { size: usize, cap: usize },
    #[error("correlation matrix must be square")]
    NotSquare,
    #[error("correlation matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("correlation matrix is singular")]
    Singular,
    #[error("subset must be nonempty")]
    EmptySubset,
    #[error("site {index} out of range for {size} sites")]
    OutOfRange { index: usize, size: usize },
    #[error("site {0} repeated in subset")]
    Repeated(usize),
    #[error("C is {rows}x{cols} but n r = {expected}")]
    MinorShape { rows: usize, cols: usize, expected: usize },
    #[error("determinant path {determinant} disagrees with Berezin path {berezin}")]
    CrossCheck { determinant: String, berezin: String },
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Wick(#[from] WickError),
    #[error(transparent)]
    Complex(#[from] ComplexError),
    #[error(transparent)]
    Multigraph(#[from] MultigraphError),
}

fn psi(i: usize) -> usize {
    2 * i
}

fn psi_bar(i: usize) -> usize {
    2 * i + 1
}

/// `ψ̄ᵀ C ψ = Σ_ij C_ij ψ̄_i ψ_j` over `2m` generators.
pub fn gaussian_exponent(c: &Matrix<Rational>) -> Result<GrassmannPolynomial, FermionError> {
    let m = c.rows();
    let mut p = GrassmannPolynomial::zero(2 * m)?;
    for i in 0..m {
        for j in 0..m {
            if c.get(i, j).is_zero() {
                continue;
            }
            let term = GrassmannPolynomial::product_of(2 * m, &[psi_bar(i), psi(j)])?.scale(c.get(i, j));
            p = p.add(&term)?;
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetCheck {
    pub lhs: String,
    pub rhs: String,
    pub equal: bool,
}

/// `∫ ∂ψ_1 ∂ψ̄_1 ⋯ ∂ψ_m ∂ψ̄_m exp(ψ̄ᵀ C ψ)` against `det(C)`.
pub fn gaussian_berezin_det_check(c: &Matrix<Rational>) -> Result<DetCheck, FermionError> {
    if !c.is_square() {
        return Err(FermionError::NotSquare);
    }
    if c.rows() > BEREZIN_CHECK_CAP {
        return Err(FermionError::Cap { size: c.rows(), cap: BEREZIN_CHECK_CAP });
    }
    let lhs = gaussian_exponent(c)?.exp()?.berezin_integrate();
    let rhs = c.determinant()?;
    Ok(DetCheck { equal: lhs == rhs, lhs: lhs.to_string(), rhs: rhs.to_string() })
}

/// Fermionic Gaussian state with symmetric, invertible correlation matrix `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FermionicState {
    k: Matrix<Rational>,
}

impl FermionicState {
    pub fn new(k: Matrix<Rational>) -> Result<Self, FermionError> {
        if !k.is_square() {
            return Err(FermionError::NotSquare);
        }
        if let Some((i, j)) = k.first_asymmetry() {
            return Err(FermionError::Asymmetric(i, j));
        }
        if k.determinant()?.is_zero() {
            return Err(FermionError::Singular);
        }
        Ok(Self { k })
    }

    pub fn correlation(&self) -> &Matrix<Rational> {
        &self.k
    }

    pub fn size(&self) -> usize {
        self.k.rows()
    }

    fn check_subset(&self, a: &[usize]) -> Result<(), FermionError> {
        if a.is_empty() {
            return Err(FermionError::EmptySubset);
        }
        for (n, &i) in a.iter().enumerate() {
            if i >= self.size() {
                return Err(FermionError::OutOfRange { index: i, size: self.size() });
            }
            if a[..n].contains(&i) {
                return Err(FermionError::Repeated(i));
            }
        }
        Ok(())
    }

    /// `⟨∏_{i∈A} ψ̄_i ψ_i⟩` by direct Grassmann expansion of the Gaussian.
    pub fn berezin_expectation(&self, a: &[usize]) -> Result<Rational, FermionError> {
        self.check_subset(a)?;
        let m = self.size();
        if m > BRUTE_FORCE_CAP {
            return Err(FermionError::Cap { size: m, cap: BRUTE_FORCE_CAP });
        }
        let c = self.k.inverse()?.transpose();
        let weight = gaussian_exponent(&c)?.exp()?;
        let order: Vec<usize> = a.iter().flat_map(|&i| [psi_bar(i), psi(i)]).collect();
        let observable = GrassmannPolynomial::product_of(2 * m, &order)?;
        Ok(observable.mul(&weight)?.berezin_integrate() / c.determinant()?)
    }
}

/// `det(K_AA)`; states with `m ≤ 4` are also expanded by brute force and a
/// disagreement is an error.
pub fn fermionic_expectation(state: &FermionicState, a: &[usize]) -> Result<Rational, FermionError> {
    state.check_subset(a)?;
    let det = state.k.principal(a).determinant()?;
    if state.size() <= BRUTE_FORCE_CAP {
        let berezin = state.berezin_expectation(a)?;
        if berezin != det {
            return Err(FermionError::CrossCheck { determinant: det.to_string(), berezin: berezin.to_string() });
        }
    }
    Ok(det)
}

/// Principal minors `B ↦ det(K_BB)` over subsets of `a`.
pub fn minor_function(k: &Matrix<Rational>, a: &[usize]) -> Result<SetFunction<Rational>, FermionError> {
    if a.len() > PARTITION_CAP {
        return Err(FermionError::Cap { size: a.len(), cap: PARTITION_CAP });
    }
    SetFunction::try_from_fn(a.len(), |mask| -> Result<Rational, FermionError> {
        let idx: Vec<usize> = mask_members(mask).into_iter().map(|i| a[i]).collect();
        Ok(k.principal(&idx).determinant()?)
    })
}

/// Möbius inversion of the principal minors: `k_ferm(A)`.
pub fn fermionic_cumulant(state: &FermionicState, a: &[usize]) -> Result<Rational, FermionError> {
    state.check_subset(a)?;
    Ok(moments_to_cumulants(&minor_function(&state.k, a)?).full().clone())
}

fn is_nonzero_ratio(num: &Rational, den: &Rational) -> Option<Rational> {
    (!den.is_zero()).then(|| num / den)
}

/// One subset of a duality report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityRow {
    pub subset: Vec<usize>,
    pub k_vec: String,
    pub k_bos_real: String,
    pub k_bos_complex: String,
    pub k_ferm: String,
    /// `k_bosC = (-1)^{|B|-1} k_ferm`.
    pub complex_fermion_duality: bool,
    /// `k_vec = k_bosC`.
    pub vector_complex_equality: bool,
    /// `k_bosR / k_vec`, absent when `k_vec = 0`.
    pub empirical_constant: Option<String>,
    /// The constant `2^{|B|-2}` stated for `k_bosR = c · k_vec`.
    pub stated_constant: String,
    pub stated_constant_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub sites: Vec<usize>,
    pub rows: Vec<DualityRow>,
    pub all_dualities_hold: bool,
    pub all_vector_equalities_hold: bool,
}

fn pow2(e: i64) -> Rational {
    if e >= 0 {
        rational(1 << e, 1)
    } else {
        rational(1, 1 << -e)
    }
}

fn sign_for(size: usize) -> Rational {
    if size % 2 == 1 {
        Rational::one()
    } else {
        -Rational::one()
    }
}

/// Cumulant families at `r = 1` on every nonempty `B ⊆ A`, with `K = G`.
/// `g` is the covariance restricted to `A` (indices in the report are
/// positions in `A`).
pub fn duality_check_r1(g: &Matrix<Rational>) -> Result<DualityReport, FermionError> {
    let n = g.rows();
    if !g.is_square() {
        return Err(FermionError::NotSquare);
    }
    if n > DUALITY_CAP {
        return Err(FermionError::Cap { size: n, cap: DUALITY_CAP });
    }
    let all: Vec<usize> = (0..n).collect();
    let vec_moments = SetFunction::try_from_fn(n, |mask| -> Result<Rational, FermionError> {
        let b = mask_members(mask);
        Ok(wick_product_oracle(g, &[b.clone(), b])?)
    })?;
    let k_vec = moments_to_cumulants(&vec_moments);
    let minors = moments_to_cumulants(&minor_function(g, &all)?);
    let mut rows = Vec::new();
    for mask in 1..1u32 << n {
        let b = mask_members(mask);
        let sub = g.principal(&b);
        let k_bos_real = wick_power_cumulant_matrix(&sub, &vec![2; b.len()])?;
        let k_bos_complex = complex_cumulant_matrix(&sub, 1)?;
        let k_ferm = minors.get(mask).clone();
        let kv = k_vec.get(mask).clone();
        let stated = pow2(b.len() as i64 - 2);
        let empirical = is_nonzero_ratio(&k_bos_real, &kv);
        rows.push(DualityRow {
            complex_fermion_duality: k_bos_complex == sign_for(b.len()) * &k_ferm,
            vector_complex_equality: kv == k_bos_complex,
            stated_constant_matches: k_bos_real == &stated * &kv,
            empirical_constant: empirical.map(|c| c.to_string()),
            stated_constant: stated.to_string(),
            subset: b,
            k_vec: kv.to_string(),
            k_bos_real: k_bos_real.to_string(),
            k_bos_complex: k_bos_complex.to_string(),
            k_ferm: k_ferm.to_string(),
        });
    }
    Ok(DualityReport {
        sites: all,
        all_dualities_hold: rows.iter().all(|r| r.complex_fermion_duality),
        all_vector_equalities_hold: rows.iter().all(|r| r.vector_complex_equality),
        rows,
    })
}

/// One subset of a principal-minors report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorRow {
    pub subset: Vec<usize>,
    /// Rows/columns `B_r` of `C` used for the minor.
    pub indices: Vec<usize>,
    pub k_ferm: String,
    pub signed_k_bos: String,
    /// `k^r_ferm(B) = (-1)^{|B|-1} k^r_bos(B)`.
    pub cumulant_relation_holds: bool,
    pub minor: String,
    /// `Σ_{q ∈ MG(B,2r)} sign(q) mult(q) ∏ G^q`, the minor the relation requires.
    pub required_minor: String,
    pub minor_condition_holds: bool,
    /// `(det C_{B_r,B_r})^{-1}`, absent for a singular minor.
    pub inverse_minor: Option<String>,
    /// `Σ_q sign(q) δ̄(q) ∏ G^q`.
    pub stated_rhs: String,
    pub stated_condition_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorReport {
    pub order: usize,
    pub sites: Vec<usize>,
    pub rows: Vec<MinorRow>,
    /// The cumulant relation holds on every subset.
    pub verdict: bool,
}

/// Evaluates the principal-minor condition for `r`-th powers.
///
/// `C` (size `n r`) plays the role of the fermionic correlation matrix of
/// the replicated system, so `k^r_ferm` is the Möbius inversion of
/// `B ↦ det(C_{B_r,B_r})` with `B_r = {i r, ..., (i+1) r - 1 : i ∈ B}`.
/// `sites` indexes `G` (size `n`).
pub fn r_power_minor_condition(c: &Matrix<Rational>, g: &Matrix<Rational>, sites: &[usize], r: usize) -> Result<MinorReport, FermionError> {
    let n = g.rows();
    if !c.is_square() || c.rows() != n * r {
        return Err(FermionError::MinorShape { rows: c.rows(), cols: c.cols(), expected: n * r });
    }
    if r == 0 {
        return Err(ComplexError::ZeroOrder.into());
    }
    if sites.is_empty() {
        return Err(FermionError::EmptySubset);
    }
    for (k, &i) in sites.iter().enumerate() {
        if i >= n {
            return Err(FermionError::OutOfRange { index: i, size: n });
        }
        if sites[..k].contains(&i) {
            return Err(FermionError::Repeated(i));
        }
    }
    if sites.len() * r > PERMANENT_CAP {
        return Err(FermionError::Cap { size: sites.len() * r, cap: PERMANENT_CAP });
    }
    let replicated = ReplicatedMatrix::new(g.clone(), r)?;
    let minors = SetFunction::try_from_fn(sites.len(), |mask| -> Result<Rational, FermionError> {
        let b: Vec<usize> = mask_members(mask).into_iter().map(|i| sites[i]).collect();
        Ok(c.principal(&replicated.blocks(&b)).determinant()?)
    })?;
    let k_ferm = moments_to_cumulants(&minors);
    let mut rows = Vec::new();
    for mask in 1..1u32 << sites.len() {
        let b: Vec<usize> = mask_members(mask).into_iter().map(|i| sites[i]).collect();
        let gb = g.principal(&b);
        let signed_k_bos = sign_for(b.len()) * complex_cumulant_matrix(&gb, r)?;
        let mut required = Rational::zero();
        let mut stated = Rational::zero();
        for q in enumerate_multigraphs(&DegreeSequence::from_degrees(&vec![2 * r as u32; b.len()]), true) {
            let w = kernel_product(&gb, &q);
            if w.is_zero() {
                continue;
            }
            let s = rational(q.sign() as i64, 1);
            required += &s * Rational::from_biguint(&complex_multiplicity(&q, r as u32)?) * &w;
            stated += s * delta_bar(&q, r as u32)? * w;
        }
        let minor = minors.get(mask).clone();
        let inverse = (!minor.is_zero()).then(|| minor.recip());
        let kf = k_ferm.get(mask).clone();
        rows.push(MinorRow {
            indices: replicated.blocks(&b),
            subset: b,
            cumulant_relation_holds: kf == signed_k_bos,
            k_ferm: kf.to_string(),
            signed_k_bos: signed_k_bos.to_string(),
            minor_condition_holds: minor == required,
            stated_condition_holds: inverse.as_ref() == Some(&stated),
            minor: minor.to_string(),
            required_minor: required.to_string(),
            inverse_minor: inverse.map(|v| v.to_string()),
            stated_rhs: stated.to_string(),
        });
    }
    Ok(MinorReport { order: r, sites: sites.to_vec(), verdict: rows.iter().all(|r| r.cumulant_relation_holds), rows })
}
