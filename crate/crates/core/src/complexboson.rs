//! Moments and cumulants of `|Z_i|^{2r}` for a circularly-symmetric complex
//! Gaussian vector with `E[Z_i Z̄_j] = G(i, j)` and `E[Z_i Z_j] = 0`.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::covariance::CovarianceMatrix;
use crate::matrix::Matrix;
use crate::multigraph::{delta_bar, enumerate_multigraphs, enumerate_pairings, DegreeSequence, Multigraph, MultigraphError};
use crate::scalar::{factorial, Rational, Scalar};
use crate::wick::{kernel_product, mask_members, moments_to_cumulants, restrict, SetFunction, WickError};

/// Largest matrix accepted by [`permanent`].
pub const PERMANENT_CAP: usize = 20;

/// Largest leg count `r|A|` for the bipartite pairing oracle.
pub const BIPARTITE_ORACLE_CAP: usize = 16;

/// Matrices at least this large are split across threads.
const PARALLEL_THRESHOLD: usize = 14;
const CHUNKS: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplexError {
    #[error("permanent needs a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix size {size} exceeds the permanent cap {cap}")]
    SizeCap { size: usize, cap: usize },
    #[error("replication order must be at least 1")]
    ZeroOrder,
    #[error("complex moment paths disagree: permanent {permanent}, oracle {oracle:?}, multigraph {multigraph}")]
    CrossCheck { permanent: String, oracle: Option<String>, multigraph: String },
    #[error("connected sum {connected} disagrees with Möbius inversion {mobius}")]
    CumulantCrossCheck { connected: String, mobius: String },
    #[error(transparent)]
    Wick(#[from] WickError),
    #[error(transparent)]
    Multigraph(#[from] MultigraphError),
}

/// Scalars with a permanent and a notion of agreement between paths.
pub trait PermanentScalar: Scalar {
    fn permanent_of(m: &Matrix<Self>) -> Self;
    /// Exact equality for rationals, relative `1e-9` for floats.
    fn agrees(&self, other: &Self) -> bool;
    fn render(&self) -> String;
}

trait Ring: Clone + Zero + One + std::ops::Sub<Output = Self> + std::ops::Neg<Output = Self> + Send + Sync {}
impl<T: Clone + Zero + One + std::ops::Sub<Output = T> + std::ops::Neg<Output = T> + Send + Sync> Ring for T {}

/// Ryser's formula over Gray-code indices `start..end` (index 0, the empty
/// set, contributes nothing): `Σ (-1)^{|S|} ∏_i Σ_{j∈S} m_ij`.
fn ryser_range<T: Ring>(m: &[Vec<T>], start: u64, end: u64) -> T {
    let n = m.len();
    let mut gray = start ^ (start >> 1);
    let mut sums: Vec<T> =
        (0..n).map(|i| (0..n).filter(|&j| gray >> j & 1 == 1).fold(T::zero(), |acc, j| acc + m[i][j].clone())).collect();
    let mut total = T::zero();
    for k in start..end {
        if k > 0 {
            let prod = sums.iter().fold(T::one(), |acc, s| acc * s.clone());
            if gray.count_ones() % 2 == 1 {
                total = total - prod;
            } else {
                total = total + prod;
            }
        }
        let next = k + 1;
        let bit = next.trailing_zeros() as usize;
        if bit < n {
            let adding = gray >> bit & 1 == 0;
            gray ^= 1 << bit;
            for (i, s) in sums.iter_mut().enumerate() {
                *s = if adding { s.clone() + m[i][bit].clone() } else { s.clone() - m[i][bit].clone() };
            }
        }
    }
    total
}

fn ryser<T: Ring>(m: &[Vec<T>]) -> T {
    let n = m.len();
    if n == 0 {
        return T::one();
    }
    let total_sets = 1u64 << n;
    let sum = if n >= PARALLEL_THRESHOLD {
        let chunk = total_sets / CHUNKS;
        let parts: Vec<T> = (0..CHUNKS).into_par_iter().map(|c| ryser_range(m, c * chunk, (c + 1) * chunk)).collect();
        parts.into_iter().fold(T::zero(), |acc, p| acc + p)
    } else {
        ryser_range(m, 0, total_sets)
    };
    if n % 2 == 1 {
        -sum
    } else {
        sum
    }
}

impl PermanentScalar for f64 {
    fn permanent_of(m: &Matrix<f64>) -> f64 {
        ryser(&m.to_rows())
    }

    fn agrees(&self, other: &f64) -> bool {
        (self - other).abs() <= 1e-9 * self.abs().max(other.abs()).max(1e-300)
    }

    fn render(&self) -> String {
        format!("{self:e}")
    }
}

impl PermanentScalar for Rational {
    /// Rows are cleared of denominators so the inclusion–exclusion runs over
    /// big integers.
    fn permanent_of(m: &Matrix<Rational>) -> Rational {
        let mut scale = BigInt::one();
        let rows: Vec<Vec<BigInt>> = (0..m.rows())
            .map(|i| {
                let lcm = m.row(i).iter().fold(BigInt::one(), |acc, v| acc.lcm(v.denom()));
                scale *= &lcm;
                m.row(i).iter().map(|v| v.numer() * (&lcm / v.denom())).collect()
            })
            .collect();
        Rational::new(ryser(&rows), scale)
    }

    fn agrees(&self, other: &Rational) -> bool {
        self == other
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

/// Permanent by Ryser's inclusion–exclusion in Gray-code order; exact for
/// rational entries.
pub fn permanent<S: PermanentScalar>(m: &Matrix<S>) -> Result<S, ComplexError> {
    if !m.is_square() {
        return Err(ComplexError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    if m.rows() > PERMANENT_CAP {
        return Err(ComplexError::SizeCap { size: m.rows(), cap: PERMANENT_CAP });
    }
    Ok(S::permanent_of(m))
}

/// `G^{(r)}(A)`: each site of `A` replicated `r` times, entry
/// `((i,a),(j,b)) = G(i,j)`. Row `i*r + a` is copy `a` of site `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatedMatrix<S> {
    base: Matrix<S>,
    order: usize,
    matrix: Matrix<S>,
}

impl<S: Scalar> ReplicatedMatrix<S> {
    /// `base` is `G` already restricted to `A`.
    pub fn new(base: Matrix<S>, order: usize) -> Result<Self, ComplexError> {
        if order == 0 {
            return Err(ComplexError::ZeroOrder);
        }
        if !base.is_square() {
            return Err(ComplexError::NotSquare { rows: base.rows(), cols: base.cols() });
        }
        let size = base.rows() * order;
        let matrix = Matrix::from_fn(size, size, |a, b| base.get(a / order, b / order).clone());
        Ok(Self { base, order, matrix })
    }

    pub fn base(&self) -> &Matrix<S> {
        &self.base
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.matrix
    }

    /// Indices `A_r(i) = {i r, ..., (i+1) r - 1}` of the copies of site `i`.
    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        i * self.order..(i + 1) * self.order
    }

    /// Indices of the copies of every site in `sites`.
    pub fn blocks(&self, sites: &[usize]) -> Vec<usize> {
        sites.iter().flat_map(|&i| self.block(i)).collect()
    }
}

/// `E[∏ |Z_i|^{2r}]` as a sum over bijections from Z-legs to Z̄-legs: `r`
/// labelled copies of each, paired only across (complex Wick rule).
/// Dynamic programming over the set of used Z̄-legs.
pub fn bipartite_oracle<S: Scalar>(g: &Matrix<S>, r: usize) -> Result<S, ComplexError> {
    let legs = g.rows() * r;
    if legs > BIPARTITE_ORACLE_CAP {
        return Err(ComplexError::SizeCap { size: legs, cap: BIPARTITE_ORACLE_CAP });
    }
    let site = |leg: usize| leg / r;
    let mut dp = vec![S::zero(); 1 << legs];
    dp[0] = S::one();
    for mask in 0usize..(1 << legs) {
        if dp[mask].is_exact_zero() {
            continue;
        }
        let z = mask.count_ones() as usize;
        if z == legs {
            continue;
        }
        let current = dp[mask].clone();
        for zbar in (0..legs).filter(|&b| mask >> b & 1 == 0) {
            let next = mask | 1 << zbar;
            dp[next] = dp[next].clone() + current.clone() * g.get(site(z), site(zbar)).clone();
        }
    }
    Ok(dp[(1 << legs) - 1].clone())
}

/// Number of Z→Z̄ bijections collapsing to `q`: the sum over directed
/// counts `m` (row and column sums `r`, `m_ii = q_ii`, `m_ij + m_ji = q_ij`)
/// of `(r!)^{2n} / ∏ m_ij!`.
pub fn complex_multiplicity(q: &Multigraph, r: u32) -> Result<BigUint, ComplexError> {
    let n = q.size();
    q.check_degrees(&DegreeSequence::from_degrees(&vec![2 * r; n]))?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| q.get(i, j) > 0).collect();
    let numerator = num_traits::pow(factorial(r), 2 * n);
    let loop_denominator = (0..n).fold(BigUint::one(), |acc, i| acc * factorial(q.get(i, i)));
    let mut split = vec![0u32; pairs.len()];
    let mut total = BigUint::zero();
    loop {
        let mut row = vec![0u32; n];
        for i in 0..n {
            row[i] = q.get(i, i);
        }
        let mut denominator = loop_denominator.clone();
        for (&(i, j), &forward) in pairs.iter().zip(&split) {
            let backward = q.get(i, j) - forward;
            row[i] += forward;
            row[j] += backward;
            denominator *= factorial(forward) * factorial(backward);
        }
        if row.iter().all(|&s| s == r) {
            total += &numerator / denominator;
        }
        let mut k = pairs.len();
        loop {
            if k == 0 {
                return Ok(total);
            }
            k -= 1;
            split[k] += 1;
            if split[k] <= q.get(pairs[k].0, pairs[k].1) {
                break;
            }
            split[k] = 0;
        }
    }
}

/// Bijections Z→Z̄ enumerated one by one and binned by collapsed multigraph
/// (loops allowed). Exponential; for validating [`complex_multiplicity`].
pub fn binned_bipartite_counts(n: usize, r: usize) -> BTreeMap<Multigraph, BigUint> {
    let legs = n * r;
    let mut bins = BTreeMap::new();
    let mut iter = enumerate_pairings(&[legs, legs], true);
    while let Some(edges) = iter.next_edges() {
        let mut q = Multigraph::empty(n, true);
        for &(a, b) in edges {
            q.add(a.slot / r, b.slot / r, 1);
        }
        *bins.entry(q).or_insert_with(BigUint::zero) += 1u32;
    }
    bins
}

fn multigraph_path<S: Scalar>(g: &Matrix<S>, r: usize, connected_only: bool) -> Result<S, ComplexError> {
    let degrees = DegreeSequence::from_degrees(&vec![2 * r as u32; g.rows()]);
    let mut acc = S::zero();
    for q in enumerate_multigraphs(&degrees, true) {
        if connected_only && !q.is_connected() {
            continue;
        }
        let w = kernel_product(g, &q);
        if w.is_exact_zero() {
            continue;
        }
        acc = acc + S::from_biguint(&complex_multiplicity(&q, r as u32)?) * w;
    }
    Ok(acc)
}

/// The three evaluations of a complex moment.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMoment<S> {
    pub permanent: S,
    /// `None` when `r|A|` exceeds [`BIPARTITE_ORACLE_CAP`].
    pub oracle: Option<S>,
    pub multigraph: S,
}

impl<S: PermanentScalar> ComplexMoment<S> {
    pub fn value(&self) -> &S {
        &self.permanent
    }
}

/// `E[∏_{i∈A} |Z_i|^{2r}] = perm(G^{(r)}(A))`, cross-checked against the
/// bipartite oracle and the loop-allowing multigraph sum. `g` is `G_AA`.
pub fn complex_moment_matrix<S: PermanentScalar>(g: &Matrix<S>, r: usize) -> Result<ComplexMoment<S>, ComplexError> {
    let replicated = ReplicatedMatrix::new(g.clone(), r)?;
    let perm = permanent(replicated.matrix())?;
    let oracle = if g.rows() * r <= BIPARTITE_ORACLE_CAP { Some(bipartite_oracle(g, r)?) } else { None };
    let multigraph = multigraph_path(g, r, false)?;
    let oracle_ok = oracle.as_ref().is_none_or(|o| o.agrees(&perm));
    if !oracle_ok || !multigraph.agrees(&perm) {
        return Err(ComplexError::CrossCheck {
            permanent: perm.render(),
            oracle: oracle.as_ref().map(|o| o.render()),
            multigraph: multigraph.render(),
        });
    }
    Ok(ComplexMoment { permanent: perm, oracle, multigraph })
}

pub fn complex_moment<S: PermanentScalar>(cov: &CovarianceMatrix<S>, sites: &[String], r: usize) -> Result<ComplexMoment<S>, ComplexError> {
    complex_moment_matrix(&restrict(cov, sites)?, r)
}

/// Set function `B ↦ perm(G^{(r)}(B))` over subsets of `A`.
pub fn complex_moment_function<S: PermanentScalar>(g: &Matrix<S>, r: usize) -> Result<SetFunction<S>, ComplexError> {
    let replicated = ReplicatedMatrix::new(g.clone(), r)?;
    SetFunction::try_from_fn(g.rows(), |mask| {
        let idx = replicated.blocks(&mask_members(mask));
        permanent(&replicated.matrix().principal(&idx))
    })
}

/// `k^r_bos(A)`: connected-multigraph sum, checked against Möbius inversion
/// of the permanents over subsets.
pub fn complex_cumulant_matrix<S: PermanentScalar>(g: &Matrix<S>, r: usize) -> Result<S, ComplexError> {
    if r == 0 {
        return Err(ComplexError::ZeroOrder);
    }
    let connected = multigraph_path(g, r, true)?;
    let mobius = moments_to_cumulants(&complex_moment_function(g, r)?).full().clone();
    if !connected.agrees(&mobius) {
        return Err(ComplexError::CumulantCrossCheck { connected: connected.render(), mobius: mobius.render() });
    }
    Ok(mobius)
}

pub fn complex_cumulant<S: PermanentScalar>(cov: &CovarianceMatrix<S>, sites: &[String], r: usize) -> Result<S, ComplexError> {
    complex_cumulant_matrix(&restrict(cov, sites)?, r)
}

/// One multigraph of the complex multiplicity comparison.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ComplexMultiplicityRow {
    pub adjacency: Vec<Vec<u32>>,
    pub oracle: String,
    pub flow_formula: String,
    pub paper_delta_bar: String,
}

/// Compares binned bijection counts with the flow formula and with the
/// per-vertex product `δ̄(q)`, for every multigraph of `MG(A, 2r)`.
pub fn complex_multiplicity_report(n: usize, r: usize) -> Result<Vec<ComplexMultiplicityRow>, ComplexError> {
    let bins = binned_bipartite_counts(n, r);
    let degrees = DegreeSequence::from_degrees(&vec![2 * r as u32; n]);
    enumerate_multigraphs(&degrees, true)
        .map(|q| {
            Ok(ComplexMultiplicityRow {
                adjacency: q.to_rows(),
                oracle: bins.get(&q).cloned().unwrap_or_default().to_string(),
                flow_formula: complex_multiplicity(&q, r as u32)?.to_string(),
                paper_delta_bar: delta_bar(&q, r as u32)?.to_string(),
            })
        })
        .collect()
}
