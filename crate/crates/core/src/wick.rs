//! Moments and joint cumulants of Wick powers `:φ(x)^l:` of a centered
//! Gaussian field, truncated analytic functions of them, and the generic
//! multigraph / permutation cumulant machinery.
//!
//! Matrix-level functions take the covariance already restricted to the
//! requested sites, in request order. Wick-ordered products never pair a
//! point with another point of the same factor, so the diagonal of that
//! matrix is never read by the Wick functions.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde::Serialize;
use thiserror::Error;

use crate::covariance::CovarianceMatrix;
use crate::matrix::Matrix;
use crate::multigraph::{
    binned_pairing_counts, cycle_decomposition, enumerate_multigraphs, enumerate_partitions, pairing_multiplicity,
    DegreeSequence, Multigraph, MultigraphError, PARTITION_CAP,
};
use crate::scalar::{factorial, Rational, Scalar};

/// Cap on the total degree `Σ l_i` of the exhaustive pairing oracle.
pub const ORACLE_DEGREE_CAP: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WickError {
    #[error("unknown site label {0:?}")]
    UnknownSite(String),
    #[error("site {0:?} appears more than once; sites must be distinct")]
    CoincidentSites(String),
    #[error("total degree {total} exceeds the pairing-oracle cap {cap}")]
    OracleCap { total: u32, cap: u32 },
    #[error("{sites} sites but {given} degree entries or series")]
    LengthMismatch { sites: usize, given: usize },
    #[error("covariance restriction is {rows}x{cols}, expected {expected}x{expected}")]
    MatrixSize { rows: usize, cols: usize, expected: usize },
    #[error("analytic series needs at least one coefficient")]
    EmptySeries,
    #[error("series coefficient {index} is not finite")]
    NonFiniteCoefficient { index: usize },
    #[error("weight is not multiplicative over connected components (multigraph {0})")]
    NonMultiplicative(String),
    #[error("variance must be positive, got {0}")]
    InvalidVariance(f64),
    #[error(transparent)]
    Multigraph(#[from] MultigraphError),
}

/// Restriction of `cov` to `sites` (in order), rejecting unknown and
/// repeated labels.
pub fn restrict<S: Scalar>(cov: &CovarianceMatrix<S>, sites: &[String]) -> Result<Matrix<S>, WickError> {
    let mut idx = Vec::with_capacity(sites.len());
    for (k, s) in sites.iter().enumerate() {
        if sites[..k].contains(s) {
            return Err(WickError::CoincidentSites(s.clone()));
        }
        idx.push(cov.index_of(s).ok_or_else(|| WickError::UnknownSite(s.clone()))?);
    }
    Ok(cov.matrix().principal(&idx))
}

fn check_size<S: Clone>(g: &Matrix<S>, n: usize) -> Result<(), WickError> {
    if g.rows() != n || g.cols() != n {
        return Err(WickError::MatrixSize { rows: g.rows(), cols: g.cols(), expected: n });
    }
    Ok(())
}

/// `∏_{i≤j} g_ij^{q_ij}`.
pub fn kernel_product<S: Scalar>(g: &Matrix<S>, q: &Multigraph) -> S {
    let mut acc = S::one();
    for (i, j, m) in q.edges() {
        acc = acc * g.get(i, j).powu(m);
    }
    acc
}

/// Exhaustive pairing expansion collapsed to a polynomial in the entries
/// `g_ij`: one `(multigraph, number of pairings)` term per monomial.
/// Building it is the expensive part; evaluation is cheap and can be reused
/// across covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingPolynomial {
    degrees: Vec<u32>,
    terms: Vec<(Multigraph, BigUint)>,
}

impl PairingPolynomial {
    pub fn new(degrees: &[u32]) -> Result<Self, WickError> {
        let total: u32 = degrees.iter().sum();
        if total > ORACLE_DEGREE_CAP {
            return Err(WickError::OracleCap { total, cap: ORACLE_DEGREE_CAP });
        }
        let terms = binned_pairing_counts(degrees).into_iter().collect();
        Ok(Self { degrees: degrees.to_vec(), terms })
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn terms(&self) -> &[(Multigraph, BigUint)] {
        &self.terms
    }

    pub fn evaluate<S: Scalar>(&self, g: &Matrix<S>) -> Result<S, WickError> {
        check_size(g, self.degrees.len())?;
        Ok(self.terms.iter().fold(S::zero(), |acc, (q, count)| acc + S::from_biguint(count) * kernel_product(g, q)))
    }
}

/// Ground-truth moment `E[∏ :φ(x_i)^{l_i}:]`: the sum over every complete
/// pairing of the labelled points with no edge inside a factor.
pub fn feynman_moment_oracle_matrix<S: Scalar>(g: &Matrix<S>, degrees: &[u32]) -> Result<S, WickError> {
    check_size(g, degrees.len())?;
    PairingPolynomial::new(degrees)?.evaluate(g)
}

pub fn feynman_moment_oracle<S: Scalar>(cov: &CovarianceMatrix<S>, request: &DegreeSequence) -> Result<S, WickError> {
    feynman_moment_oracle_matrix(&restrict(cov, request.labels())?, request.degrees())
}

/// Moment of a product of Wick products `∏_k :∏_{i ∈ groups[k]} φ(x_i):`,
/// by exhaustive pairing with no edge inside a group. `groups` hold indices
/// into `g` and may repeat sites across groups.
pub fn wick_product_oracle<S: Scalar>(g: &Matrix<S>, groups: &[Vec<usize>]) -> Result<S, WickError> {
    let total: usize = groups.iter().map(Vec::len).sum();
    if total as u32 > ORACLE_DEGREE_CAP {
        return Err(WickError::OracleCap { total: total as u32, cap: ORACLE_DEGREE_CAP });
    }
    if let Some(&bad) = groups.iter().flatten().find(|&&i| i >= g.rows()) {
        return Err(WickError::UnknownSite(bad.to_string()));
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut iter = crate::multigraph::enumerate_pairings(&sizes, true);
    let mut acc = S::zero();
    while let Some(edges) = iter.next_edges() {
        let term = edges.iter().fold(S::one(), |t, (a, b)| t * g.get(groups[a.group][a.slot], groups[b.group][b.slot]).clone());
        acc = acc + term;
    }
    Ok(acc)
}

/// One term of a multigraph expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct WickTerm<S> {
    pub multigraph: Multigraph,
    pub multiplicity: BigUint,
    pub kernel_product: S,
}

impl<S: Scalar> WickTerm<S> {
    pub fn value(&self) -> S {
        S::from_biguint(&self.multiplicity) * self.kernel_product.clone()
    }
}

/// Terms of the loop-free multigraph expansion, optionally connected only.
pub fn wick_power_terms<S: Scalar>(g: &Matrix<S>, degrees: &[u32], connected_only: bool) -> Result<Vec<WickTerm<S>>, WickError> {
    check_size(g, degrees.len())?;
    let seq = DegreeSequence::from_degrees(degrees);
    let mut out = Vec::new();
    for q in enumerate_multigraphs(&seq, false) {
        if connected_only && !q.is_connected() {
            continue;
        }
        let multiplicity = pairing_multiplicity(&q, &seq)?;
        out.push(WickTerm { kernel_product: kernel_product(g, &q), multigraph: q, multiplicity });
    }
    Ok(out)
}

fn multigraph_sum<S: Scalar>(g: &Matrix<S>, degrees: &[u32], connected_only: bool) -> Result<S, WickError> {
    check_size(g, degrees.len())?;
    let seq = DegreeSequence::from_degrees(degrees);
    let mut acc = S::zero();
    for q in enumerate_multigraphs(&seq, false) {
        if connected_only && !q.is_connected() {
            continue;
        }
        let w = kernel_product(g, &q);
        if w.is_exact_zero() {
            continue;
        }
        acc = acc + S::from_biguint(&pairing_multiplicity(&q, &seq)?) * w;
    }
    Ok(acc)
}

/// `Σ_{q ∈ MG_0} mult(q) ∏ g^q` over loop-free multigraphs with the given degrees.
pub fn wick_power_moment_matrix<S: Scalar>(g: &Matrix<S>, degrees: &[u32]) -> Result<S, WickError> {
    multigraph_sum(g, degrees, false)
}

/// Same sum restricted to connected multigraphs: the joint cumulant.
pub fn wick_power_cumulant_matrix<S: Scalar>(g: &Matrix<S>, degrees: &[u32]) -> Result<S, WickError> {
    multigraph_sum(g, degrees, true)
}

pub fn wick_power_moment<S: Scalar>(cov: &CovarianceMatrix<S>, request: &DegreeSequence) -> Result<S, WickError> {
    wick_power_moment_matrix(&restrict(cov, request.labels())?, request.degrees())
}

pub fn wick_power_cumulant<S: Scalar>(cov: &CovarianceMatrix<S>, request: &DegreeSequence) -> Result<S, WickError> {
    wick_power_cumulant_matrix(&restrict(cov, request.labels())?, request.degrees())
}

/// Truncated power series `f(x) = Σ_{n≤D} a_n x^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSeries<S> {
    coefficients: Vec<S>,
}

impl<S: Scalar> AnalyticSeries<S> {
    pub fn new(coefficients: Vec<S>) -> Result<Self, WickError> {
        if coefficients.is_empty() {
            return Err(WickError::EmptySeries);
        }
        if let Some(index) = coefficients.iter().position(|c| !c.to_f64().is_finite()) {
            return Err(WickError::NonFiniteCoefficient { index });
        }
        Ok(Self { coefficients })
    }

    /// `a_n = α^n / n!` for `n ≤ D`.
    pub fn exponential(alpha: S, truncation: u32) -> Self {
        let coefficients = (0..=truncation)
            .map(|n| alpha.powu(n) * S::from_rational(&Rational::new(1.into(), factorial(n).into())))
            .collect();
        Self { coefficients }
    }

    /// `f(x) = x^n`.
    pub fn monomial(n: u32) -> Self {
        let mut coefficients = vec![S::zero(); n as usize + 1];
        coefficients[n as usize] = S::one();
        Self { coefficients }
    }

    pub fn coefficients(&self) -> &[S] {
        &self.coefficients
    }

    pub fn truncation(&self) -> u32 {
        (self.coefficients.len() - 1) as u32
    }
}

/// Value of a truncated series expansion with its last-shell diagnostic: the
/// contribution of degree tuples whose largest entry equals the largest
/// truncation degree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesValue<S> {
    pub value: S,
    pub last_shell: S,
    pub last_shell_magnitude: f64,
}

fn series_sum<S: Scalar>(g: &Matrix<S>, series: &[AnalyticSeries<S>], connected_only: bool) -> Result<SeriesValue<S>, WickError> {
    let n = series.len();
    check_size(g, n)?;
    let top = series.iter().map(|s| s.truncation()).max().unwrap_or(0);
    let mut value = S::zero();
    let mut last_shell = S::zero();
    let mut tuple = vec![0u32; n];
    loop {
        let coeff = tuple.iter().zip(series).fold(S::one(), |acc, (&d, s)| acc * s.coefficients[d as usize].clone());
        if !coeff.is_exact_zero() && tuple.iter().sum::<u32>() % 2 == 0 {
            let term = coeff * multigraph_sum(g, &tuple, connected_only)?;
            if n > 0 && tuple.iter().copied().max() == Some(top) {
                last_shell = last_shell + term.clone();
            }
            value = value + term;
        }
        // Odometer over 0..=D_i per site.
        let mut k = n;
        loop {
            if k == 0 {
                let last_shell_magnitude = last_shell.to_f64().abs();
                return Ok(SeriesValue { value, last_shell, last_shell_magnitude });
            }
            k -= 1;
            tuple[k] += 1;
            if tuple[k] <= series[k].truncation() {
                break;
            }
            tuple[k] = 0;
        }
    }
}

/// `E[∏ :f_i(φ(x_i)):] = Σ_{n ≤ D} ∏ a_{n_i} E[∏ :φ(x_i)^{n_i}:]`.
pub fn analytic_moment_matrix<S: Scalar>(g: &Matrix<S>, series: &[AnalyticSeries<S>]) -> Result<SeriesValue<S>, WickError> {
    series_sum(g, series, false)
}

/// Joint cumulant of the `:f_i(φ(x_i)):`, by multilinearity over connected multigraphs.
pub fn analytic_cumulant_matrix<S: Scalar>(g: &Matrix<S>, series: &[AnalyticSeries<S>]) -> Result<SeriesValue<S>, WickError> {
    series_sum(g, series, true)
}

pub fn analytic_moment<S: Scalar>(cov: &CovarianceMatrix<S>, sites: &[String], series: &[AnalyticSeries<S>]) -> Result<SeriesValue<S>, WickError> {
    if sites.len() != series.len() {
        return Err(WickError::LengthMismatch { sites: sites.len(), given: series.len() });
    }
    analytic_moment_matrix(&restrict(cov, sites)?, series)
}

pub fn analytic_cumulant<S: Scalar>(cov: &CovarianceMatrix<S>, sites: &[String], series: &[AnalyticSeries<S>]) -> Result<SeriesValue<S>, WickError> {
    if sites.len() != series.len() {
        return Err(WickError::LengthMismatch { sites: sites.len(), given: series.len() });
    }
    analytic_cumulant_matrix(&restrict(cov, sites)?, series)
}

/// Function on the nonempty subsets of a ground set of size `n ≤ PARTITION_CAP`,
/// indexed by bitmask (bit `i` = element `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct SetFunction<S> {
    n: usize,
    values: Vec<S>,
}

impl<S: Scalar> SetFunction<S> {
    pub fn from_fn(n: usize, mut f: impl FnMut(u32) -> S) -> Result<Self, WickError> {
        if n > PARTITION_CAP {
            return Err(MultigraphError::PartitionCap { size: n, cap: PARTITION_CAP }.into());
        }
        let values = (0..1u32 << n).map(|mask| if mask == 0 { S::zero() } else { f(mask) }).collect();
        Ok(Self { n, values })
    }

    pub fn try_from_fn<E>(n: usize, mut f: impl FnMut(u32) -> Result<S, E>) -> Result<Self, E>
    where
        E: From<WickError>,
    {
        if n > PARTITION_CAP {
            return Err(WickError::from(MultigraphError::PartitionCap { size: n, cap: PARTITION_CAP }).into());
        }
        let mut values = Vec::with_capacity(1 << n);
        values.push(S::zero());
        for mask in 1..1u32 << n {
            values.push(f(mask)?);
        }
        Ok(Self { n, values })
    }

    pub fn ground_size(&self) -> usize {
        self.n
    }

    pub fn full_mask(&self) -> u32 {
        ((1u64 << self.n) - 1) as u32
    }

    /// Value at a nonempty subset.
    pub fn get(&self, mask: u32) -> &S {
        assert!(mask != 0, "set functions are defined on nonempty subsets");
        &self.values[mask as usize]
    }

    pub fn full(&self) -> &S {
        self.get(self.full_mask())
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> SetFunction<T> {
        SetFunction { n: self.n, values: self.values.iter().map(f).collect() }
    }
}

/// Members of `mask` in increasing order.
pub fn mask_members(mask: u32) -> Vec<usize> {
    (0..32).filter(|&i| mask >> i & 1 == 1).collect()
}

/// Proper nonempty submasks `T ⊊ S` with `min S ∈ T`, as `(T, S \ T)`.
fn anchored_splits(mask: u32) -> impl Iterator<Item = (u32, u32)> {
    let low = mask & mask.wrapping_neg();
    let rest = mask ^ low;
    // Enumerate submasks `u` of `rest` other than `rest` itself.
    let mut u = rest;
    let mut done = rest == 0;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        u = (u.wrapping_sub(1)) & rest;
        let t = u | low;
        if u == 0 {
            done = true;
        }
        Some((t, mask ^ t))
    })
    .filter(move |&(t, _)| t != mask)
}

/// Möbius inversion on the partition lattice, by the recursion
/// `k(S) = F(S) - Σ_{T ⊊ S, min S ∈ T} k(T) F(S \ T)`.
pub fn moments_to_cumulants<S: Scalar>(moments: &SetFunction<S>) -> SetFunction<S> {
    let mut k = moments.clone();
    for mask in 1..=moments.full_mask() {
        let mut acc = moments.values[mask as usize].clone();
        for (t, rest) in anchored_splits(mask) {
            acc = acc - k.values[t as usize].clone() * moments.values[rest as usize].clone();
        }
        k.values[mask as usize] = acc;
    }
    k
}

/// Inverse of [`moments_to_cumulants`]: `F(S) = Σ_{T ⊆ S, min S ∈ T} k(T) F(S \ T)`.
pub fn cumulants_to_moments<S: Scalar>(cumulants: &SetFunction<S>) -> SetFunction<S> {
    let mut f = cumulants.clone();
    for mask in 1..=cumulants.full_mask() {
        let mut acc = cumulants.values[mask as usize].clone();
        for (t, rest) in anchored_splits(mask) {
            acc = acc + cumulants.values[t as usize].clone() * f.values[rest as usize].clone();
        }
        f.values[mask as usize] = acc;
    }
    f
}

/// Explicit partition formula `k(S) = Σ_π (|π|-1)! (-1)^{|π|-1} ∏_{B∈π} F(B)`.
/// Slower than the recursion; kept as an independent check.
pub fn moments_to_cumulants_by_partitions<S: Scalar>(moments: &SetFunction<S>) -> SetFunction<S> {
    let mut k = moments.clone();
    for mask in 1..=moments.full_mask() {
        let members = mask_members(mask);
        let mut acc = S::zero();
        for p in enumerate_partitions(&members).expect("ground set within cap") {
            let blocks = p.blocks.len() as u32;
            let mut term = S::from_biguint(&factorial(blocks - 1));
            if blocks.is_multiple_of(2) {
                term = -term;
            }
            for block in &p.blocks {
                let b: u32 = block.iter().map(|&i| 1u32 << i).sum();
                term = term * moments.values[b as usize].clone();
            }
            acc = acc + term;
        }
        k.values[mask as usize] = acc;
    }
    k
}

/// Set function `B ↦ E[∏_{i∈B} :φ(x_i)^{l_i}:]` over subsets of the request.
pub fn wick_moment_function<S: Scalar>(g: &Matrix<S>, degrees: &[u32]) -> Result<SetFunction<S>, WickError> {
    check_size(g, degrees.len())?;
    SetFunction::try_from_fn(degrees.len(), |mask| {
        let idx = mask_members(mask);
        let sub: Vec<u32> = idx.iter().map(|&i| degrees[i]).collect();
        wick_power_moment_matrix(&g.principal(&idx), &sub)
    })
}

/// Result of a generic cumulant computation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericCumulant<S> {
    /// Σ over connected objects on the full set.
    pub connected_sum: S,
    /// Full sums `F(B)` over every subset `B`.
    pub moments: SetFunction<S>,
}

/// Generic cumulant of `F_g(B) = Σ_{q ∈ MG(B, l)} f(q) ∏ g^q`: the connected
/// sum `Σ_{q connected} f(q) ∏ g^q` on the full set.
///
/// `f` must be multiplicative over connected components; this is checked on
/// every disconnected multigraph of the full set, where the relabelled
/// components are fed back to `f`.
pub fn generic_cumulant_function<S: Scalar>(
    g: &Matrix<S>,
    degrees: &[u32],
    allow_loops: bool,
    weight: impl Fn(&Multigraph) -> S,
) -> Result<GenericCumulant<S>, WickError> {
    check_size(g, degrees.len())?;
    let full = degrees.len();
    let mut connected_sum = S::zero();
    for q in enumerate_multigraphs(&DegreeSequence::from_degrees(degrees), allow_loops) {
        let w = weight(&q);
        if q.is_connected() {
            connected_sum = connected_sum + w * kernel_product(g, &q);
        } else {
            let product = q.connected_components().iter().fold(S::one(), |acc, (_, c)| acc * weight(c));
            if product != w {
                return Err(WickError::NonMultiplicative(format!("{q:?}")));
            }
        }
    }
    let moments = SetFunction::try_from_fn(full, |mask| -> Result<S, WickError> {
        let idx = mask_members(mask);
        let sub: Vec<u32> = idx.iter().map(|&i| degrees[i]).collect();
        let gs = g.principal(&idx);
        let mut acc = S::zero();
        for q in enumerate_multigraphs(&DegreeSequence::from_degrees(&sub), allow_loops) {
            acc = acc + weight(&q) * kernel_product(&gs, &q);
        }
        Ok(acc)
    })?;
    Ok(GenericCumulant { connected_sum, moments })
}

/// Number of permutations lifting a degree-2 multigraph: two orientations
/// per cycle of length at least 3.
pub fn lift_count(q: &Multigraph) -> u32 {
    1 << q.connected_components().iter().filter(|(v, _)| v.len() >= 3).count()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    heap_permute(&mut p, n, &mut out);
    out.sort();
    out
}

fn heap_permute(p: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(p.clone());
        return;
    }
    for i in 0..k - 1 {
        heap_permute(p, k - 1, out);
        if k.is_multiple_of(2) {
            p.swap(i, k - 1);
        } else {
            p.swap(0, k - 1);
        }
    }
    heap_permute(p, k - 1, out);
}

/// Largest ground set for the permutation variant (enumerates `n!` permutations).
pub const PERMUTATION_CAP: usize = 8;

/// Permutation variant: `F(B) = Σ_{σ ∈ S_B} f(σ) ∏ g(i, σ(i))` with cumulant
/// `Σ_{σ cyclic} f(σ) ∏ g(i, σ(i))`. `f` receives `σ` in one-line notation on
/// local indices and must be multiplicative over cycles.
pub fn generic_cumulant_permutations<S: Scalar>(
    g: &Matrix<S>,
    weight: impl Fn(&[usize]) -> S,
) -> Result<GenericCumulant<S>, WickError> {
    let n = g.rows();
    check_size(g, n)?;
    if n > PERMUTATION_CAP {
        return Err(MultigraphError::PartitionCap { size: n, cap: PERMUTATION_CAP }.into());
    }
    let product = |gs: &Matrix<S>, sigma: &[usize]| sigma.iter().enumerate().fold(S::one(), |acc, (i, &s)| acc * gs.get(i, s).clone());
    let mut connected_sum = S::zero();
    for sigma in permutations(n) {
        let cycles = cycle_decomposition(&sigma)?;
        let w = weight(&sigma);
        if cycles.len() == 1 {
            connected_sum = connected_sum + w * product(g, &sigma);
        } else {
            let mut acc = S::one();
            for cycle in &cycles {
                let mut sorted = cycle.clone();
                sorted.sort_unstable();
                let local: Vec<usize> = sorted.iter().map(|&i| sorted.binary_search(&sigma[i]).expect("cycle is closed")).collect();
                acc = acc * weight(&local);
            }
            if acc != w {
                return Err(WickError::NonMultiplicative(format!("{sigma:?}")));
            }
        }
    }
    let moments = SetFunction::from_fn(n, |mask| {
        let idx = mask_members(mask);
        let gs = g.principal(&idx);
        permutations(idx.len()).iter().fold(S::zero(), |acc, sigma| acc + weight(sigma) * product(&gs, sigma))
    })?;
    Ok(GenericCumulant { connected_sum, moments })
}

/// Sign `(-1)^{n - #cycles}` of a permutation.
pub fn permutation_sign(sigma: &[usize]) -> i64 {
    let cycles = cycle_decomposition(sigma).map(|c| c.len()).unwrap_or(0);
    if (sigma.len() - cycles).is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// `σⁿ He_n(x/σ)` with probabilists' Hermite polynomials, i.e. the Wick
/// power `:x^n:` for a centered Gaussian of variance `σ²`.
pub fn hermite_wick_value(x: f64, n: u32, variance: f64) -> Result<f64, WickError> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(WickError::InvalidVariance(variance));
    }
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return Ok(1.0);
    }
    for k in 1..n {
        let next = x * cur - k as f64 * variance * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Serializable term for verbose breakdowns.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TermReport {
    pub multigraph: Vec<Vec<u32>>,
    pub multiplicity: String,
    pub kernel_product: String,
}

pub fn term_reports<S: Scalar>(terms: &[WickTerm<S>], fmt: impl Fn(&S) -> String) -> Vec<TermReport> {
    terms
        .iter()
        .map(|t| TermReport {
            multigraph: t.multigraph.to_rows(),
            multiplicity: t.multiplicity.to_string(),
            kernel_product: fmt(&t.kernel_product),
        })
        .collect()
}

/// Monomial-count polynomials for every degree tuple, shared by repeated
/// oracle evaluations.
#[derive(Debug, Default)]
pub struct PairingPolynomialCache {
    cache: BTreeMap<Vec<u32>, PairingPolynomial>,
}

impl PairingPolynomialCache {
    pub fn get(&mut self, degrees: &[u32]) -> Result<&PairingPolynomial, WickError> {
        if !self.cache.contains_key(degrees) {
            self.cache.insert(degrees.to_vec(), PairingPolynomial::new(degrees)?);
        }
        Ok(&self.cache[degrees])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rational;
    use num_traits::Zero;

    fn sym(rows: &[&[i64]], den: i64) -> Matrix<Rational> {
        Matrix::from_rows(rows.iter().map(|r| r.iter().map(|&v| rational(v, den)).collect()).collect()).unwrap()
    }

    fn g4() -> Matrix<Rational> {
        sym(&[&[10, 3, 2, 1], &[3, 9, 4, 2], &[2, 4, 11, 5], &[1, 2, 5, 12]], 7)
    }

    #[test]
    fn oracle_examples() {
        let g = g4();
        let g12 = g.get(0, 1).clone();
        let sub = g.principal(&[0, 1]);
        assert_eq!(feynman_moment_oracle_matrix(&sub, &[1, 1]).unwrap(), g12);
        assert_eq!(feynman_moment_oracle_matrix(&sub, &[2, 2]).unwrap(), rational(2, 1) * &g12 * &g12);
        assert_eq!(feynman_moment_oracle_matrix(&sub, &[3, 1]).unwrap(), Rational::zero());
        assert_eq!(feynman_moment_oracle_matrix(&sub, &[2, 1]).unwrap(), Rational::zero());
        assert!(matches!(feynman_moment_oracle_matrix(&g, &[5, 5, 4, 4]), Err(WickError::OracleCap { total: 18, .. })));
    }

    #[test]
    fn moment_examples() {
        let g = g4();
        let e = |i: usize, j: usize| g.get(i, j).clone();
        let tri = g.principal(&[0, 1, 2]);
        assert_eq!(wick_power_moment_matrix(&tri, &[2, 2, 2]).unwrap(), rational(8, 1) * e(0, 1) * e(0, 2) * e(1, 2));
        let isserlis = e(0, 1) * e(2, 3) + e(0, 2) * e(1, 3) + e(0, 3) * e(1, 2);
        assert_eq!(wick_power_moment_matrix(&g, &[1, 1, 1, 1]).unwrap(), isserlis);
        assert_eq!(wick_power_cumulant_matrix(&tri, &[2, 2, 2]).unwrap(), rational(8, 1) * e(0, 1) * e(0, 2) * e(1, 2));
        for l in 1..6 {
            assert!(wick_power_moment_matrix(&g.principal(&[2]), &[l]).unwrap().is_zero());
        }
        let decoupled = sym(&[&[1, 0], &[0, 1]], 1);
        assert!(wick_power_cumulant_matrix(&decoupled, &[2, 2]).unwrap().is_zero());
    }

    #[test]
    fn multigraph_path_matches_oracle() {
        let g = g4();
        for degrees in [vec![2, 2, 2, 2], vec![3, 1, 2, 2], vec![4, 2, 1, 1], vec![3, 3, 3, 1], vec![0, 2, 2, 0]] {
            let oracle = feynman_moment_oracle_matrix(&g, &degrees).unwrap();
            assert_eq!(wick_power_moment_matrix(&g, &degrees).unwrap(), oracle, "{degrees:?}");
        }
    }

    #[test]
    fn connected_sum_is_mobius_of_moments() {
        let g = g4();
        for degrees in [vec![2, 2, 2, 2], vec![3, 1, 2, 2], vec![1, 1, 1, 1], vec![2, 1, 1, 2]] {
            let f = wick_moment_function(&g, &degrees).unwrap();
            let k = moments_to_cumulants(&f);
            assert_eq!(k.full(), &wick_power_cumulant_matrix(&g, &degrees).unwrap(), "{degrees:?}");
        }
    }

    #[test]
    fn mobius_small_cases() {
        let f = SetFunction::from_fn(3, |m| rational(m as i64 * m as i64 + 1, 3)).unwrap();
        let k = moments_to_cumulants(&f);
        let v = |m: u32| f.get(m).clone();
        assert_eq!(k.get(0b011), &(v(0b011) - v(0b001) * v(0b010)));
        let expected = v(7) - v(1) * v(6) - v(2) * v(5) - v(4) * v(3) + rational(2, 1) * v(1) * v(2) * v(4);
        assert_eq!(k.full(), &expected);
        assert_eq!(moments_to_cumulants_by_partitions(&f), k);
        assert_eq!(cumulants_to_moments(&k), f);
    }

    #[test]
    fn exponential_series_converges() {
        let g = Matrix::from_rows(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let series = vec![AnalyticSeries::exponential(1.0, 12), AnalyticSeries::exponential(1.0, 12)];
        let m = analytic_moment_matrix(&g, &series).unwrap();
        assert!((m.value - 0.5f64.exp()).abs() < 1e-6);
        // Last shell is the n = 12 term (G_12)^12 / 12!.
        assert!((m.last_shell_magnitude - 0.5f64.powi(12) / 479001600.0).abs() < 1e-18);
        let k = analytic_cumulant_matrix(&g, &series).unwrap();
        assert!((k.value - (0.5f64.exp() - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn simple_series() {
        let g = g4();
        let sub = g.principal(&[0, 1]);
        let x = AnalyticSeries::<Rational>::monomial(1);
        assert_eq!(analytic_moment_matrix(&sub, &[x.clone(), x.clone()]).unwrap().value, g.get(0, 1).clone());
        let odd = AnalyticSeries::new(vec![rational(0, 1), rational(3, 2), rational(0, 1), rational(-1, 5)]).unwrap();
        assert!(analytic_moment_matrix(&g.principal(&[3]), &[odd]).unwrap().value.is_zero());
        let cubic = AnalyticSeries::new(vec![rational(1, 1), rational(1, 2), rational(2, 3), rational(1, 4)]).unwrap();
        let two = [cubic.clone(), cubic.clone()];
        let m = analytic_moment_matrix(&sub, &two).unwrap().value;
        let k = analytic_cumulant_matrix(&sub, &two).unwrap().value;
        // With the constant term removed moment and cumulant coincide at N = 2.
        assert_eq!(k, m - rational(1, 1));
        let chain = sym(&[&[2, 1, 0], &[1, 2, 0], &[0, 0, 2]], 1);
        let three = [cubic.clone(), cubic.clone(), cubic];
        assert!(analytic_cumulant_matrix(&chain, &three).unwrap().value.is_zero());
    }

    #[test]
    fn generic_cumulant_matches_mobius_and_cycles() {
        let g = g4();
        let ones = |_: &Multigraph| rational(1, 1);
        let r = generic_cumulant_function(&g, &[2, 2, 2, 2], true, ones).unwrap();
        assert_eq!(moments_to_cumulants(&r.moments).full(), &r.connected_sum);

        let perm = generic_cumulant_permutations(&g, |_| rational(1, 1)).unwrap();
        assert_eq!(moments_to_cumulants(&perm.moments).full(), &perm.connected_sum);
        // Multigraph sum weighted by lift counts equals the permutation sum.
        let lifted = generic_cumulant_function(&g, &[2, 2, 2, 2], true, |q| rational(lift_count(q) as i64, 1)).unwrap();
        assert_eq!(lifted.moments, perm.moments);
        assert_eq!(lifted.connected_sum, perm.connected_sum);

        let single = generic_cumulant_permutations(&g.principal(&[1]), |_| rational(1, 1)).unwrap();
        assert_eq!(&single.connected_sum, single.moments.full());
    }

    #[test]
    fn signed_permutation_sum_gives_determinant_cumulants() {
        let g = g4();
        let det = generic_cumulant_permutations(&g, |s| rational(permutation_sign(s), 1)).unwrap();
        let minors = SetFunction::from_fn(4, |m| g.principal(&mask_members(m)).determinant().unwrap()).unwrap();
        assert_eq!(det.moments, minors);
        assert_eq!(moments_to_cumulants(&minors).full(), &det.connected_sum);
    }

    #[test]
    fn non_multiplicative_weight_rejected() {
        let g = g4();
        let bad = |q: &Multigraph| rational(q.edges().count() as i64 + 1, 1);
        assert!(matches!(generic_cumulant_function(&g, &[2, 2, 2, 2], true, bad), Err(WickError::NonMultiplicative(_))));
    }

    #[test]
    fn squared_wick_product_is_permanent() {
        let g = g4();
        let sites = vec![0, 1, 3];
        let value = wick_product_oracle(&g, &[sites.clone(), sites.clone()]).unwrap();
        let sub = g.principal(&sites);
        let perm = generic_cumulant_permutations(&sub, |_| rational(1, 1)).unwrap();
        assert_eq!(&value, perm.moments.full());
        // Degree-one groups reduce to the plain oracle.
        let groups: Vec<Vec<usize>> = (0..4).map(|i| vec![i]).collect();
        assert_eq!(wick_product_oracle(&g, &groups).unwrap(), feynman_moment_oracle_matrix(&g, &[1, 1, 1, 1]).unwrap());
    }

    #[test]
    fn hermite_values() {
        let (x, v) = (1.7, 0.6);
        assert_eq!(hermite_wick_value(x, 1, v).unwrap(), x);
        assert!((hermite_wick_value(x, 2, v).unwrap() - (x * x - v)).abs() < 1e-15);
        assert!((hermite_wick_value(x, 3, v).unwrap() - (x * x * x - 3.0 * v * x)).abs() < 1e-14);
        assert!(matches!(hermite_wick_value(x, 2, 0.0), Err(WickError::InvalidVariance(_))));
    }

    #[test]
    fn label_resolution() {
        let cov = crate::covariance::validate_spd(g4()).unwrap();
        let req = DegreeSequence::new(vec!["0".into(), "2".into()], vec![2, 2]).unwrap();
        assert_eq!(wick_power_moment(&cov, &req).unwrap(), rational(2, 1) * g4().get(0, 2) * g4().get(0, 2));
        let unknown = DegreeSequence::new(vec!["0".into(), "9".into()], vec![1, 1]).unwrap();
        assert!(matches!(wick_power_moment(&cov, &unknown), Err(WickError::UnknownSite(_))));
        let dup = DegreeSequence::new(vec!["1".into(), "1".into()], vec![1, 1]).unwrap();
        assert!(matches!(feynman_moment_oracle(&cov, &dup), Err(WickError::CoincidentSites(_))));
    }
}
