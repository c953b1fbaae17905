//! Degree-constrained multigraphs, complete pairings, set partitions and the
//! permutation/multigraph correspondence.
//!
//! A [`Multigraph`] is the symmetric edge-count matrix `q` that indexes every
//! expansion in the crate. A loop `q_ii` consumes two half-edges of vertex `i`,
//! so `deg(i) = Σ_{j≠i} q_ij + 2 q_ii`.

mod pairing;
mod partition;
mod permutation;

pub use pairing::{enumerate_pairings, PairingDiagram, PairingIter, Point};
pub use partition::{bell_number, enumerate_partitions, PartitionIter, SetPartition, PARTITION_CAP};
pub use permutation::{cycle_decomposition, multigraph_to_permutations, permutation_to_multigraph};

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::scalar::{binomial, factorial, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MultigraphError {
    #[error("degree sequence has {degrees} degrees for {labels} labels")]
    LengthMismatch { labels: usize, degrees: usize },
    #[error("vertex {vertex} has degree {actual} in the multigraph but {expected} was required")]
    DegreeMismatch { vertex: usize, expected: u32, actual: u32 },
    #[error("multigraph has {actual} vertices, degree sequence has {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("ground set of size {size} exceeds the partition cap {cap}")]
    PartitionCap { size: usize, cap: usize },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("multigraph has a loop at vertex {0} but loops are not allowed")]
    LoopNotAllowed(usize),
    #[error("edge ({0}, {1}) out of range")]
    OutOfRange(usize, usize),
}

/// Per-vertex degree budgets `(l_i)` with their site labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeSequence {
    labels: Vec<String>,
    degrees: Vec<u32>,
}

impl DegreeSequence {
    pub fn new(labels: Vec<String>, degrees: Vec<u32>) -> Result<Self, MultigraphError> {
        if labels.len() != degrees.len() {
            return Err(MultigraphError::LengthMismatch { labels: labels.len(), degrees: degrees.len() });
        }
        Ok(Self { labels, degrees })
    }

    /// Degrees labelled `"0"`, `"1"`, ...
    pub fn from_degrees(degrees: &[u32]) -> Self {
        Self { labels: (0..degrees.len()).map(|i| i.to_string()).collect(), degrees: degrees.to_vec() }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn total(&self) -> u32 {
        self.degrees.iter().sum()
    }
}

/// Symmetric nonnegative-integer adjacency matrix.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Multigraph {
    n: usize,
    allow_loops: bool,
    adj: Vec<u32>,
}

impl fmt::Debug for Multigraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Multigraph(n={}", self.n)?;
        for (i, j, m) in self.edges() {
            write!(f, ", q{i}{j}={m}")?;
        }
        write!(f, ")")
    }
}

impl Multigraph {
    pub fn empty(n: usize, allow_loops: bool) -> Self {
        Self { n, allow_loops, adj: vec![0; n * n] }
    }

    /// Builds from `(i, j, multiplicity)` triples; repeated pairs accumulate.
    pub fn from_edges(n: usize, allow_loops: bool, edges: &[(usize, usize, u32)]) -> Result<Self, MultigraphError> {
        let mut g = Self::empty(n, allow_loops);
        for &(i, j, m) in edges {
            if i >= n || j >= n {
                return Err(MultigraphError::OutOfRange(i, j));
            }
            if i == j && !allow_loops && m > 0 {
                return Err(MultigraphError::LoopNotAllowed(i));
            }
            g.add(i, j, m);
        }
        Ok(g)
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, m: u32) {
        self.adj[i * self.n + j] += m;
        if i != j {
            self.adj[j * self.n + i] += m;
        }
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, m: u32) {
        self.adj[i * self.n + j] = m;
        self.adj[j * self.n + i] = m;
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn allows_loops(&self) -> bool {
        self.allow_loops
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.adj[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> u32 {
        (0..self.n).map(|j| if i == j { 2 * self.get(i, i) } else { self.get(i, j) }).sum()
    }

    pub fn degrees(&self) -> Vec<u32> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    /// Nonzero upper-triangle entries `(i, j, q_ij)` with `i <= j`, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n).flat_map(move |i| (i..self.n).map(move |j| (i, j, self.get(i, j)))).filter(|&(_, _, m)| m > 0)
    }

    /// Row-major upper triangle (diagonal included), the canonical sort key.
    pub fn upper_triangle(&self) -> Vec<u32> {
        (0..self.n).flat_map(|i| (i..self.n).map(move |j| self.get(i, j))).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.n).map(|i| self.adj[i * self.n..(i + 1) * self.n].to_vec()).collect()
    }

    fn component_labels(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(v) = stack.pop() {
                for w in 0..self.n {
                    if w != v && self.get(v, w) > 0 && label[w] == usize::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Connectivity of the support graph (loops ignored). A single vertex is
    /// connected whatever its degree; with two or more vertices every vertex
    /// must have positive degree and the support must be one component.
    pub fn is_connected(&self) -> bool {
        match self.n {
            0 => false,
            1 => true,
            _ => (0..self.n).all(|i| self.degree(i) > 0) && self.component_labels().iter().all(|&c| c == 0),
        }
    }

    /// Unique decomposition into connected blocks, ordered by smallest vertex.
    /// Isolated vertices form singleton blocks.
    pub fn connected_components(&self) -> Vec<(Vec<usize>, Multigraph)> {
        let labels = self.component_labels();
        let count = labels.iter().copied().max().map_or(0, |m| m + 1);
        (0..count)
            .map(|c| {
                let verts: Vec<usize> = (0..self.n).filter(|&v| labels[v] == c).collect();
                (verts.clone(), self.induced(&verts))
            })
            .collect()
    }

    /// Subgraph induced on `verts` (in the given order).
    pub fn induced(&self, verts: &[usize]) -> Multigraph {
        let k = verts.len();
        let mut g = Multigraph::empty(k, self.allow_loops);
        for a in 0..k {
            for b in a..k {
                g.set(a, b, self.get(verts[a], verts[b]));
            }
        }
        g
    }

    /// `(-1)^{Σ_j (n_j - 1)}` over connected components of sizes `n_j`.
    pub fn sign(&self) -> i32 {
        let exponent: usize = self.connected_components().iter().map(|(v, _)| v.len() - 1).sum();
        if exponent.is_multiple_of(2) {
            1
        } else {
            -1
        }
    }

    pub fn check_degrees(&self, degrees: &DegreeSequence) -> Result<(), MultigraphError> {
        if degrees.len() != self.n {
            return Err(MultigraphError::SizeMismatch { expected: degrees.len(), actual: self.n });
        }
        for (vertex, &expected) in degrees.degrees().iter().enumerate() {
            let actual = self.degree(vertex);
            if actual != expected {
                return Err(MultigraphError::DegreeMismatch { vertex, expected, actual });
            }
        }
        Ok(())
    }
}

/// Lazily enumerates every multigraph with the given degrees, in row-major
/// lexicographic order of the upper triangle.
pub fn enumerate_multigraphs(degrees: &DegreeSequence, allow_loops: bool) -> MultigraphIter {
    MultigraphIter::new(degrees.degrees(), allow_loops)
}

/// Odometer over the upper-triangle cells. The last cell of each row is
/// forced to whatever closes that row's degree budget.
pub struct MultigraphIter {
    n: usize,
    allow_loops: bool,
    cells: Vec<(usize, usize)>,
    row_last: Vec<bool>,
    values: Vec<u32>,
    residual: Vec<u32>,
    started: bool,
    done: bool,
}

impl MultigraphIter {
    fn new(degrees: &[u32], allow_loops: bool) -> Self {
        let n = degrees.len();
        let mut cells = Vec::new();
        let mut row_last = Vec::new();
        for i in 0..n {
            let start = if allow_loops { i } else { i + 1 };
            for j in start..n {
                cells.push((i, j));
                row_last.push(j + 1 == n);
            }
        }
        let values = vec![0; cells.len()];
        Self { n, allow_loops, cells, row_last, values, residual: degrees.to_vec(), started: false, done: false }
    }

    fn cost(&self, k: usize) -> (usize, usize, bool) {
        let (i, j) = self.cells[k];
        (i, j, i == j)
    }

    /// Feasible value range for cell `k` given the residuals.
    fn range(&self, k: usize) -> Option<(u32, u32)> {
        let (i, j, diag) = self.cost(k);
        let ri = self.residual[i];
        if self.row_last[k] {
            if diag {
                return ri.is_multiple_of(2).then_some((ri / 2, ri / 2));
            }
            return (ri <= self.residual[j]).then_some((ri, ri));
        }
        let hi = if diag { ri / 2 } else { ri.min(self.residual[j]) };
        Some((0, hi))
    }

    fn assign(&mut self, k: usize, v: u32) {
        let (i, j, diag) = self.cost(k);
        self.values[k] = v;
        if diag {
            self.residual[i] -= 2 * v;
        } else {
            self.residual[i] -= v;
            self.residual[j] -= v;
        }
    }

    fn unassign(&mut self, k: usize) -> u32 {
        let (i, j, diag) = self.cost(k);
        let v = self.values[k];
        if diag {
            self.residual[i] += 2 * v;
        } else {
            self.residual[i] += v;
            self.residual[j] += v;
        }
        self.values[k] = 0;
        v
    }

    fn complete(&self) -> bool {
        self.residual.iter().all(|&r| r == 0)
    }

    /// Searches for the next full assignment starting at cell `k` with value >= `start`.
    fn advance(&mut self, mut k: usize, mut start: u32) -> bool {
        loop {
            if k == self.cells.len() {
                if self.complete() {
                    return true;
                }
                if k == 0 {
                    return false;
                }
                k -= 1;
                start = self.unassign(k) + 1;
                continue;
            }
            if let Some((lo, hi)) = self.range(k) {
                let v = lo.max(start);
                if v <= hi {
                    self.assign(k, v);
                    k += 1;
                    start = 0;
                    continue;
                }
            }
            if k == 0 {
                return false;
            }
            k -= 1;
            start = self.unassign(k) + 1;
        }
    }

    fn current(&self) -> Multigraph {
        let mut g = Multigraph::empty(self.n, self.allow_loops);
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            g.set(i, j, self.values[k]);
        }
        g
    }
}

impl Iterator for MultigraphIter {
    type Item = Multigraph;

    fn next(&mut self) -> Option<Multigraph> {
        if self.done {
            return None;
        }
        let found = if !self.started {
            self.started = true;
            self.advance(0, 0)
        } else if self.cells.is_empty() {
            false
        } else {
            let last = self.cells.len() - 1;
            let v = self.unassign(last);
            self.advance(last, v + 1)
        };
        if found {
            Some(self.current())
        } else {
            self.done = true;
            None
        }
    }
}

/// Number of complete pairings of the labelled half-edges that collapse to
/// `q`: `∏ l_i! / (∏_{i<j} q_ij! · ∏_i 2^{q_ii} q_ii!)`.
///
/// Half-edges at `i` are split into per-neighbour bundles, bundles facing each
/// other are matched in `q_ij!` ways and a loop bundle of size `2 q_ii` is
/// perfectly matched internally. The count agrees with binning
/// [`enumerate_pairings`] by collapsed multigraph (see tests).
pub fn pairing_multiplicity(q: &Multigraph, degrees: &DegreeSequence) -> Result<BigUint, MultigraphError> {
    q.check_degrees(degrees)?;
    let n = q.size();
    let mut numerator = BigUint::one();
    let mut denominator = BigUint::one();
    for i in 0..n {
        numerator *= factorial(degrees.degrees()[i]);
        let loops = q.get(i, i);
        denominator *= factorial(loops) << (loops as usize);
        for j in i + 1..n {
            denominator *= factorial(q.get(i, j));
        }
    }
    Ok(numerator / denominator)
}

/// Literal product `∏_{i≤j} C(l_i, q_ij) C(l_j, q_ij) q_ij!`, kept only for
/// comparison against [`pairing_multiplicity`].
pub fn delta_paper(q: &Multigraph, degrees: &DegreeSequence) -> Result<BigUint, MultigraphError> {
    q.check_degrees(degrees)?;
    let l = degrees.degrees();
    let mut product = BigUint::one();
    for i in 0..q.size() {
        for j in i..q.size() {
            let m = q.get(i, j);
            product *= binomial(l[i], m) * binomial(l[j], m) * factorial(m);
        }
    }
    Ok(product)
}

/// Literal per-vertex product `∏_i r! / (2^{q_ii} q_ii! ∏_{j≠i} q_ij!)`,
/// kept only for comparison reports.
pub fn delta_bar(q: &Multigraph, r: u32) -> Result<Rational, MultigraphError> {
    let required = DegreeSequence::from_degrees(&vec![2 * r; q.size()]);
    q.check_degrees(&required)?;
    let mut value = Rational::one();
    for i in 0..q.size() {
        let loops = q.get(i, i);
        let mut denom = factorial(loops) << (loops as usize);
        for j in (0..q.size()).filter(|&j| j != i) {
            denom *= factorial(q.get(i, j));
        }
        value *= Rational::new(factorial(r).into(), denom.into());
    }
    Ok(value)
}

/// One row of the multiplicity discrepancy report.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct MultiplicityDiscrepancy {
    pub degrees: Vec<u32>,
    pub adjacency: Vec<Vec<u32>>,
    pub oracle: String,
    pub closed_form: String,
}

/// Ledger comparing enumeration-binned pairing counts with the literal
/// product formula, over every loop-free multigraph of the given sequences.
#[derive(Debug, Clone, Serialize)]
pub struct MultiplicityReport {
    pub multigraphs_checked: usize,
    pub oracle_mismatches: usize,
    pub discrepancies: Vec<MultiplicityDiscrepancy>,
}

impl MultiplicityReport {
    pub fn flags(&self, degrees: &[u32], q: &Multigraph) -> Option<&MultiplicityDiscrepancy> {
        let rows = q.to_rows();
        self.discrepancies.iter().find(|d| d.degrees == degrees && d.adjacency == rows)
    }
}

/// Bins [`enumerate_pairings`] by collapsed multigraph (no intra-group edges).
pub fn binned_pairing_counts(degrees: &[u32]) -> BTreeMap<Multigraph, BigUint> {
    let groups: Vec<usize> = degrees.iter().map(|&d| d as usize).collect();
    let mut bins: BTreeMap<Multigraph, BigUint> = BTreeMap::new();
    let mut iter = enumerate_pairings(&groups, true);
    while let Some(edges) = iter.next_edges() {
        let mut q = Multigraph::empty(degrees.len(), false);
        for &(a, b) in edges {
            q.add(a.group, b.group, 1);
        }
        *bins.entry(q).or_insert_with(BigUint::zero) += 1u32;
    }
    bins
}

pub fn multiplicity_report(sequences: &[Vec<u32>]) -> MultiplicityReport {
    let mut report = MultiplicityReport { multigraphs_checked: 0, oracle_mismatches: 0, discrepancies: Vec::new() };
    for seq in sequences {
        let degrees = DegreeSequence::from_degrees(seq);
        let bins = binned_pairing_counts(seq);
        for q in enumerate_multigraphs(&degrees, false) {
            report.multigraphs_checked += 1;
            let oracle = bins.get(&q).cloned().unwrap_or_default();
            let closed = pairing_multiplicity(&q, &degrees).expect("enumerated graph satisfies its degrees");
            if closed != oracle {
                report.oracle_mismatches += 1;
            }
            let paper = delta_paper(&q, &degrees).expect("enumerated graph satisfies its degrees");
            if paper != oracle {
                report.discrepancies.push(MultiplicityDiscrepancy {
                    degrees: seq.clone(),
                    adjacency: q.to_rows(),
                    oracle: oracle.to_string(),
                    closed_form: paper.to_string(),
                });
            }
        }
    }
    report
}
