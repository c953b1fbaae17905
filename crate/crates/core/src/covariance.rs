//! Covariance matrices for lattice Gaussian fields and continuum kernels.
//!
//! The lattice Laplacian uses the probabilistic normalization: diagonal 1,
//! nearest-neighbour entries `-1/(2d)`, Dirichlet boundary (sites outside the
//! box are pinned to zero). Sites are indexed row-major over the box, the
//! last axis varying fastest, and labelled by 1-based coordinates joined by
//! `_` (e.g. `"2_5"`).

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::Deserialize;
use thiserror::Error;

use crate::matrix::{Matrix, MatrixError};
use crate::scalar::{parse_rational, Rational, Scalar};

/// Default cap on the number of sites of a densely built lattice covariance.
pub const DEFAULT_SITE_CAP: usize = 4096;

/// Cap for spectral entry evaluation, which never forms the full matrix.
pub const SPECTRAL_SITE_CAP: usize = 1 << 22;

pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
pub const EIGENVALUE_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("lattice dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("side length along axis {axis} must be positive")]
    EmptySide { axis: usize },
    #[error("{sites} sites exceed the domain cap of {cap}")]
    TooManySites { sites: usize, cap: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: entry ({i},{j}) = {a} but ({j},{i}) = {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("matrix is not positive-definite: smallest eigenvalue {eigenvalue}")]
    NotPositiveDefinite { eigenvalue: f64 },
    #[error("{labels} labels for a {size}x{size} matrix")]
    LabelCount { labels: usize, size: usize },
    #[error("direction {direction} out of range for dimension {dimension}")]
    DirectionOutOfRange { direction: usize, dimension: usize },
    #[error("expected {expected} directions (one per site), got {actual}")]
    DirectionCount { expected: usize, actual: usize },
    #[error("fractional exponent must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("points coincide; the continuum kernel is singular on the diagonal")]
    CoincidentPoints,
    #[error("point {0:?} is not inside the open unit box")]
    PointOutsideBox(Vec<f64>),
    #[error("invalid field spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Box `Λ ⊂ Z^d` of `sides[k]` interior sites per axis, Dirichlet outside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeDomain {
    sides: Vec<usize>,
}

impl LatticeDomain {
    pub fn new(sides: Vec<usize>) -> Result<Self, CovarianceError> {
        Self::with_cap(sides, DEFAULT_SITE_CAP)
    }

    pub fn with_cap(sides: Vec<usize>, cap: usize) -> Result<Self, CovarianceError> {
        if sides.len() < 2 {
            return Err(CovarianceError::Dimension(sides.len()));
        }
        if let Some(axis) = sides.iter().position(|&s| s == 0) {
            return Err(CovarianceError::EmptySide { axis });
        }
        let sites = sides.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s)).unwrap_or(usize::MAX);
        if sites > cap {
            return Err(CovarianceError::TooManySites { sites, cap });
        }
        Ok(Self { sides })
    }

    /// Cube of side `n` in dimension `d`.
    pub fn cube(d: usize, n: usize) -> Result<Self, CovarianceError> {
        Self::new(vec![n; d])
    }

    pub fn dimension(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[usize] {
        &self.sides
    }

    pub fn site_count(&self) -> usize {
        self.sides.iter().product()
    }

    /// Row-major index of 0-based coordinates, `None` outside the box.
    pub fn index(&self, coords: &[isize]) -> Option<usize> {
        let mut idx = 0usize;
        for (&c, &s) in coords.iter().zip(&self.sides) {
            if c < 0 || c as usize >= s {
                return None;
            }
            idx = idx * s + c as usize;
        }
        Some(idx)
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.sides.len()];
        for k in (0..self.sides.len()).rev() {
            out[k] = index % self.sides[k];
            index /= self.sides[k];
        }
        out
    }

    pub fn label(&self, index: usize) -> String {
        self.coords(index).iter().map(|c| (c + 1).to_string()).collect::<Vec<_>>().join("_")
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.site_count()).map(|i| self.label(i)).collect()
    }

    /// Index of the neighbour `x + e_axis`, `None` when it falls on the boundary.
    pub fn step(&self, index: usize, axis: usize) -> Option<usize> {
        let mut c: Vec<isize> = self.coords(index).into_iter().map(|v| v as isize).collect();
        c[axis] += 1;
        self.index(&c)
    }
}

/// Symmetric positive-definite matrix over labelled sites.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix<S> {
    labels: Vec<String>,
    matrix: Matrix<S>,
}

/// Scalars for which positive-definiteness can be certified.
pub trait SpdScalar: Scalar {
    fn check_spd(m: &Matrix<Self>) -> Result<(), CovarianceError>;
}

impl SpdScalar for f64 {
    fn check_spd(m: &Matrix<f64>) -> Result<(), CovarianceError> {
        for i in 0..m.rows() {
            for j in i + 1..m.cols() {
                let (a, b) = (*m.get(i, j), *m.get(j, i));
                if !a.is_finite() || !b.is_finite() || (a - b).abs() > SYMMETRY_TOLERANCE {
                    return Err(CovarianceError::Asymmetric { i, j, a, b });
                }
            }
        }
        if m.rows() == 0 {
            return Ok(());
        }
        let eigen = SymmetricEigen::new(m.to_nalgebra());
        let smallest = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if !(smallest > EIGENVALUE_TOLERANCE) {
            return Err(CovarianceError::NotPositiveDefinite { eigenvalue: smallest });
        }
        Ok(())
    }
}

impl SpdScalar for Rational {
    fn check_spd(m: &Matrix<Rational>) -> Result<(), CovarianceError> {
        if let Some((i, j)) = m.first_asymmetry() {
            return Err(CovarianceError::Asymmetric { i, j, a: m.get(i, j).to_f64(), b: m.get(j, i).to_f64() });
        }
        if m.first_nonpositive_pivot().is_some() {
            let eigen = SymmetricEigen::new(m.to_f64().to_nalgebra());
            let smallest = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(CovarianceError::NotPositiveDefinite { eigenvalue: smallest.min(0.0) });
        }
        Ok(())
    }
}

/// Accepts `matrix` iff it is square, symmetric and positive-definite.
/// Sites are labelled `"0"`, `"1"`, ...
pub fn validate_spd<S: SpdScalar>(matrix: Matrix<S>) -> Result<CovarianceMatrix<S>, CovarianceError> {
    let labels = (0..matrix.rows()).map(|i| i.to_string()).collect();
    CovarianceMatrix::new(labels, matrix)
}

impl<S: SpdScalar> CovarianceMatrix<S> {
    pub fn new(labels: Vec<String>, matrix: Matrix<S>) -> Result<Self, CovarianceError> {
        if !matrix.is_square() {
            return Err(CovarianceError::NotSquare { rows: matrix.rows(), cols: matrix.cols() });
        }
        if labels.len() != matrix.rows() {
            return Err(CovarianceError::LabelCount { labels: labels.len(), size: matrix.rows() });
        }
        S::check_spd(&matrix)?;
        Ok(Self { labels, matrix })
    }
}

impl<S: Scalar> CovarianceMatrix<S> {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// CSV with a header row of site labels followed by one row per site.
    pub fn to_csv(&self, fmt: impl Fn(&S) -> String) -> String {
        let mut out = self.labels.join(",");
        out.push('\n');
        for i in 0..self.matrix.rows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(&fmt).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

impl CovarianceMatrix<f64> {
    /// Lower Cholesky factor with pivot tolerance `1e-12`.
    pub fn cholesky(&self) -> Result<DMatrix<f64>, CovarianceError> {
        let n = self.len();
        let a = self.matrix.to_nalgebra();
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 1e-12 {
                return Err(CovarianceError::NotPositiveDefinite { eigenvalue: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(l)
    }
}

/// Dirichlet lattice Laplacian `-Δ_Λ`: `I - A/(2d)`.
pub fn laplacian(domain: &LatticeDomain) -> DMatrix<f64> {
    let n = domain.site_count();
    let d = domain.dimension();
    let off = -1.0 / (2.0 * d as f64);
    let mut l = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for axis in 0..d {
            if let Some(j) = domain.step(i, axis) {
                l[(i, j)] = off;
                l[(j, i)] = off;
            }
        }
    }
    l
}

fn spd_inverse(m: DMatrix<f64>) -> Result<DMatrix<f64>, CovarianceError> {
    let chol = Cholesky::new(m).ok_or(CovarianceError::Matrix(MatrixError::Singular))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn wrap(domain: &LatticeDomain, m: DMatrix<f64>) -> Result<CovarianceMatrix<f64>, CovarianceError> {
    CovarianceMatrix::new(domain.labels(), Matrix::from_nalgebra(&m))
}

/// DGFF covariance `G = (-Δ_Λ)^{-1}`.
pub fn build_dgff_green(domain: &LatticeDomain) -> Result<CovarianceMatrix<f64>, CovarianceError> {
    let g = spd_inverse(laplacian(domain))?;
    wrap(domain, g)
}

/// Membrane-model covariance `((-Δ_Λ)^2)^{-1}`.
pub fn build_membrane(domain: &LatticeDomain) -> Result<CovarianceMatrix<f64>, CovarianceError> {
    let l = laplacian(domain);
    let g = spd_inverse(&l * &l)?;
    wrap(domain, g)
}

/// Fractional covariance `(-Δ_Λ)^{-α}` by spectral calculus on the Dirichlet Laplacian.
pub fn build_fractional(domain: &LatticeDomain, alpha: f64) -> Result<CovarianceMatrix<f64>, CovarianceError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CovarianceError::InvalidAlpha(alpha));
    }
    let eigen = SymmetricEigen::new(laplacian(domain));
    let powered = eigen.eigenvalues.map(|lambda| lambda.powf(-alpha));
    let v = &eigen.eigenvectors;
    let mut g = v * DMatrix::from_diagonal(&powered) * v.transpose();
    symmetrize(&mut g);
    wrap(domain, g)
}

/// Covariance of the gradient field `φ(x + e_{dir(x)}) - φ(x)` of the DGFF,
/// one direction per site (or one direction broadcast to all sites).
pub fn build_gradient_covariance(domain: &LatticeDomain, directions: &[usize]) -> Result<CovarianceMatrix<f64>, CovarianceError> {
    let dirs = expand_directions(domain, directions)?;
    let green = build_dgff_green(domain)?;
    let g = green.matrix();
    let n = domain.site_count();
    let entry = |a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(a), Some(b)) => *g.get(a, b),
        _ => 0.0,
    };
    let m = Matrix::from_fn(n, n, |x, y| {
        let (xe, ye) = (domain.step(x, dirs[x]), domain.step(y, dirs[y]));
        entry(xe, ye) - entry(xe, Some(y)) - entry(Some(x), ye) + entry(Some(x), Some(y))
    });
    let mut sym = m.to_nalgebra();
    symmetrize(&mut sym);
    wrap(domain, sym)
}

fn expand_directions(domain: &LatticeDomain, directions: &[usize]) -> Result<Vec<usize>, CovarianceError> {
    let n = domain.site_count();
    let dirs = match directions.len() {
        1 => vec![directions[0]; n],
        len if len == n => directions.to_vec(),
        actual => return Err(CovarianceError::DirectionCount { expected: n, actual }),
    };
    if let Some(&direction) = dirs.iter().find(|&&d| d >= domain.dimension()) {
        return Err(CovarianceError::DirectionOutOfRange { direction, dimension: domain.dimension() });
    }
    Ok(dirs)
}

/// Separable sine eigenbasis of the Dirichlet Laplacian on a box.
struct SineBasis {
    /// Per axis: eigenvalue contributions `(1 - cos(π m/(n+1)))/d`.
    lambdas: Vec<Vec<f64>>,
    /// Per axis, per coordinate: `φ_m(c) = sqrt(2/(n+1)) sin(π m (c+1)/(n+1))`.
    modes: Vec<Vec<Vec<f64>>>,
}

impl SineBasis {
    fn new(domain: &LatticeDomain) -> Self {
        let d = domain.dimension() as f64;
        let mut lambdas = Vec::new();
        let mut modes = Vec::new();
        for &n in domain.sides() {
            let h = (n + 1) as f64;
            lambdas.push((1..=n).map(|m| (1.0 - (PI * m as f64 / h).cos()) / d).collect());
            modes.push(
                (0..n)
                    .map(|c| (1..=n).map(|m| (2.0 / h).sqrt() * (PI * m as f64 * (c + 1) as f64 / h).sin()).collect())
                    .collect(),
            );
        }
        Self { lambdas, modes }
    }

    /// `Σ_m λ_m^{-α} φ_m(x) φ_m(y)` summed mode by mode.
    fn entry(&self, x: &[usize], y: &[usize], alpha: f64) -> f64 {
        let axes = self.lambdas.len();
        let prods: Vec<Vec<f64>> =
            (0..axes).map(|k| self.modes[k][x[k]].iter().zip(&self.modes[k][y[k]]).map(|(a, b)| a * b).collect()).collect();
        let mut total = 0.0;
        let mut idx = vec![0usize; axes];
        loop {
            let mut lambda = 0.0;
            let mut weight = 1.0;
            for k in 0..axes {
                lambda += self.lambdas[k][idx[k]];
                weight *= prods[k][idx[k]];
            }
            total += weight * lambda.powf(-alpha);
            let mut k = axes;
            loop {
                if k == 0 {
                    return total;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.lambdas[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

/// Entries of `(-Δ_Λ)^{-α}` restricted to `sites`, from the exact sine
/// eigenbasis. Never forms the full matrix, so it serves lattices far above
/// [`DEFAULT_SITE_CAP`].
pub fn spectral_entries(domain: &LatticeDomain, alpha: f64, sites: &[usize]) -> Result<Matrix<f64>, CovarianceError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CovarianceError::InvalidAlpha(alpha));
    }
    let basis = SineBasis::new(domain);
    let coords: Vec<Vec<usize>> = sites.iter().map(|&s| domain.coords(s)).collect();
    let k = sites.len();
    let mut m = Matrix::filled(k, k, 0.0);
    for a in 0..k {
        for b in a..k {
            let v = basis.entry(&coords[a], &coords[b], alpha);
            m.set(a, b, v);
            m.set(b, a, v);
        }
    }
    Ok(m)
}

/// Gradient-field covariance restricted to `sites` with per-site `directions`,
/// from spectral Green entries.
pub fn spectral_gradient_entries(domain: &LatticeDomain, sites: &[usize], directions: &[usize]) -> Result<Matrix<f64>, CovarianceError> {
    if directions.len() != sites.len() {
        return Err(CovarianceError::DirectionCount { expected: sites.len(), actual: directions.len() });
    }
    if let Some(&direction) = directions.iter().find(|&&d| d >= domain.dimension()) {
        return Err(CovarianceError::DirectionOutOfRange { direction, dimension: domain.dimension() });
    }
    // Each site contributes itself and its shifted neighbour (when inside).
    let mut expanded: Vec<usize> = Vec::new();
    let mut slots: Vec<(usize, Option<usize>)> = Vec::new();
    for (&s, &dir) in sites.iter().zip(directions) {
        let base = expanded.len();
        expanded.push(s);
        let shifted = domain.step(s, dir).map(|t| {
            expanded.push(t);
            base + 1
        });
        slots.push((base, shifted));
    }
    let g = spectral_entries(domain, 1.0, &expanded)?;
    let entry = |a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(a), Some(b)) => *g.get(a, b),
        _ => 0.0,
    };
    Ok(Matrix::from_fn(sites.len(), sites.len(), |x, y| {
        let ((x0, x1), (y0, y1)) = (slots[x], slots[y]);
        entry(x1, y1) - entry(x1, Some(y0)) - entry(Some(x0), y1) + entry(Some(x0), Some(y0))
    }))
}

/// Kind of Gaussian field described by a [`FieldSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Explicit(Matrix<Rational>),
    Dgff,
    DgffGradient(Vec<usize>),
    Membrane,
    Fractional(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub domain: Option<LatticeDomain>,
    pub labels: Option<Vec<String>>,
}

/// A covariance on the exact path (explicit rational input) or the float path.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltCovariance {
    Exact(CovarianceMatrix<Rational>),
    Float(CovarianceMatrix<f64>),
}

impl BuiltCovariance {
    pub fn labels(&self) -> &[String] {
        match self {
            Self::Exact(c) => c.labels(),
            Self::Float(c) => c.labels(),
        }
    }

    pub fn to_float(&self) -> CovarianceMatrix<f64> {
        match self {
            Self::Exact(c) => CovarianceMatrix { labels: c.labels.clone(), matrix: c.matrix.to_f64() },
            Self::Float(c) => c.clone(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldSpecDoc {
    kind: String,
    d: Option<usize>,
    sides: Option<Vec<usize>>,
    alpha: Option<f64>,
    matrix: Option<Vec<Vec<serde_json::Value>>>,
    directions: Option<Vec<usize>>,
    labels: Option<Vec<String>>,
}

/// Exact rational from a JSON number or a `"p/q"` string.
pub fn json_rational(v: &serde_json::Value) -> Option<Rational> {
    match v {
        serde_json::Value::Number(n) => parse_rational(&n.to_string()),
        serde_json::Value::String(s) => parse_rational(s),
        _ => None,
    }
}

pub fn json_matrix(rows: &[Vec<serde_json::Value>]) -> Result<Matrix<Rational>, CovarianceError> {
    let parsed = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| json_rational(v).ok_or_else(|| CovarianceError::Spec(format!("entry ({i},{j}) is not a rational: {v}"))))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_rows(parsed)?)
}

impl FieldSpec {
    pub fn from_value(value: serde_json::Value) -> Result<Self, CovarianceError> {
        let doc: FieldSpecDoc = serde_json::from_value(value).map_err(|e| CovarianceError::Spec(e.to_string()))?;
        Self::from_doc(doc, DEFAULT_SITE_CAP)
    }

    /// Like [`FieldSpec::from_value`] but with a custom lattice site cap,
    /// for specs only evaluated through [`FieldSpec::covariance_at`].
    pub fn from_value_with_cap(value: serde_json::Value, cap: usize) -> Result<Self, CovarianceError> {
        let doc: FieldSpecDoc = serde_json::from_value(value).map_err(|e| CovarianceError::Spec(e.to_string()))?;
        Self::from_doc(doc, cap)
    }

    fn from_doc(doc: FieldSpecDoc, cap: usize) -> Result<Self, CovarianceError> {
        let domain = |doc: &FieldSpecDoc| -> Result<LatticeDomain, CovarianceError> {
            let d = doc.d.ok_or_else(|| CovarianceError::Spec("lattice fields need \"d\"".into()))?;
            let sides = doc.sides.clone().ok_or_else(|| CovarianceError::Spec("lattice fields need \"sides\"".into()))?;
            let sides = match sides.len() {
                1 => vec![sides[0]; d],
                len if len == d => sides,
                len => return Err(CovarianceError::Spec(format!("\"sides\" has {len} entries for d = {d}"))),
            };
            LatticeDomain::with_cap(sides, cap)
        };
        let kind = match doc.kind.as_str() {
            "explicit" => {
                let rows = doc.matrix.as_ref().ok_or_else(|| CovarianceError::Spec("explicit fields need \"matrix\"".into()))?;
                return Ok(Self { kind: FieldKind::Explicit(json_matrix(rows)?), domain: None, labels: doc.labels });
            }
            "dgff" => FieldKind::Dgff,
            "membrane" => FieldKind::Membrane,
            "fractional" => {
                let alpha = doc.alpha.ok_or_else(|| CovarianceError::Spec("fractional fields need \"alpha\"".into()))?;
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(CovarianceError::InvalidAlpha(alpha));
                }
                FieldKind::Fractional(alpha)
            }
            "dgff-gradient" => FieldKind::DgffGradient(
                doc.directions.clone().ok_or_else(|| CovarianceError::Spec("gradient fields need \"directions\"".into()))?,
            ),
            other => return Err(CovarianceError::Spec(format!("unknown field kind {other:?}"))),
        };
        Ok(Self { domain: Some(domain(&doc)?), kind, labels: None })
    }

    pub fn from_json(text: &str) -> Result<Self, CovarianceError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CovarianceError::Spec(e.to_string()))?;
        Self::from_value(value)
    }

    /// Builds and validates the full covariance.
    pub fn build(&self) -> Result<BuiltCovariance, CovarianceError> {
        match (&self.kind, &self.domain) {
            (FieldKind::Explicit(m), _) => {
                let labels = self.labels.clone().unwrap_or_else(|| (0..m.rows()).map(|i| i.to_string()).collect());
                Ok(BuiltCovariance::Exact(CovarianceMatrix::new(labels, m.clone())?))
            }
            (_, None) => Err(CovarianceError::Spec("lattice field without a domain".into())),
            (kind, Some(domain)) => {
                if domain.site_count() > DEFAULT_SITE_CAP {
                    return Err(CovarianceError::TooManySites { sites: domain.site_count(), cap: DEFAULT_SITE_CAP });
                }
                let built = match kind {
                    FieldKind::Dgff => build_dgff_green(domain)?,
                    FieldKind::Membrane => build_membrane(domain)?,
                    FieldKind::Fractional(alpha) => build_fractional(domain, *alpha)?,
                    FieldKind::DgffGradient(dirs) => build_gradient_covariance(domain, dirs)?,
                    FieldKind::Explicit(_) => unreachable!(),
                };
                Ok(BuiltCovariance::Float(built))
            }
        }
    }

    /// Covariance entries on `sites` only. Lattice kinds use the spectral
    /// representation, so the domain may exceed the dense cap. Gradient
    /// directions index the requested sites (one entry, or one per site).
    pub fn covariance_at(&self, sites: &[usize]) -> Result<Matrix<f64>, CovarianceError> {
        match (&self.kind, &self.domain) {
            (FieldKind::Explicit(m), _) => {
                if let Some(&bad) = sites.iter().find(|&&s| s >= m.rows()) {
                    return Err(CovarianceError::Spec(format!("site {bad} out of range for a {}x{} matrix", m.rows(), m.rows())));
                }
                Ok(m.to_f64().principal(sites))
            }
            (_, None) => Err(CovarianceError::Spec("lattice field without a domain".into())),
            (kind, Some(domain)) => {
                if let Some(&bad) = sites.iter().find(|&&s| s >= domain.site_count()) {
                    return Err(CovarianceError::Spec(format!("site {bad} out of range")));
                }
                match kind {
                    FieldKind::Dgff => spectral_entries(domain, 1.0, sites),
                    FieldKind::Membrane => spectral_entries(domain, 2.0, sites),
                    FieldKind::Fractional(alpha) => spectral_entries(domain, *alpha, sites),
                    FieldKind::DgffGradient(dirs) => {
                        let dirs = if dirs.len() == 1 { vec![dirs[0]; sites.len()] } else { dirs.clone() };
                        spectral_gradient_entries(domain, sites, &dirs)
                    }
                    FieldKind::Explicit(_) => unreachable!(),
                }
            }
        }
    }
}

/// Continuum covariance kernel on the open unit box.
#[derive(Debug, Clone, PartialEq)]
pub enum ContinuumKernel {
    /// Dirichlet eigen-series of `(-Δ)^{-α}` on `(0,1)^d`, `n_terms` modes per axis.
    BoxGreenSeries { d: usize, n_terms: usize, alpha: f64 },
    /// Kernel values supplied for the schedule's points, by point index.
    UserTable(Matrix<f64>),
}

impl ContinuumKernel {
    /// Kernel matrix over `points`; diagonal entries are unused (set to NaN
    /// for the series kernel, which is singular there).
    pub fn matrix_at(&self, points: &[Vec<f64>]) -> Result<Matrix<f64>, CovarianceError> {
        match self {
            Self::UserTable(m) => {
                if m.rows() != points.len() || !m.is_square() {
                    return Err(CovarianceError::Spec(format!("kernel table is {}x{}, need {} points", m.rows(), m.cols(), points.len())));
                }
                for i in 0..m.rows() {
                    for j in i + 1..m.rows() {
                        let (a, b) = (*m.get(i, j), *m.get(j, i));
                        if (a - b).abs() > 1e-12 {
                            return Err(CovarianceError::Asymmetric { i, j, a, b });
                        }
                    }
                }
                Ok(m.clone())
            }
            Self::BoxGreenSeries { d, n_terms, alpha } => {
                let k = points.len();
                let mut m = Matrix::filled(k, k, f64::NAN);
                for a in 0..k {
                    for b in a + 1..k {
                        let v = if (*alpha - 1.0).abs() < f64::EPSILON {
                            continuum_green_box(*d, &points[a], &points[b], *n_terms)?
                        } else {
                            continuum_fractional_box(*d, &points[a], &points[b], *n_terms, *alpha)?
                        };
                        m.set(a, b, v);
                        m.set(b, a, v);
                    }
                }
                Ok(m)
            }
        }
    }
}

fn check_points(d: usize, x: &[f64], y: &[f64]) -> Result<(), CovarianceError> {
    for p in [x, y] {
        if p.len() != d || p.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return Err(CovarianceError::PointOutsideBox(p.to_vec()));
        }
    }
    if x == y {
        return Err(CovarianceError::CoincidentPoints);
    }
    Ok(())
}

/// `Σ_m sinh(k a) sinh(k(1-b)) / (k sinh k)`-type closed form of the 1-D
/// resolvent `Σ_m 2 sin(πmx) sin(πmy) / (π²m² + k²)` on `(0,1)`, evaluated
/// in overflow-free exponential form.
fn resolvent_1d(x: f64, y: f64, k: f64) -> f64 {
    let (lo, hi) = if x < y { (x, y) } else { (y, x) };
    if k == 0.0 {
        return lo * (1.0 - hi);
    }
    let a = k * lo;
    let b = k * (1.0 - hi);
    (a + b - k).exp() * (-(-2.0 * a).exp_m1()) * (-(-2.0 * b).exp_m1()) / (2.0 * k * (-(-2.0 * k).exp_m1()))
}

/// Dirichlet Green's function of `-Δ` on the unit box at `x ≠ y`.
///
/// The eigen-series `Σ_m ∏_k 2 sin(π m_k x_k) sin(π m_k y_k) / (π²|m|²)` is
/// summed exactly along the axis where the points are farthest apart (the
/// 1-D resolvent) and truncated to `1..=n_terms` modes on the other axes.
/// Dropped modes are damped by `exp(-π |m'| |x_a - y_a|)`, so the truncation
/// error is of order `exp(-π n_terms |x_a - y_a|)` up to polynomial factors.
pub fn continuum_green_box(d: usize, x: &[f64], y: &[f64], n_terms: usize) -> Result<f64, CovarianceError> {
    check_points(d, x, y)?;
    if n_terms == 0 {
        return Err(CovarianceError::Spec("n_terms must be at least 1".into()));
    }
    let axis = (0..d).max_by(|&a, &b| (x[a] - y[a]).abs().total_cmp(&(x[b] - y[b]).abs())).expect("d >= 1");
    let others: Vec<usize> = (0..d).filter(|&k| k != axis).collect();
    let weights: Vec<Vec<f64>> = others
        .iter()
        .map(|&k| (1..=n_terms).map(|m| 2.0 * (PI * m as f64 * x[k]).sin() * (PI * m as f64 * y[k]).sin()).collect())
        .collect();
    let mut idx = vec![0usize; others.len()];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        let mut m2 = 0.0;
        for (slot, &i) in idx.iter().enumerate() {
            weight *= weights[slot][i];
            m2 += ((i + 1) * (i + 1)) as f64;
        }
        if weight != 0.0 {
            total += weight * resolvent_1d(x[axis], y[axis], PI * m2.sqrt());
        }
        let mut k = idx.len();
        loop {
            if k == 0 {
                return Ok(total);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n_terms {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Plain partial sum of the box eigen-series of `(-Δ)^{-α}` over
/// `1..=n_terms` modes per axis.
pub fn continuum_fractional_box(d: usize, x: &[f64], y: &[f64], n_terms: usize, alpha: f64) -> Result<f64, CovarianceError> {
    check_points(d, x, y)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CovarianceError::InvalidAlpha(alpha));
    }
    let weights: Vec<Vec<f64>> =
        (0..d).map(|k| (1..=n_terms).map(|m| 2.0 * (PI * m as f64 * x[k]).sin() * (PI * m as f64 * y[k]).sin()).collect()).collect();
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        let mut m2 = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            weight *= weights[k][i];
            m2 += ((i + 1) * (i + 1)) as f64;
        }
        total += weight * (PI * PI * m2).powf(-alpha);
        let mut k = d;
        loop {
            if k == 0 {
                return Ok(total);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n_terms {
                break;
            }
            idx[k] = 0;
        }
    }
}
