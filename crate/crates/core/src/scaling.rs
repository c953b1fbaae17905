//! Lattice-to-continuum studies of rescaled k-point correlations.
//!
//! For mesh `ε = 1/N` the unit box holds the interior lattice
//! `{1, ..., N-1}^d`; a continuum point `x` maps to the site `⌊x N⌋`
//! (componentwise). Lattice covariance entries come from the spectral
//! representation, so meshes beyond the dense site cap are fine.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{ContinuumKernel, CovarianceError, FieldSpec, LatticeDomain, SPECTRAL_SITE_CAP};
use crate::matrix::Matrix;
use crate::scalar::{parse_rational, Scalar};
use crate::wick::{analytic_cumulant_matrix, analytic_moment_matrix, AnalyticSeries, WickError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("epsilon {0} is not the reciprocal of an integer >= 2")]
    Mesh(f64),
    #[error("epsilons must be strictly decreasing")]
    NotDecreasing,
    #[error("points {0} and {1} coincide")]
    CoincidentPoints(usize, usize),
    #[error("no eta value for epsilon {0} in the custom table")]
    MissingEta(f64),
    #[error("convergence report needs at least 3 rows with values, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Wick(#[from] WickError),
}

/// Mesh normalization `η(ε)`.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaPreset {
    /// `η = -log ε`.
    Log,
    /// `η = scale · ε^p`.
    Power { p: f64, scale: f64 },
    /// Tabulated `(ε, η)` pairs.
    Custom(Vec<(f64, f64)>),
}

impl EtaPreset {
    pub fn eta(&self, epsilon: f64) -> Result<f64, ScalingError> {
        match self {
            Self::Log => Ok(-epsilon.ln()),
            Self::Power { p, scale } => Ok(scale * epsilon.powf(*p)),
            Self::Custom(table) => table
                .iter()
                .find(|(e, _)| (e - epsilon).abs() <= 1e-12 * epsilon.abs().max(1.0))
                .map(|&(_, v)| v)
                .ok_or(ScalingError::MissingEta(epsilon)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Moment,
    Cumulant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    #[default]
    Raw,
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSchedule {
    /// Field description without `sides`; the box is derived from each ε.
    /// Explicit matrices are indexed by point.
    pub field: serde_json::Value,
    pub dimension: usize,
    pub points: Vec<Vec<f64>>,
    pub epsilons: Vec<f64>,
    pub eta: EtaPreset,
    pub observable: AnalyticSeries<f64>,
    pub mode: Mode,
    pub kernel: Option<ContinuumKernel>,
    pub normalize: Normalize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    field: serde_json::Value,
    points: Vec<Vec<f64>>,
    epsilons: Vec<serde_json::Value>,
    eta: EtaDoc,
    observable: Vec<f64>,
    #[serde(default = "default_mode")]
    mode: Mode,
    kernel: Option<KernelDoc>,
    #[serde(default)]
    normalize: Normalize,
}

fn default_mode() -> Mode {
    Mode::Moment
}

#[derive(Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase", deny_unknown_fields)]
enum EtaDoc {
    Log,
    Power {
        p: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    Custom {
        table: Vec<(f64, f64)>,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum KernelDoc {
    BoxGreen {
        n_terms: usize,
        #[serde(default = "unit")]
        alpha: f64,
    },
    Table {
        matrix: Vec<Vec<f64>>,
    },
}

fn epsilon_value(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => parse_rational(s).map(|r| r.to_f64()),
        _ => None,
    }
}

impl ScalingSchedule {
    pub fn from_json(text: &str) -> Result<Self, ScalingError> {
        let doc: ScheduleDoc = serde_json::from_str(text).map_err(|e| ScalingError::Schedule(e.to_string()))?;
        let kind = doc.field.get("kind").and_then(|k| k.as_str()).ok_or_else(|| ScalingError::Schedule("field needs a \"kind\"".into()))?;
        let dimension = if kind == "explicit" {
            doc.points.first().map_or(0, Vec::len)
        } else {
            doc.field.get("d").and_then(|d| d.as_u64()).ok_or_else(|| ScalingError::Schedule("lattice fields need \"d\"".into()))? as usize
        };
        let epsilons = doc
            .epsilons
            .iter()
            .map(|v| epsilon_value(v).ok_or_else(|| ScalingError::Schedule(format!("bad epsilon {v}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let eta = match doc.eta {
            EtaDoc::Log => EtaPreset::Log,
            EtaDoc::Power { p, scale } => EtaPreset::Power { p, scale },
            EtaDoc::Custom { table } => EtaPreset::Custom(table),
        };
        let kernel = match doc.kernel {
            None => None,
            Some(KernelDoc::BoxGreen { n_terms, alpha }) => Some(ContinuumKernel::BoxGreenSeries { d: dimension, n_terms, alpha }),
            Some(KernelDoc::Table { matrix }) => Some(ContinuumKernel::UserTable(Matrix::from_rows(matrix).map_err(CovarianceError::from)?)),
        };
        let schedule = Self {
            field: doc.field,
            dimension,
            points: doc.points,
            epsilons,
            eta,
            observable: AnalyticSeries::new(doc.observable)?,
            mode: doc.mode,
            kernel,
            normalize: doc.normalize,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        if self.points.is_empty() {
            return Err(ScalingError::Schedule("at least one point is required".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.len() != self.dimension || p.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
                return Err(CovarianceError::PointOutsideBox(p.clone()).into());
            }
            if let Some(j) = self.points[..i].iter().position(|q| q == p) {
                return Err(ScalingError::CoincidentPoints(j, i));
            }
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ScalingError::NotDecreasing);
        }
        for &e in &self.epsilons {
            mesh_size(e)?;
        }
        Ok(())
    }

    fn is_explicit(&self) -> bool {
        self.field.get("kind").and_then(|k| k.as_str()) == Some("explicit")
    }

    fn series(&self) -> Vec<AnalyticSeries<f64>> {
        vec![self.observable.clone(); self.points.len()]
    }

    fn evaluate(&self, g: &Matrix<f64>) -> Result<f64, ScalingError> {
        let series = self.series();
        Ok(match self.mode {
            Mode::Moment => analytic_moment_matrix(g, &series)?.value,
            Mode::Cumulant => analytic_cumulant_matrix(g, &series)?.value,
        })
    }
}

/// `N = 1/ε`, required to be an integer `≥ 2`.
pub fn mesh_size(epsilon: f64) -> Result<usize, ScalingError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ScalingError::Mesh(epsilon));
    }
    let n = (1.0 / epsilon).round();
    if (n * epsilon - 1.0).abs() > 1e-9 || n < 2.0 {
        return Err(ScalingError::Mesh(epsilon));
    }
    Ok(n as usize)
}

/// 0-based interior coordinates `⌊x N⌋ - 1`, `None` when the point falls
/// on the boundary layer.
pub fn point_to_site(x: &[f64], n: usize) -> Option<Vec<usize>> {
    x.iter()
        .map(|&c| {
            let k = (c * n as f64).floor() as usize;
            (1..n).contains(&k).then(|| k - 1)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub epsilon: f64,
    pub lattice_sites: usize,
    pub sites: Vec<Vec<usize>>,
    pub raw_value: Option<f64>,
    pub eta: f64,
    pub rescaled: Option<f64>,
    /// Reason the row was skipped (e.g. two points on one site).
    pub skipped: Option<String>,
}

fn row_for(schedule: &ScalingSchedule, epsilon: f64) -> Result<ScalingRow, ScalingError> {
    let n = mesh_size(epsilon)?;
    let eta = schedule.eta.eta(epsilon)?;
    let k = schedule.points.len() as i32;
    if schedule.is_explicit() {
        let spec = FieldSpec::from_value(schedule.field.clone())?;
        let idx: Vec<usize> = (0..schedule.points.len()).collect();
        let value = schedule.evaluate(&spec.covariance_at(&idx)?)?;
        return Ok(ScalingRow {
            epsilon,
            lattice_sites: schedule.points.len(),
            sites: idx.iter().map(|&i| vec![i]).collect(),
            raw_value: Some(value),
            eta,
            rescaled: Some(eta.powi(k) * value),
            skipped: None,
        });
    }
    let d = schedule.dimension;
    let mut field = schedule.field.clone();
    field["sides"] = serde_json::json!(vec![n - 1; d]);
    let spec = FieldSpec::from_value_with_cap(field, SPECTRAL_SITE_CAP)?;
    let domain = LatticeDomain::with_cap(vec![n - 1; d], SPECTRAL_SITE_CAP)?;
    let lattice_sites = domain.site_count();
    let mut coords = Vec::new();
    let mut skipped = None;
    for (i, x) in schedule.points.iter().enumerate() {
        match point_to_site(x, n) {
            Some(c) => {
                if let Some(j) = coords.iter().position(|prev| prev == &c) {
                    skipped = Some(format!("points {j} and {i} map to the same lattice site"));
                }
                coords.push(c);
            }
            None => skipped = Some(format!("point {i} maps outside the interior lattice")),
        }
    }
    if skipped.is_some() {
        return Ok(ScalingRow { epsilon, lattice_sites, sites: coords, raw_value: None, eta, rescaled: None, skipped });
    }
    let idx: Vec<usize> =
        coords.iter().map(|c| domain.index(&c.iter().map(|&v| v as isize).collect::<Vec<_>>()).expect("inside the box")).collect();
    let value = schedule.evaluate(&spec.covariance_at(&idx)?)?;
    Ok(ScalingRow { epsilon, lattice_sites, sites: coords, raw_value: Some(value), eta, rescaled: Some(eta.powi(k) * value), skipped: None })
}

/// `(ε, value, η(ε)^k · value)` for every mesh of the schedule, rows in
/// schedule order. Collisions skip the row instead of failing the run.
pub fn rescaled_kpoint(schedule: &ScalingSchedule) -> Result<Vec<ScalingRow>, ScalingError> {
    schedule.validate()?;
    schedule.epsilons.par_iter().map(|&e| row_for(schedule, e)).collect()
}

/// Multigraph sum with the kernel evaluated at the continuum points.
pub fn continuum_target(schedule: &ScalingSchedule, kernel: &ContinuumKernel) -> Result<f64, ScalingError> {
    let g = kernel.matrix_at(&schedule.points)?;
    schedule.evaluate(&g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub rescaled: f64,
    pub normalized: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub target: f64,
    pub normalization: f64,
    /// Errors are absolute because the target is numerically zero.
    pub absolute: bool,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log error` against `log ε`.
    pub fitted_order: Option<f64>,
    /// Errors strictly decrease as ε decreases.
    pub monotone: bool,
    /// `rescaled(ε_i) / rescaled(ε_{i+1})`.
    pub ratio_sequence: Vec<f64>,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Errors of the rescaled values against `target`.
///
/// With [`Normalize::Auto`] the values are multiplied by a constant `c`
/// estimated as the ε → 0 limit of `target / rescaled(ε)`: `log` of the
/// ratio is fitted as `κ + β ε` and `c = exp(κ)`. When the ratios are not
/// all positive the plain mean ratio is used.
pub fn convergence_report(rows: &[ScalingRow], target: f64, normalize: Normalize) -> Result<ConvergenceReport, ScalingError> {
    let valid: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.rescaled.map(|v| (r.epsilon, v))).collect();
    if valid.len() < 3 {
        return Err(ScalingError::TooFewRows(valid.len()));
    }
    let absolute = target.abs() < 1e-300 || !target.is_finite();
    let normalization = match normalize {
        Normalize::Raw => 1.0,
        Normalize::Auto if absolute => 1.0,
        Normalize::Auto => {
            let ratios: Vec<f64> = valid.iter().map(|&(_, v)| target / v).collect();
            if ratios.iter().all(|&r| r > 0.0 && r.is_finite()) {
                let eps: Vec<f64> = valid.iter().map(|&(e, _)| e).collect();
                let logs: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
                least_squares(&eps, &logs).map_or(1.0, |(kappa, _)| kappa.exp())
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            }
        }
    };
    let out: Vec<ConvergenceRow> = valid
        .iter()
        .map(|&(epsilon, rescaled)| {
            let normalized = normalization * rescaled;
            let error = if absolute { (normalized - target).abs() } else { ((normalized - target) / target).abs() };
            ConvergenceRow { epsilon, rescaled, normalized, error }
        })
        .collect();
    let positive: Vec<&ConvergenceRow> = out.iter().filter(|r| r.error > 0.0).collect();
    let fitted_order = if positive.len() >= 2 {
        let xs: Vec<f64> = positive.iter().map(|r| r.epsilon.ln()).collect();
        let ys: Vec<f64> = positive.iter().map(|r| r.error.ln()).collect();
        least_squares(&xs, &ys).map(|(_, slope)| slope)
    } else {
        None
    };
    let monotone = out.windows(2).all(|w| w[1].error < w[0].error);
    let ratio_sequence = valid.windows(2).map(|w| w[0].1 / w[1].1).collect();
    Ok(ConvergenceReport { target, normalization, absolute, rows: out, fitted_order, monotone, ratio_sequence })
}

/// CSV with columns `epsilon, lattice_sites, raw_value, eta, rescaled, target, rel_error`.
/// Skipped rows leave the value columns empty.
pub fn scaling_csv(rows: &[ScalingRow], report: Option<&ConvergenceReport>) -> String {
    let mut out = String::from("epsilon,lattice_sites,raw_value,eta,rescaled,target,rel_error\n");
    for row in rows {
        let conv = report.and_then(|r| r.rows.iter().find(|c| c.epsilon == row.epsilon));
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        out.push_str(&format!(
            "{:e},{},{},{:e},{},{},{}\n",
            row.epsilon,
            row.lattice_sites,
            opt(row.raw_value),
            row.eta,
            opt(row.rescaled),
            opt(report.map(|r| r.target)),
            opt(conv.map(|c| c.error)),
        ));
    }
    out
}
