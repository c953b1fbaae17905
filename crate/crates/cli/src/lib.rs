//! Batch front end: JSON in, JSON or CSV out.
//!
//! Exit codes: 0 on success, 2 for invalid input or unwritable output, 3 when
//! two independent evaluation paths disagree.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use feynwick::complexboson::{complex_cumulant_matrix, complex_moment_matrix, ComplexError, PermanentScalar};
use feynwick::covariance::{json_matrix, BuiltCovariance, CovarianceError, CovarianceMatrix, FieldSpec};
use feynwick::fermion::{duality_check_r1, r_power_minor_condition, DualityReport, FermionError, MinorReport};
use feynwick::matrix::Matrix;
use feynwick::montecarlo::{estimate_complex_moment_matrix, estimate_wick_moment_matrix, MonteCarloError, SampleConfig};
use feynwick::scalar::{parse_rational, Rational, Scalar};
use feynwick::scaling::{continuum_target, convergence_report, rescaled_kpoint, scaling_csv, Normalize, ScalingError, ScalingSchedule};
use feynwick::wick::{
    analytic_cumulant_matrix, analytic_moment_matrix, feynman_moment_oracle_matrix, moments_to_cumulants, restrict,
    term_reports, wick_moment_function, wick_power_cumulant_matrix, wick_power_moment_matrix, wick_power_terms,
    AnalyticSeries, WickError, ORACLE_DEGREE_CAP,
};

#[derive(Parser, Debug, Clone)]
#[command(name = "feynwick", version, about = "Moments, cumulants and dualities of Wick powers of Gaussian fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Input JSON document.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output file (stdout when absent). Written atomically.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Convergence report destination for `scaling`.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Truncation degree for exponential series given as `{"exp": alpha}`.
    #[arg(long, global = true, default_value_t = 8)]
    pub truncation: u32,
    /// Largest subset size listed in duality and minors reports.
    #[arg(long, global = true)]
    pub max_subset: Option<usize>,
    #[arg(long, global = true, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Include term-by-term breakdowns.
    #[arg(long, global = true)]
    pub verbose: bool,
    /// Overrides the schedule's normalization.
    #[arg(long, global = true, value_enum)]
    pub normalize: Option<NormalizeArg>,
    /// Worker threads for internal parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Moment of Wick powers, analytic series or complex powers.
    Moment,
    /// Joint cumulant of the same requests.
    Cumulant,
    /// Cumulant duality report at r = 1 with K = G.
    Duality,
    /// Principal-minor condition report.
    Minors,
    /// Lattice-to-continuum scaling study (CSV).
    Scaling,
    /// Monte Carlo estimate of a moment.
    Mc,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeArg {
    Raw,
    Auto,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("cross-check failed: {0}")]
    CrossCheck(String),
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::CrossCheck(_) => 3,
            Self::Validation(_) | Self::Io { .. } => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

impl From<CovarianceError> for CliError {
    fn from(e: CovarianceError) -> Self {
        invalid(e)
    }
}

impl From<WickError> for CliError {
    fn from(e: WickError) -> Self {
        invalid(e)
    }
}

impl From<ScalingError> for CliError {
    fn from(e: ScalingError) -> Self {
        invalid(e)
    }
}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        invalid(e)
    }
}

impl From<ComplexError> for CliError {
    fn from(e: ComplexError) -> Self {
        match e {
            ComplexError::CrossCheck { .. } | ComplexError::CumulantCrossCheck { .. } => CliError::CrossCheck(e.to_string()),
            other => invalid(other),
        }
    }
}

impl From<FermionError> for CliError {
    fn from(e: FermionError) -> Self {
        match e {
            FermionError::CrossCheck { .. } => CliError::CrossCheck(e.to_string()),
            FermionError::Complex(c) => c.into(),
            other => invalid(other),
        }
    }
}

/// Rendered results: the primary document and, for `scaling`, a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub primary: String,
    pub report: Option<String>,
}

/// Parses, validates, computes and renders without touching the filesystem
/// beyond reading the input.
pub fn execute(cli: &Cli) -> Result<Rendered, CliError> {
    let text = read_input(cli)?;
    match cli.threads {
        Some(0) => Err(invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(invalid)?;
            pool.install(|| dispatch(cli, &text))
        }
        None => dispatch(cli, &text),
    }
}

/// Runs a command and writes its outputs; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = check_outputs(cli).and_then(|_| execute(cli)).and_then(|r| emit(cli, &r));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, text: &str) -> Result<Rendered, CliError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| invalid(format!("malformed JSON input: {e}")))?;
    match cli.command {
        Command::Moment => json_out(&cmd_wick(cli, &doc, false)?),
        Command::Cumulant => json_out(&cmd_wick(cli, &doc, true)?),
        Command::Duality => json_out(&cmd_duality(cli, &doc)?),
        Command::Minors => json_out(&cmd_minors(cli, &doc)?),
        Command::Mc => json_out(&cmd_mc(cli, &doc)?),
        Command::Scaling => cmd_scaling(cli, text),
    }
}

fn json_out(v: &impl Serialize) -> Result<Rendered, CliError> {
    let mut primary = serde_json::to_string_pretty(v).map_err(invalid)?;
    primary.push('\n');
    Ok(Rendered { primary, report: None })
}

fn read_input(cli: &Cli) -> Result<String, CliError> {
    let path = cli.input.as_ref().ok_or_else(|| invalid("--input is required"))?;
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read input {}: {e}", path.display())))
}

fn check_outputs(cli: &Cli) -> Result<(), CliError> {
    for path in [&cli.output, &cli.report].into_iter().flatten() {
        let dir = parent_dir(path);
        if !dir.is_dir() {
            return Err(CliError::Io { path: path.clone(), message: "output directory does not exist".into() });
        }
    }
    Ok(())
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Temp file in the destination directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io { path: path.to_path_buf(), message: e.to_string() };
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path)).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn emit(cli: &Cli, rendered: &Rendered) -> Result<(), CliError> {
    match &cli.output {
        Some(path) => write_atomic(path, &rendered.primary)?,
        None => print!("{}", rendered.primary),
    }
    if let Some(report) = &rendered.report {
        match (&cli.report, &cli.output) {
            (Some(path), _) => write_atomic(path, report)?,
            (None, Some(_)) => print!("{report}"),
            (None, None) => {}
        }
    }
    Ok(())
}

// ---- input helpers ----

fn field(doc: &Value) -> Result<BuiltCovariance, CliError> {
    let spec = doc.get("field").ok_or_else(|| invalid("input needs a \"field\" object"))?;
    Ok(FieldSpec::from_value(spec.clone())?.build()?)
}

fn site_labels(doc: &Value) -> Result<Vec<String>, CliError> {
    let sites = doc.get("sites").and_then(Value::as_array).ok_or_else(|| invalid("input needs a \"sites\" array"))?;
    sites
        .iter()
        .map(|s| match s {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(invalid(format!("site label {other} is not a string or integer"))),
        })
        .collect()
}

fn degrees(v: &Value) -> Result<Vec<u32>, CliError> {
    v.as_array()
        .ok_or_else(|| invalid("\"degrees\" must be an array"))?
        .iter()
        .map(|d| d.as_u64().and_then(|d| u32::try_from(d).ok()).ok_or_else(|| invalid(format!("degree {d} is not a nonnegative integer"))))
        .collect()
}

fn matrix_field(doc: &Value, key: &str) -> Result<Matrix<Rational>, CliError> {
    let rows: Vec<Vec<Value>> = doc
        .get(key)
        .cloned()
        .map(serde_json::from_value)
        .ok_or_else(|| invalid(format!("input needs a \"{key}\" matrix")))?
        .map_err(|e| invalid(format!("\"{key}\": {e}")))?;
    Ok(json_matrix(&rows)?)
}

fn order(doc: &Value, key: &str) -> Result<Option<usize>, CliError> {
    match doc.get(key) {
        None => Ok(None),
        Some(v) => v.as_u64().filter(|&r| r >= 1).map(|r| Some(r as usize)).ok_or_else(|| invalid(format!("\"{key}\" must be a positive integer"))),
    }
}

/// Scalars read from and written to JSON: exact rationals as `"p/q"`
/// strings, floats as numbers.
trait JsonScalar: PermanentScalar {
    const EXACT: bool;
    fn from_json(v: &Value) -> Option<Self>;
    fn to_json(&self) -> Value;
}

impl JsonScalar for Rational {
    const EXACT: bool = true;

    fn from_json(v: &Value) -> Option<Self> {
        feynwick::covariance::json_rational(v)
    }

    fn to_json(&self) -> Value {
        Value::String(self.to_string())
    }
}

impl JsonScalar for f64 {
    const EXACT: bool = false;

    fn from_json(v: &Value) -> Option<Self> {
        match v {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => parse_rational(s).map(|r| Scalar::to_f64(&r)),
            _ => None,
        }
    }

    fn to_json(&self) -> Value {
        json!(self)
    }
}

fn parse_series<S: JsonScalar>(v: &Value, truncation: u32) -> Result<AnalyticSeries<S>, CliError> {
    if let Some(alpha) = v.get("exp") {
        let alpha = S::from_json(alpha).ok_or_else(|| invalid(format!("bad exponential rate {alpha}")))?;
        return Ok(AnalyticSeries::exponential(alpha, truncation));
    }
    let coeffs = v
        .as_array()
        .ok_or_else(|| invalid("each series is a coefficient array or {\"exp\": alpha}"))?
        .iter()
        .map(|c| S::from_json(c).ok_or_else(|| invalid(format!("bad series coefficient {c}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AnalyticSeries::new(coeffs)?)
}

// ---- moment / cumulant ----

fn cmd_wick(cli: &Cli, doc: &Value, cumulant: bool) -> Result<Value, CliError> {
    let labels = site_labels(doc)?;
    match field(doc)? {
        BuiltCovariance::Exact(cov) => wick_request(cli, doc, &cov, &labels, cumulant),
        BuiltCovariance::Float(cov) => wick_request(cli, doc, &cov, &labels, cumulant),
    }
}

fn wick_request<S: JsonScalar>(cli: &Cli, doc: &Value, cov: &CovarianceMatrix<S>, labels: &[String], cumulant: bool) -> Result<Value, CliError> {
    let g = restrict(cov, labels)?;
    let kind = if cumulant { "cumulant" } else { "moment" };
    let exact = S::EXACT;
    let chosen: Vec<&str> = ["degrees", "series", "complex"].into_iter().filter(|k| doc.get(*k).is_some()).collect();
    if chosen.len() != 1 {
        return Err(invalid("give exactly one of \"degrees\", \"series\" or \"complex\""));
    }
    let mut out = json!({ "kind": kind, "sites": labels, "exact": exact });
    match chosen[0] {
        "degrees" => {
            let degrees = degrees(&doc["degrees"])?;
            if degrees.len() != labels.len() {
                return Err(invalid(format!("{} degrees for {} sites", degrees.len(), labels.len())));
            }
            let (value, check) = if cumulant {
                let value = wick_power_cumulant_matrix(&g, &degrees)?;
                let mobius = moments_to_cumulants(&wick_moment_function(&g, &degrees)?).full().clone();
                (value, Some(mobius))
            } else {
                let value = wick_power_moment_matrix(&g, &degrees)?;
                let oracle = if degrees.iter().sum::<u32>() <= ORACLE_DEGREE_CAP { Some(feynman_moment_oracle_matrix(&g, &degrees)?) } else { None };
                (value, oracle)
            };
            if let Some(c) = &check {
                if !value.agrees(c) {
                    return Err(CliError::CrossCheck(format!("multigraph sum {} vs independent path {}", value.render(), c.render())));
                }
            }
            out["degrees"] = json!(degrees);
            out["value"] = value.to_json();
            out["cross_check"] = check.map_or(Value::Null, |c| c.to_json());
            if cli.verbose {
                let terms = wick_power_terms(&g, &degrees, cumulant)?;
                out["terms"] = json!(term_reports(&terms, |s| s.to_json().to_string().trim_matches('"').to_string()));
            }
        }
        "series" => {
            let list = doc["series"].as_array().ok_or_else(|| invalid("\"series\" must be an array"))?;
            if list.len() != labels.len() {
                return Err(invalid(format!("{} series for {} sites", list.len(), labels.len())));
            }
            let series = list.iter().map(|s| parse_series::<S>(s, cli.truncation)).collect::<Result<Vec<_>, _>>()?;
            let v = if cumulant { analytic_cumulant_matrix(&g, &series)? } else { analytic_moment_matrix(&g, &series)? };
            out["truncation"] = json!(series.iter().map(AnalyticSeries::truncation).collect::<Vec<_>>());
            out["value"] = v.value.to_json();
            out["last_shell"] = v.last_shell.to_json();
            out["last_shell_magnitude"] = json!(v.last_shell_magnitude);
        }
        _ => {
            let r = order(doc, "complex")?.expect("present");
            out["order"] = json!(r);
            if cumulant {
                out["value"] = complex_cumulant_matrix(&g, r)?.to_json();
            } else {
                let m = complex_moment_matrix(&g, r)?;
                out["value"] = m.permanent.to_json();
                out["oracle"] = m.oracle.map_or(Value::Null, |o| o.to_json());
                out["multigraph"] = m.multigraph.to_json();
            }
        }
    }
    Ok(out)
}

// ---- duality / minors ----

fn spd_rational(doc: &Value, key: &str) -> Result<Matrix<Rational>, CliError> {
    let m = matrix_field(doc, key)?;
    let labels = (0..m.rows()).map(|i| i.to_string()).collect();
    Ok(CovarianceMatrix::new(labels, m)?.matrix().clone())
}

fn within_cap(subset: &[usize], cap: Option<usize>) -> bool {
    cap.is_none_or(|c| subset.len() <= c)
}

fn cmd_duality(cli: &Cli, doc: &Value) -> Result<DualityReport, CliError> {
    let g = spd_rational(doc, "G")?;
    let mut report = duality_check_r1(&g)?;
    report.rows.retain(|r| within_cap(&r.subset, cli.max_subset));
    report.all_dualities_hold = report.rows.iter().all(|r| r.complex_fermion_duality);
    report.all_vector_equalities_hold = report.rows.iter().all(|r| r.vector_complex_equality);
    Ok(report)
}

fn cmd_minors(cli: &Cli, doc: &Value) -> Result<MinorReport, CliError> {
    let g = spd_rational(doc, "G")?;
    let c = matrix_field(doc, "C")?;
    let r = order(doc, "r")?.unwrap_or(1);
    let sites: Vec<usize> = match doc.get("sites") {
        None => (0..g.rows()).collect(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| invalid(format!("\"sites\": {e}")))?,
    };
    if sites.is_empty() {
        if c.rows() != g.rows() * r || !c.is_square() {
            return Err(invalid(format!("C is {}x{} but n r = {}", c.rows(), c.cols(), g.rows() * r)));
        }
        return Ok(MinorReport { order: r, sites, rows: Vec::new(), verdict: true });
    }
    let mut report = r_power_minor_condition(&c, &g, &sites, r)?;
    report.rows.retain(|row| within_cap(&row.subset, cli.max_subset));
    report.verdict = report.rows.iter().all(|row| row.cumulant_relation_holds);
    Ok(report)
}

// ---- Monte Carlo ----

fn cmd_mc(cli: &Cli, doc: &Value) -> Result<Value, CliError> {
    let labels = site_labels(doc)?;
    let cov = field(doc)?.to_float();
    let g = restrict(&cov, &labels)?;
    let config = SampleConfig::with_samples(cli.seed, cli.samples)?;
    let (estimate, exact) = match (doc.get("degrees"), order(doc, "complex")?) {
        (Some(d), None) => {
            let degrees = degrees(d)?;
            if degrees.len() != labels.len() {
                return Err(invalid(format!("{} degrees for {} sites", degrees.len(), labels.len())));
            }
            let exact = wick_power_moment_matrix(&g, &degrees)?;
            (estimate_wick_moment_matrix(&g, &degrees, config)?, exact)
        }
        (None, Some(r)) => (estimate_complex_moment_matrix(&g, r as u32, config)?, complex_moment_matrix(&g, r)?.permanent),
        _ => return Err(invalid("give exactly one of \"degrees\" or \"complex\"")),
    };
    let z = if estimate.stderr > 0.0 { Some((estimate.estimate - exact) / estimate.stderr) } else { None };
    let mut out = serde_json::to_value(&estimate).map_err(invalid)?;
    out["sites"] = json!(labels);
    out["exact"] = json!(exact);
    out["z_score"] = json!(z);
    Ok(out)
}

// ---- scaling ----

fn cmd_scaling(cli: &Cli, text: &str) -> Result<Rendered, CliError> {
    let mut schedule = ScalingSchedule::from_json(text)?;
    if let Some(n) = cli.normalize {
        schedule.normalize = match n {
            NormalizeArg::Raw => Normalize::Raw,
            NormalizeArg::Auto => Normalize::Auto,
        };
    }
    let rows = rescaled_kpoint(&schedule)?;
    let report = match &schedule.kernel {
        Some(kernel) => {
            let target = continuum_target(&schedule, kernel)?;
            Some(convergence_report(&rows, target, schedule.normalize)?)
        }
        None => None,
    };
    let csv = scaling_csv(&rows, report.as_ref());
    let ratios: Vec<f64> = {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.rescaled).collect();
        vals.windows(2).map(|w| w[0] / w[1]).collect()
    };
    let doc = json!({
        "rows": rows,
        "ratio_sequence": ratios,
        "convergence": report,
    });
    let mut text = serde_json::to_string_pretty(&doc).map_err(invalid)?;
    text.push('\n');
    Ok(Rendered { primary: csv, report: Some(text) })
}
