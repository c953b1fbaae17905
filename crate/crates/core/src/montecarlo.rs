//! Seeded sampling of real and circular complex Gaussian vectors, and
//! Monte Carlo estimates of Wick and complex moments.
//!
//! Samples are drawn in batches. Batch `b` uses a ChaCha8 generator seeded
//! with the configured seed on stream `b`, so every batch is reproducible
//! on its own and batches can run on any number of threads. Partial sums
//! are merged in batch order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::covariance::{CovarianceError, CovarianceMatrix};
use crate::matrix::Matrix;
use crate::wick::{hermite_wick_value, WickError};

/// Largest Wick degree accepted by the Hermite estimator.
pub const HERMITE_DEGREE_CAP: u32 = 8;
pub const DEFAULT_BATCH_SIZE: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("degree {degree} exceeds the Hermite stability cap {cap}")]
    DegreeCap { degree: u32, cap: u32 },
    #[error("{sites} sites but {degrees} degrees")]
    LengthMismatch { sites: usize, degrees: usize },
    #[error("replication order must be at least 1")]
    ZeroOrder,
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Wick(#[from] WickError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub batch_size: usize,
}

impl SampleConfig {
    pub fn new(seed: u64, n_samples: usize, batch_size: usize) -> Result<Self, MonteCarloError> {
        if n_samples == 0 {
            return Err(MonteCarloError::NoSamples);
        }
        if batch_size == 0 {
            return Err(MonteCarloError::EmptyBatch);
        }
        Ok(Self { seed, n_samples, batch_size })
    }

    pub fn with_samples(seed: u64, n_samples: usize) -> Result<Self, MonteCarloError> {
        Self::new(seed, n_samples, DEFAULT_BATCH_SIZE)
    }

    pub fn batches(&self) -> usize {
        self.n_samples.div_ceil(self.batch_size)
    }

    fn batch_len(&self, b: usize) -> usize {
        self.batch_size.min(self.n_samples - b * self.batch_size)
    }

    fn rng(&self, b: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(b as u64);
        rng
    }
}

/// Draws `x = L z` with `L Lᵀ = G`, `z` standard normal.
#[derive(Debug, Clone)]
struct Factor {
    l: DMatrix<f64>,
}

impl Factor {
    fn new(g: &Matrix<f64>) -> Result<Self, MonteCarloError> {
        let labels = (0..g.rows()).map(|i| i.to_string()).collect();
        let cov = CovarianceMatrix::new(labels, g.clone())?;
        Ok(Self { l: cov.cholesky()? })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, z: &mut [f64], out: &mut [f64]) {
        let n = z.len();
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.l[(i, k)] * z[k];
            }
            out[i] = s;
        }
    }
}

/// Deterministic stream of samples of `N(0, G)`, batch by batch.
pub struct GaussianStream {
    factor: Factor,
    config: SampleConfig,
    batch: usize,
    in_batch: usize,
    rng: ChaCha8Rng,
    z: Vec<f64>,
}

impl Iterator for GaussianStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.batch >= self.config.batches() {
            return None;
        }
        let mut out = vec![0.0; self.z.len()];
        self.factor.draw(&mut self.rng, &mut self.z, &mut out);
        self.in_batch += 1;
        if self.in_batch == self.config.batch_len(self.batch) {
            self.batch += 1;
            self.in_batch = 0;
            self.rng = self.config.rng(self.batch);
        }
        Some(out)
    }
}

/// Stream of `config.n_samples` vectors distributed as `N(0, G)`.
pub fn sample_gaussian(cov: &CovarianceMatrix<f64>, config: SampleConfig) -> Result<GaussianStream, MonteCarloError> {
    let factor = Factor::new(cov.matrix())?;
    Ok(GaussianStream { z: vec![0.0; cov.len()], rng: config.rng(0), factor, config, batch: 0, in_batch: 0 })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Set when `stderr / |estimate| > 1`.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

/// Per-batch sums of `observable(sample)` over samples of `N(0, G)`.
fn batch_sums(g: &Matrix<f64>, config: SampleConfig, observable: impl Fn(&[f64]) -> f64 + Sync) -> Result<Vec<Partial>, MonteCarloError> {
    let factor = Factor::new(g)?;
    let n = g.rows();
    Ok((0..config.batches())
        .into_par_iter()
        .map(|b| {
            let mut rng = config.rng(b);
            let mut z = vec![0.0; n];
            let mut x = vec![0.0; n];
            let mut p = Partial::default();
            for _ in 0..config.batch_len(b) {
                factor.draw(&mut rng, &mut z, &mut x);
                let v = observable(&x);
                p.count += 1;
                p.sum += v;
                p.sum_sq += v * v;
            }
            p
        })
        .collect())
}

/// Mean with a delete-one-batch jackknife error; a single batch falls back
/// to the sample standard deviation over `√n`.
fn summarize(parts: &[Partial], config: SampleConfig) -> Estimate {
    let n: usize = parts.iter().map(|p| p.count).sum();
    let total: f64 = parts.iter().map(|p| p.sum).sum();
    let mean = total / n as f64;
    let stderr = if parts.len() >= 2 {
        let b = parts.len() as f64;
        let loo: Vec<f64> = parts.iter().map(|p| (total - p.sum) / (n - p.count) as f64).collect();
        let loo_mean = loo.iter().sum::<f64>() / b;
        ((b - 1.0) / b * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>()).sqrt()
    } else {
        let sum_sq: f64 = parts.iter().map(|p| p.sum_sq).sum();
        let var = if n > 1 { (sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0) } else { 0.0 };
        (var.max(0.0) / n as f64).sqrt()
    };
    let warning = (stderr > mean.abs()).then(|| format!("unstable estimate: stderr {stderr:e} exceeds |estimate| {:e}", mean.abs()));
    Estimate { estimate: mean, stderr, n_samples: n, seed: config.seed, warning }
}

/// Sample mean of `∏ :x_i^{l_i}:` (Hermite form, variance `G_ii`).
pub fn estimate_wick_moment_matrix(g: &Matrix<f64>, degrees: &[u32], config: SampleConfig) -> Result<Estimate, MonteCarloError> {
    if g.rows() != degrees.len() {
        return Err(MonteCarloError::LengthMismatch { sites: g.rows(), degrees: degrees.len() });
    }
    if let Some(&degree) = degrees.iter().find(|&&d| d > HERMITE_DEGREE_CAP) {
        return Err(MonteCarloError::DegreeCap { degree, cap: HERMITE_DEGREE_CAP });
    }
    let variances: Vec<f64> = (0..g.rows()).map(|i| *g.get(i, i)).collect();
    for &v in &variances {
        hermite_wick_value(0.0, 0, v)?;
    }
    let parts = batch_sums(g, config, |x| {
        x.iter()
            .zip(degrees)
            .zip(&variances)
            .map(|((&xi, &l), &v)| hermite_wick_value(xi, l, v).expect("variance checked"))
            .product()
    })?;
    Ok(summarize(&parts, config))
}

pub fn estimate_wick_moment(cov: &CovarianceMatrix<f64>, sites: &[String], degrees: &[u32], config: SampleConfig) -> Result<Estimate, MonteCarloError> {
    if sites.len() != degrees.len() {
        return Err(MonteCarloError::LengthMismatch { sites: sites.len(), degrees: degrees.len() });
    }
    estimate_wick_moment_matrix(&crate::wick::restrict(cov, sites)?, degrees, config)
}

/// Sample mean of `∏ |Z_i|^{2r}` with `Z = X + iY`, `X, Y` independent
/// `N(0, G/2)`.
pub fn estimate_complex_moment_matrix(g: &Matrix<f64>, r: u32, config: SampleConfig) -> Result<Estimate, MonteCarloError> {
    if r == 0 {
        return Err(MonteCarloError::ZeroOrder);
    }
    let n = g.rows();
    // Stack (X, Y) into one real vector with block-diagonal covariance G/2 ⊕ G/2.
    let stacked = Matrix::from_fn(2 * n, 2 * n, |i, j| if i / n == j / n { 0.5 * g.get(i % n, j % n) } else { 0.0 });
    let parts = batch_sums(&stacked, config, |v| (0..n).map(|i| (v[i] * v[i] + v[n + i] * v[n + i]).powi(r as i32)).product())?;
    Ok(summarize(&parts, config))
}

pub fn estimate_complex_moment(cov: &CovarianceMatrix<f64>, sites: &[String], r: u32, config: SampleConfig) -> Result<Estimate, MonteCarloError> {
    estimate_complex_moment_matrix(&crate::wick::restrict(cov, sites)?, r, config)
}

/// `|estimate - exact| ≤ k · stderr`.
pub fn within(estimate: &Estimate, exact: f64, k: f64) -> bool {
    (estimate.estimate - exact).abs() <= k * estimate.stderr
}
