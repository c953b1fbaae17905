#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use feynwick::matrix::Matrix;
use feynwick::scalar::{rational, Rational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `B Bᵀ + I` with small rational entries in `B`.
pub fn random_spd(rng: &mut impl Rng, n: usize) -> Matrix<Rational> {
    let b = Matrix::from_fn(n, n, |_, _| rational(rng.random_range(-3..=3), rng.random_range(1..=3)));
    let mut m = b.mul(&b.transpose()).unwrap();
    for i in 0..n {
        let d = m.get(i, i) + rational(1, 1);
        m.set(i, i, d);
    }
    m
}

pub fn random_square(rng: &mut impl Rng, n: usize) -> Matrix<Rational> {
    Matrix::from_fn(n, n, |_, _| rational(rng.random_range(-4..=4), rng.random_range(1..=4)))
}

pub fn matrix_json(m: &Matrix<Rational>) -> Value {
    Value::Array(m.to_rows().iter().map(|r| Value::Array(r.iter().map(|v| Value::String(v.to_string())).collect())).collect())
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_feynwick")
}

pub fn write_input(dir: &Path, name: &str, doc: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(doc).unwrap()).unwrap();
    path
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}
