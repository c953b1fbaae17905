#![allow(dead_code)]

use feynwick::matrix::Matrix;
use feynwick::scalar::{rational, Rational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

/// Square matrix with small rational entries, not necessarily symmetric.
pub fn random_square(rng: &mut impl Rng, n: usize) -> Matrix<Rational> {
    Matrix::from_fn(n, n, |_, _| rational(rng.random_range(-4..=4), rng.random_range(1..=4)))
}

/// Every sequence of `1..=max_sites` positive degrees with total `<= max_total`.
pub fn degree_sequences(max_sites: usize, max_total: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn grow(cur: &mut Vec<u32>, left: u32, max_sites: usize, out: &mut Vec<Vec<u32>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max_sites {
            return;
        }
        for d in 1..=left {
            cur.push(d);
            grow(cur, left - d, max_sites, out);
            cur.pop();
        }
    }
    grow(&mut cur, max_total, max_sites, &mut out);
    out
}
