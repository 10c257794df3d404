//! Deterministic random source.
//!
//! All randomness in the crate flows through [`Rng`]: a ChaCha8 stream cipher
//! keyed by a 64-bit seed (optionally mixed with a label). ChaCha8 produces
//! the same byte stream on every platform, so a fixed seed reproduces
//! initializations, dropout masks and data shuffles bit-for-bit. Float
//! mappings are defined here on top of raw u64 draws rather than borrowed
//! from a distributions crate, so they are part of this crate's contract.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Element;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream for (seed, label). Used for per-parameter init so
    /// that removing one parameter from a model cannot shift the stream of
    /// another; common parameters across model variants stay bit-identical.
    pub fn seed_from_label(seed: u64, label: &str) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a64(label.as_bytes()).to_le_bytes());
        Rng { inner: ChaCha8Rng::from_seed(key) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1): top 53 bits of a u64 scaled by 2^-53.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform<E: Element>(&mut self, lo: f64, hi: f64) -> E {
        E::from_f64(lo + (hi - lo) * self.uniform01())
    }

    /// Uniform integer in [0, n) by rejection, bias-free.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// k distinct indices from [0, n), order unspecified but deterministic.
    /// Partial Fisher-Yates; requires k <= n.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::seed_from_u64(7);
        let mut b = Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labeled_streams_are_independent_of_each_other() {
        let a: Vec<u64> = {
            let mut r = Rng::seed_from_u64(3);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = Rng::seed_from_label(3, "conv1.weight");
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b2: Vec<u64> = {
            let mut r = Rng::seed_from_label(3, "conv1.weight");
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a, b);
        assert_eq!(b, b2);
    }

    #[test]
    fn uniform01_stays_in_unit_interval() {
        let mut r = Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let u = r.uniform01();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn sample_without_replacement_is_distinct_and_exact() {
        let mut r = Rng::seed_from_u64(5);
        let s = r.sample_without_replacement(100, 37);
        assert_eq!(s.len(), 37);
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 37);
        assert!(sorted.iter().all(|&i| i < 100));
    }

    #[test]
    fn bernoulli_rate_close_to_p() {
        let mut r = Rng::seed_from_u64(13);
        let n = 100_000;
        let hits = (0..n).filter(|_| r.bernoulli(0.3)).count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.01, "rate {rate}");
    }
}
