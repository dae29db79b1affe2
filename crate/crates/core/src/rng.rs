//! Seeded random streams and parameter initialization.
//!
//! Backed by ChaCha8, whose output is specified bit-for-bit independent of
//! platform. Conversions to floats and bounded integers are done here rather
//! than through a generic distribution API so the streams stay stable.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, stream)`, e.g. one per epoch.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = Self::new(seed);
        rng.inner.set_stream(stream);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.uniform(lo, hi);
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

pub fn fill_random(shape: &[usize], init: Init, rng: &mut SeededRng) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::KaimingUniform { fan_in } => {
            let bound = (6.0 / fan_in as f64).sqrt();
            rng.uniform_tensor(shape, -bound, bound)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_scheme() {
        let t = fill_random(&[2, 2], Init::Zeros, &mut SeededRng::new(1));
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let init = Init::KaimingUniform { fan_in: 9 };
        let a = fill_random(&[4, 9], init, &mut SeededRng::new(42));
        let b = fill_random(&[4, 9], init, &mut SeededRng::new(42));
        let c = fill_random(&[4, 9], init, &mut SeededRng::new(43));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn kaiming_respects_bound() {
        let t = fill_random(&[10_000], Init::KaimingUniform { fan_in: 54 }, &mut SeededRng::new(7));
        let bound = (6.0f64 / 54.0).sqrt();
        assert!((bound - 0.3333).abs() < 1e-4);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // the draws should actually spread over the interval
        assert!(t.max_abs() > 0.99 * bound);
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first outputs; a change here breaks checkpoint reproducibility.
        let mut rng = SeededRng::new(0);
        assert_eq!(rng.next_u64(), 13080132717333068652);
        assert_eq!(rng.next_u64(), 8594738769458413623);
        assert_eq!(SeededRng::new(0).next_f64(), 0.7090754154265618);
    }

    #[test]
    fn substreams_differ() {
        let mut a = SeededRng::substream(5, 0);
        let mut b = SeededRng::substream(5, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        SeededRng::new(3).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
