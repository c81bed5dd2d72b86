use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream domains, kept in the top byte of a stream id so that different
/// consumers of the same sample index never share a sequence.
pub mod domain {
    pub const VIEWS: u64 = 1 << 56;
    pub const MODEL: u64 = 2 << 56;
    pub const SHUFFLE: u64 = 3 << 56;
    pub const INIT: u64 = 4 << 56;
    pub const SYNTH: u64 = 5 << 56;
    pub const PROBE: u64 = 6 << 56;
}

/// Deterministic counter-based generator addressed by `(seed, stream)`.
///
/// The same pair yields the same sequence on every host and under any worker
/// count, which is what lets view generation fan out across threads.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Derives an independent generator for a sub-stream of this seed.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn set_position(&mut self, words: u128) {
        self.inner.set_word_pos(words);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi]`; returns `lo` when the range is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * self.uniform()
        }
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty integer range");
        self.inner.random_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Normal with standard deviation `std`, resampled outside ±2·std.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_ids_reproduce() {
        let a: Vec<u64> = {
            let mut r = Rng::new(7, 3);
            (0..1024).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = Rng::new(7, 3);
            (0..1024).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn different_streams_differ() {
        let mut r1 = Rng::new(7, 3);
        let mut r2 = Rng::new(7, 4);
        let a: Vec<u64> = (0..1024).map(|_| r1.next_u64()).collect();
        let b: Vec<u64> = (0..1024).map(|_| r2.next_u64()).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn position_roundtrip_resumes_sequence() {
        let mut r = Rng::new(11, 0);
        for _ in 0..17 {
            r.next_u64();
        }
        let pos = r.position();
        let expected: Vec<u64> = (0..8).map(|_| r.next_u64()).collect();
        let mut s = Rng::new(11, 0);
        s.set_position(pos);
        let got: Vec<u64> = (0..8).map(|_| s.next_u64()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn trunc_normal_is_bounded() {
        let mut r = Rng::new(1, 1);
        for _ in 0..10_000 {
            assert!(r.trunc_normal(0.02).abs() <= 0.04);
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = Rng::new(5, 9);
        let mut v: Vec<usize> = (0..100).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
