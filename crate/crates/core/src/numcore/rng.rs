//! Seeded random streams.
//!
//! Every stream is a ChaCha8 keystream: the 64-bit seed is expanded into
//! the 256-bit key with `SeedableRng::seed_from_u64` (PCG32 expansion), and
//! independent purposes (shuffling, dropout, frame dropping, ...) select
//! distinct ChaCha stream ids under the same key. ChaCha is a counter mode
//! cipher, so outputs depend only on (seed, stream, word position) and are
//! identical across platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream ids for the independent consumers used by training.
pub mod purpose {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const FRAME_DROP: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const BENCH: u64 = 5;
    pub const ORACLE: u64 = 6;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::for_purpose(seed, 0)
    }

    pub fn for_purpose(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..len`, in increasing order.
    pub fn sample_sorted(&mut self, len: usize, amount: usize) -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut self.inner, len, amount).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Index drawn from unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.position(), b.position());
    }

    #[test]
    fn purposes_are_independent_streams() {
        let mut a = RngStream::for_purpose(7, purpose::SHUFFLE);
        let mut b = RngStream::for_purpose(7, purpose::DROPOUT);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn keystream_is_pinned() {
        // Frozen first output; a change here breaks cross-run reproducibility.
        let mut r = RngStream::new(42);
        assert_eq!(r.next_u64(), 12578764544318200737);
        assert_eq!(r.position(), 2);
    }

    #[test]
    fn sample_sorted_is_strictly_increasing() {
        let mut r = RngStream::new(3);
        let idx = r.sample_sorted(10, 5);
        assert_eq!(idx.len(), 5);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
