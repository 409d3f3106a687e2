use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seeded generator backed by ChaCha8 (`rand_chacha`), which produces the
/// same stream on every platform for a given key.
///
/// A generator has a single owner. Work that runs independently (one sample's
/// augmentation, one epoch's shuffle) gets its own generator from
/// [`Rng::derive`] instead of sharing one.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, &[])
    }

    /// Generator for the substream addressed by `path` under `seed`, e.g.
    /// `(seed, [AUGMENT, epoch, sample])`. The key is a pure function of the
    /// seed and path, so the same address always yields the same stream.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut state = seed;
        let mut mix = splitmix64(&mut state);
        for &p in path {
            state ^= p.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ mix;
            mix = splitmix64(&mut state);
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Rng {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[-limit, limit]`; exactly 0 when `limit` is 0.
    pub fn symmetric(&mut self, limit: f64) -> f64 {
        if limit == 0.0 {
            0.0
        } else {
            (2.0 * self.uniform() - 1.0) * limit
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
