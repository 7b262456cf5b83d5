//! Seeded random streams. Every stream is derived from a 64-bit seed by
//! counter-based mixing, so splitting never consumes parent state and the
//! same seed reproduces the same stream on any platform.

use rand::distributions::Distribution;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Scalar;

/// splitmix64 finalizer; good avalanche for seed derivation.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent child stream. Does not consume parent state:
    /// the child depends only on the parent seed and the label.
    pub fn split(&self, label: u64) -> Rng {
        Rng::seeded(mix(self.seed ^ mix(label)))
    }

    /// Derive a stream from several labels (e.g. epoch then example index).
    pub fn split2(&self, a: u64, b: u64) -> Rng {
        self.split(a).split(b)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform in [0, 1).
    pub fn uniform<F: Scalar>(&mut self) -> F {
        F::from(self.inner.gen::<f64>()).unwrap()
    }

    /// Uniform in [-r, r].
    pub fn uniform_sym<F: Scalar>(&mut self, r: f64) -> F {
        F::from((self.inner.gen::<f64>() * 2.0 - 1.0) * r).unwrap()
    }

    pub fn normal<F: Scalar>(&mut self) -> F {
        let x: f64 = StandardNormal.sample(&mut self.inner);
        F::from(x).unwrap()
    }

    pub fn gen_range(&mut self, n: usize) -> usize {
        assert!(n > 0, "gen_range over empty range");
        self.inner.gen_range(0..n)
    }

    /// Pick one element uniformly.
    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.gen_range(items.len())]
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    /// Fisher-Yates shuffle of index order.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.gen_range(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample an index from unnormalized non-negative weights.
    pub fn sample_weighted<F: Scalar>(&mut self, weights: &[F]) -> usize {
        let total: F = weights.iter().fold(F::zero(), |a, &b| a + b);
        assert!(total > F::zero(), "sample_weighted with zero total mass");
        let mut u = F::from(self.inner.gen::<f64>()).unwrap() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u = u - w;
        }
        // Fall through on accumulated rounding; last positive weight wins.
        weights
            .iter()
            .rposition(|&w| w > F::zero())
            .expect("no positive weight")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_identical_streams() {
        let mut a = Rng::seeded(42);
        let mut b = Rng::seeded(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_is_pure() {
        let mut parent = Rng::seeded(7);
        let c1: u64 = parent.split(3).next_u64();
        parent.next_u64(); // consuming parent state must not affect children
        let c2: u64 = parent.split(3).next_u64();
        assert_eq!(c1, c2);
        assert_ne!(parent.split(3).seed(), parent.split(4).seed());
    }

    #[test]
    fn weighted_sampling_hits_support() {
        let mut rng = Rng::seeded(1);
        let w = [0.0f64, 0.3, 0.0, 0.7];
        for _ in 0..200 {
            let i = rng.sample_weighted(&w);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn shuffle_is_deterministic() {
        let mut a: Vec<u32> = (0..10).collect();
        let mut b: Vec<u32> = (0..10).collect();
        Rng::seeded(5).shuffle(&mut a);
        Rng::seeded(5).shuffle(&mut b);
        assert_eq!(a, b);
    }
}
