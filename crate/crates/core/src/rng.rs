//! Counter-based random streams addressed by a seed and an integer path.
//!
//! Every stream is a ChaCha8 keystream whose key is derived from
//! `(seed, path)`. Children extend the path, so any component of a run
//! (meta-iteration 12, task 3, episode 7) owns a stream that does not depend
//! on scheduling order or on how many draws its siblings made.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::real::Real;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
    inner: ChaCha8Rng,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, path: &[u64]) -> [u8; 32] {
    // Absorb (seed, len, path...) into four independent lanes.
    let mut lanes = [
        splitmix64(seed ^ 0x6A09_E667_F3BC_C908),
        splitmix64(seed ^ 0xBB67_AE85_84CA_A73B),
        splitmix64(seed ^ 0x3C6E_F372_FE94_F82B),
        splitmix64(seed ^ 0xA54F_F53A_5F1D_36F1),
    ];
    let words = std::iter::once(path.len() as u64).chain(path.iter().copied());
    for (i, w) in words.enumerate() {
        for (j, lane) in lanes.iter_mut().enumerate() {
            *lane = splitmix64(*lane ^ splitmix64(w.wrapping_add((i as u64) << 8 | j as u64)));
        }
    }
    let mut key = [0u8; 32];
    for (chunk, lane) in key.chunks_exact_mut(8).zip(lanes) {
        chunk.copy_from_slice(&lane.to_le_bytes());
    }
    key
}

impl RngStream {
    /// Root stream for a seed (empty path).
    pub fn new(seed: u64) -> Self {
        Self::at(seed, Vec::new())
    }

    pub fn at(seed: u64, path: Vec<u64>) -> Self {
        let inner = ChaCha8Rng::from_seed(derive_key(seed, &path));
        Self { seed, path, inner }
    }

    /// Fresh stream at `path ++ [index]`, independent of draws already taken
    /// from `self`.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self::at(self.seed, path)
    }

    /// Child keyed by a sequence of floats (e.g. a preference vector), so the
    /// stream follows the value rather than its position in a list.
    pub fn child_keyed<T: Real>(&self, key: &[T]) -> Self {
        let h = key.iter().fold(0xCBF2_9CE4_8422_2325u64, |h, x| {
            splitmix64(h ^ x.as_f64().to_bits())
        });
        self.child(h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform<T: Real>(&mut self) -> T {
        // 53 random mantissa bits.
        let bits = self.inner.next_u64() >> 11;
        T::lit(bits as f64 * (1.0 / (1u64 << 53) as f64))
    }

    pub fn uniform_in<T: Real>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * self.uniform::<T>()
    }

    pub fn normal<T: Real>(&mut self) -> T {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        T::lit(z)
    }

    /// Unit-rate exponential draw.
    pub fn exp1<T: Real>(&mut self) -> T {
        let e: f64 = Exp1.sample(&mut self.inner);
        T::lit(e)
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (self.inner.next_u64() % (i as u64 + 1)) as usize;
            idx.swap(i, j);
        }
        idx
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clones_reproduce_draws() {
        let mut a = RngStream::new(42).child(3);
        let mut b = a.clone();
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_paths_differ() {
        let root = RngStream::new(1);
        let mut a = root.child(0);
        let mut b = root.child(1);
        let mut c = root.child(0).child(0);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn child_ignores_parent_consumption() {
        let mut root = RngStream::new(9);
        let before = root.child(5).next_u64();
        for _ in 0..10 {
            root.next_u64();
        }
        assert_eq!(root.child(5).next_u64(), before);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngStream::new(0);
        for _ in 0..10_000 {
            let u: f64 = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = RngStream::new(4);
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
