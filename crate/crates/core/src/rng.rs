//! Counter-based random streams.
//!
//! Every random draw in the crate is a pure function of `(key, index)`, so the
//! value at a given position never depends on how many draws happened before
//! it or on which thread computed it. Keys form a tree: a [`Stream`] is built
//! from a 64-bit seed and child streams are derived by mixing in a tag.
//!
//! Mixing uses the SplitMix64 finalizer. Gaussian draws use Box-Muller on two
//! uniforms taken from adjacent counters, with `libm` for the transcendental
//! functions so the bit patterns do not depend on the platform's libm.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed together with an ordered list of integer coordinates.
pub fn hash_coords(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(seed ^ SEED_SALT), |acc, &c| {
        mix64(acc ^ mix64(c.wrapping_add(GOLDEN)))
    })
}

/// A keyed family of random values addressed by a 64-bit counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ SEED_SALT),
        }
    }

    /// Child stream for a named purpose or an index (slice, step, ...).
    pub fn derive(self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_add(GOLDEN))),
        }
    }

    pub fn key(self) -> u64 {
        self.key
    }

    #[inline]
    pub fn u64_at(self, index: u64) -> u64 {
        mix64(mix64(index.wrapping_mul(GOLDEN) ^ self.key).wrapping_add(self.key))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform_at(self, index: u64) -> f64 {
        (self.u64_at(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub fn open_uniform_at(self, index: u64) -> f64 {
        ((self.u64_at(index) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw for position `index`; consumes counters `2i` and `2i+1`.
    #[inline]
    pub fn normal_at(self, index: u64) -> f64 {
        let u1 = self.open_uniform_at(index.wrapping_mul(2));
        let u2 = self.uniform_at(index.wrapping_mul(2).wrapping_add(1));
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
    }
}

/// Stream tags, kept in one place so independent consumers never collide.
pub(crate) mod tags {
    pub const TEXTURE: u64 = 0x7465_7874;
    pub const AWGN: u64 = 0x6177_676e;
    pub const BITFLIP_SEG: u64 = 0x6266_7367;
    pub const BITFLIP: u64 = 0x6266_6564;
    pub const LABELS: u64 = 0x6c61_6265;
    pub const DIFFUSION: u64 = 0x6464_706d;
    pub const CHANNEL: u64 = 0x6368_616e;
    pub const RECONSTRUCT: u64 = 0x7265_636f;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_counter_same_value() {
        let s = Stream::new(42);
        assert_eq!(s.u64_at(7), s.u64_at(7));
        assert_ne!(s.u64_at(7), s.u64_at(8));
        assert_ne!(s.derive(1).u64_at(0), s.derive(2).u64_at(0));
    }

    #[test]
    fn uniform_ranges() {
        let s = Stream::new(3);
        for i in 0..10_000 {
            let u = s.uniform_at(i);
            assert!((0.0..1.0).contains(&u));
            let o = s.open_uniform_at(i);
            assert!(o > 0.0 && o < 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let s = Stream::new(11);
        let n = 200_000u64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let z = s.normal_at(i);
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn hash_coords_order_sensitive() {
        assert_ne!(hash_coords(1, &[1, 2]), hash_coords(1, &[2, 1]));
        assert_eq!(hash_coords(9, &[4, 5, 6]), hash_coords(9, &[4, 5, 6]));
    }
}
