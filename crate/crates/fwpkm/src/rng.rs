//! Deterministic seed derivation. All randomness in the crate flows from one
//! root seed through named streams, so sub-experiments (episode generation,
//! memory init, probing, ...) stay independently reproducible when other
//! streams change.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed for stream `name` at position `index` under `root`.
pub fn stream_seed(root: u64, name: &str, index: u64) -> u64 {
    let mut h = splitmix64(root ^ 0x6a09e667f3bcc908);
    for b in name.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// ChaCha12 generator for stream `name` at position `index` under `root`.
/// ChaCha is platform-stable, so identical seeds give identical draws
/// everywhere.
pub fn stream_rng(root: u64, name: &str, index: u64) -> ChaCha12Rng {
    let mut seed = [0u8; 32];
    let mut s = stream_seed(root, name, index);
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        assert_eq!(stream_seed(7, "init", 0), stream_seed(7, "init", 0));
        assert_ne!(stream_seed(7, "init", 0), stream_seed(7, "init", 1));
        assert_ne!(stream_seed(7, "init", 0), stream_seed(7, "episode", 0));
        assert_ne!(stream_seed(7, "init", 0), stream_seed(8, "init", 0));
    }

    #[test]
    fn rng_reproduces_sequences() {
        let mut a = stream_rng(42, "probe", 3);
        let mut b = stream_rng(42, "probe", 3);
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }
}
