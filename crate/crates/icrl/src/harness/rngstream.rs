//! Named, reproducible random streams.
//!
//! Every source of randomness in a run derives from (run seed, stream name,
//! index), so any component can be replayed in isolation and two executions
//! of the same configuration are bitwise identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scalar seed for (run seed, stream, index).
pub fn stream_seed(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix(seed ^ fnv1a(stream.as_bytes()).wrapping_add(splitmix(index)))
}

/// A fresh generator for a named stream.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_stable_and_distinct() {
        assert_eq!(stream_seed(7, "episode", 3), stream_seed(7, "episode", 3));
        assert_ne!(stream_seed(7, "episode", 3), stream_seed(7, "episode", 4));
        assert_ne!(stream_seed(7, "episode", 3), stream_seed(7, "sampler", 3));
        assert_ne!(stream_seed(7, "episode", 3), stream_seed(8, "episode", 3));
    }

    #[test]
    fn rng_replay_is_bitwise() {
        let a: Vec<u64> = (0..8).map(|_| stream_rng(42, "init").random()).collect();
        let b: Vec<u64> = (0..8).map(|_| stream_rng(42, "init").random()).collect();
        let _ = (a, b);
        let mut r1 = stream_rng(42, "init");
        let mut r2 = stream_rng(42, "init");
        for _ in 0..32 {
            assert_eq!(r1.random::<u64>(), r2.random::<u64>());
        }
    }
}
