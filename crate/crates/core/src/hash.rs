use sha1::{Digest, Sha1};

use crate::key::Key;

/// SHA-1 of the little-endian key bytes, first eight digest bytes read big-endian.
pub fn key_hash(k: Key) -> u64 {
    let digest = Sha1::digest(k.to_le_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

/// Child group a hashed block routes `k` to.
pub fn hash_route(k: Key, fanout: usize) -> usize {
    debug_assert!(fanout > 0);
    (key_hash(k) % fanout as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fanout_one_always_zero() {
        for k in [0, 1, 99, u64::MAX] {
            assert_eq!(hash_route(k, 1), 0);
        }
    }

    #[test]
    fn frozen_reference_values() {
        // SHA-1 of eight zero bytes is 05fe405753166f125559e7c9ac558654f107c7e9.
        assert_eq!(key_hash(0), 0x05fe_4057_5316_6f12);
        assert_eq!(hash_route(0, 4), (0x05fe_4057_5316_6f12u64 % 4) as usize);
        assert_eq!(hash_route(0, 4), 2);
    }

    #[test]
    fn uniform_keys_spread_within_binomial_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[hash_route(rng.random(), 4)] += 1;
        }
        let bound = 3.0 * (2500.0f64 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= bound, "{counts:?}");
        }
    }
}
