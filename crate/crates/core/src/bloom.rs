use crate::key::Key;

pub const DEFAULT_BITS_PER_KEY: usize = 10;
pub const DEFAULT_HASHES: u32 = 7;

/// Bloom filter over 64-bit keys using double hashing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u64>,
    nbits: u64,
    hashes: u32,
    bits_per_key: usize,
    inserted: usize,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl BloomFilter {
    pub fn new(expected_keys: usize) -> Self {
        Self::with_params(expected_keys, DEFAULT_BITS_PER_KEY, DEFAULT_HASHES)
    }

    pub fn with_params(expected_keys: usize, bits_per_key: usize, hashes: u32) -> Self {
        let nbits = (expected_keys.max(1) * bits_per_key).max(64) as u64;
        let words = nbits.div_ceil(64) as usize;
        BloomFilter {
            bits: vec![0; words],
            nbits,
            hashes,
            bits_per_key,
            inserted: 0,
        }
    }

    #[inline]
    fn probes(&self, k: Key) -> impl Iterator<Item = u64> + '_ {
        let h1 = mix(k);
        let h2 = mix(k ^ 0x5851_f42d_4c95_7f2d) | 1;
        (0..self.hashes as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.nbits)
    }

    pub fn insert(&mut self, k: Key) {
        let probes: Vec<u64> = self.probes(k).collect();
        for bit in probes {
            self.bits[(bit / 64) as usize] |= 1 << (bit % 64);
        }
        self.inserted += 1;
    }

    pub fn may_contain(&self, k: Key) -> bool {
        self.probes(k)
            .all(|bit| self.bits[(bit / 64) as usize] & (1 << (bit % 64)) != 0)
    }

    pub fn len_bits(&self) -> u64 {
        self.nbits
    }

    pub fn size_bytes(&self) -> usize {
        self.bits.len() * 8
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    pub fn bits_per_key(&self) -> usize {
        self.bits_per_key
    }

    pub fn hashes(&self) -> u32 {
        self.hashes
    }

    /// `(1 - e^{-h n / M})^h` for the current load.
    pub fn theoretical_fpr(&self) -> f64 {
        let h = self.hashes as f64;
        let load = self.inserted as f64 / self.nbits as f64;
        (1.0 - (-h * load).exp()).powf(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_false_negatives() {
        let mut b = BloomFilter::new(1000);
        for k in (0..1000u64).map(|i| i * 7919) {
            b.insert(k);
        }
        assert!((0..1000u64).all(|i| b.may_contain(i * 7919)));
    }

    #[test]
    fn empty_filter_rejects() {
        let b = BloomFilter::new(10);
        assert!(!b.may_contain(42));
        assert_eq!(b.theoretical_fpr(), 0.0);
    }
}
