use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal as LogNormalDist, Zipf};

use crate::error::{Error, Result};
use crate::key::Key;
use crate::registry::Registry;

/// Standard normal quantile at 0.999.
const Z_999: f64 = 3.090_232_306_167_813_5;
const KEY_SPAN: f64 = 9_223_372_036_854_775_808.0; // 2^63

/// A synthetic key generator.
pub trait KeyDistribution {
    fn name(&self) -> &'static str;
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Key>;
}

pub struct Uniform64;

impl KeyDistribution for Uniform64 {
    fn name(&self) -> &'static str {
        "uniform64"
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Key> {
        (0..n).map(|_| rng.random()).collect()
    }
}

/// Log-normal draws clamped at their 99.9th percentile and scaled onto `[0, 2^63)`.
#[derive(Clone, Copy, Debug)]
pub struct LogNormal {
    pub mean: f64,
    pub sd: f64,
}

impl Default for LogNormal {
    fn default() -> Self {
        LogNormal { mean: 0.0, sd: 0.7 }
    }
}

impl LogNormal {
    pub fn p999(&self) -> f64 {
        (self.mean + self.sd * Z_999).exp()
    }

    /// Maps a key back to the log-normal scale it was drawn on.
    pub fn unscale(&self, k: Key) -> f64 {
        k as f64 / KEY_SPAN * self.p999()
    }
}

impl KeyDistribution for LogNormal {
    fn name(&self) -> &'static str {
        "lognormal"
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Key> {
        let dist = LogNormalDist::new(self.mean, self.sd).expect("finite log-normal parameters");
        let top = self.p999();
        (0..n)
            .map(|_| {
                let z: f64 = dist.sample(rng);
                let scaled = z.clamp(0.0, top) / top * KEY_SPAN;
                (scaled as Key).min((1u64 << 63) - 1)
            })
            .collect()
    }
}

/// Zipf-ranked keys spread evenly over `[0, 2^63)`; rank 1 is the most frequent.
#[derive(Clone, Copy, Debug)]
pub struct Zipfian {
    pub exponent: f64,
    pub universe: u64,
}

impl Default for Zipfian {
    fn default() -> Self {
        Zipfian {
            exponent: 1.0,
            universe: 1_000_000,
        }
    }
}

impl KeyDistribution for Zipfian {
    fn name(&self) -> &'static str {
        "zipfian"
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Key> {
        let dist = Zipf::new(self.universe as f64, self.exponent).expect("valid zipf parameters");
        let stride = (1u64 << 63) / self.universe;
        (0..n)
            .map(|_| {
                let rank: f64 = dist.sample(rng);
                (rank as u64 - 1) * stride
            })
            .collect()
    }
}

pub fn distributions() -> Registry<dyn KeyDistribution> {
    Registry::<dyn KeyDistribution>::new("key distribution")
        .register("uniform64", || Box::new(Uniform64))
        .register("lognormal", || Box::new(LogNormal::default()))
        .register("zipfian", || Box::new(Zipfian::default()))
}

/// `n` keys from `dist`, fully determined by `seed`. Order is generation order.
pub fn gen_keys(dist: &dyn KeyDistribution, n: usize, seed: u64) -> Vec<Key> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dist.sample(n, &mut rng)
}

/// Little-endian `u64` count followed by that many little-endian keys.
pub fn encode_keys(keys: &[Key]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * keys.len());
    out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
    for k in keys {
        out.extend_from_slice(&k.to_le_bytes());
    }
    out
}

pub fn decode_keys(bytes: &[u8]) -> Result<Vec<Key>> {
    let Some((head, body)) = bytes.split_first_chunk::<8>() else {
        return Err(Error::Malformed("key file shorter than its 8-byte header".into()));
    };
    let n = u64::from_le_bytes(*head);
    if body.len() as u64 != n.saturating_mul(8) {
        return Err(Error::Malformed(format!(
            "key file declares {n} keys but carries {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_keys(path: &Path, keys: &[Key]) -> Result<()> {
    fs::write(path, encode_keys(keys)).map_err(|e| Error::io(path, e))
}

pub fn read_keys(path: &Path) -> Result<Vec<Key>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_keys(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset() {
        assert!(gen_keys(&Uniform64, 0, 1).is_empty());
        assert_eq!(encode_keys(&[]).len(), 8);
    }

    #[test]
    fn uniform_ks_statistic() {
        let mut keys = gen_keys(&Uniform64, 1_000_000, 7);
        keys.sort_unstable();
        let n = keys.len() as f64;
        let d = keys
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let f = k as f64 / 18_446_744_073_709_551_616.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 0.002, "KS statistic {d}");
    }

    #[test]
    fn lognormal_log_mean_near_zero() {
        let dist = LogNormal::default();
        let keys = gen_keys(&dist, 100_000, 3);
        let mean = keys.iter().map(|&k| dist.unscale(k).ln()).sum::<f64>() / keys.len() as f64;
        assert!(mean.abs() < 0.02, "mean of ln = {mean}");
    }

    #[test]
    fn zipf_rank_one_dominates() {
        let keys = gen_keys(&Zipfian::default(), 10_000, 1);
        let zeros = keys.iter().filter(|&&k| k == 0).count();
        assert!(zeros > 500, "{zeros}");
    }

    #[test]
    fn key_file_round_trip_and_truncation() {
        let keys = gen_keys(&Uniform64, 100, 9);
        let bytes = encode_keys(&keys);
        assert_eq!(bytes.len(), 808);
        assert_eq!(decode_keys(&bytes).unwrap(), keys);
        assert!(decode_keys(&bytes[..800]).is_err());
        assert!(decode_keys(&bytes[..4]).is_err());
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(gen_keys(&LogNormal::default(), 50, 4), gen_keys(&LogNormal::default(), 50, 4));
        assert_ne!(gen_keys(&Uniform64, 50, 4), gen_keys(&Uniform64, 50, 5));
    }
}
