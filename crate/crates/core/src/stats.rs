use crate::key::Key;

pub const HISTOGRAM_BINS: usize = 32;

/// Summary of a key set: bounds, cardinality and an equi-width histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub min: Key,
    pub max: Key,
    pub count: u64,
    pub unique: u64,
    pub histogram: Vec<u64>,
}

impl DatasetStats {
    pub fn from_keys(keys: &[Key]) -> Self {
        Self::with_bins(keys, HISTOGRAM_BINS)
    }

    pub fn with_bins(keys: &[Key], bins: usize) -> Self {
        if keys.is_empty() {
            return DatasetStats {
                min: 0,
                max: 0,
                count: 0,
                unique: 0,
                histogram: vec![0; bins],
            };
        }
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        let min = sorted[0];
        let max = *sorted.last().unwrap();
        let mut unique = 1;
        for w in sorted.windows(2) {
            if w[0] != w[1] {
                unique += 1;
            }
        }
        let mut stats = DatasetStats {
            min,
            max,
            count: keys.len() as u64,
            unique,
            histogram: vec![0; bins],
        };
        for &k in &sorted {
            let b = stats.bin_of(k);
            stats.histogram[b] += 1;
        }
        stats
    }

    fn bin_width(&self) -> f64 {
        (self.max as f64 - self.min as f64 + 1.0) / self.histogram.len() as f64
    }

    fn bin_of(&self, k: Key) -> usize {
        let b = ((k - self.min) as f64 / self.bin_width()) as usize;
        b.min(self.histogram.len() - 1)
    }

    /// Estimated number of keys in `[lo, hi)`, assuming uniformity inside each bin.
    pub fn estimate(&self, lo: Key, hi: Key) -> f64 {
        if self.count == 0 || hi <= lo {
            return 0.0;
        }
        let w = self.bin_width();
        let (lo, hi) = (lo as f64, hi as f64);
        let base = self.min as f64;
        self.histogram
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let a = base + i as f64 * w;
                let b = a + w;
                let overlap = (hi.min(b) - lo.max(a)).max(0.0);
                c as f64 * overlap / w
            })
            .sum()
    }

    /// Logical root range `[min, max + 1)`.
    pub fn root_range(&self) -> (Key, Key) {
        (self.min, self.max.saturating_add(1).max(self.min + 1))
    }
}
