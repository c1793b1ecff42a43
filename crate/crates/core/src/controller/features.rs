//! Sparse binary input encoding for the policy network.

use crate::params::{link_levels, ValueSets};
use crate::stats::{DatasetStats, HISTOGRAM_BINS};
use crate::tree::MAX_DEPTH;

pub const ROOT_BITS: usize = 64 * 3 + HISTOGRAM_BINS * 8;
pub const MAX_CHUNKS: usize = 4;

/// One decision kind of the per-group sequence, in emission order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Kind,
    X,
    Y,
    Alpha,
    Beta,
    Gamma,
    Stop,
}

impl Decision {
    pub const ALL: [Decision; 7] = [
        Decision::Kind,
        Decision::X,
        Decision::Y,
        Decision::Alpha,
        Decision::Beta,
        Decision::Gamma,
        Decision::Stop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Widths of every head and offsets of every input field.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub values: ValueSets,
    /// Output width per decision; the gamma head has one sigmoid per link distance.
    pub heads: [usize; 7],
    head_off: [usize; 7],
    kind_off: usize,
    prev_off: usize,
    depth_off: usize,
    chunk_off: usize,
    pub input_dim: usize,
}

impl Layout {
    pub fn new(values: ValueSets) -> Self {
        let max_y = values.y.iter().copied().max().unwrap_or(1);
        let heads = [
            2,
            values.x_fractions.len(),
            values.y.len(),
            values.alpha.len(),
            values.beta.len(),
            link_levels(max_y).max(1),
            2,
        ];
        let mut head_off = [0; 7];
        let mut acc = 0;
        for (o, h) in head_off.iter_mut().zip(heads) {
            *o = acc;
            acc += h;
        }
        let kind_off = ROOT_BITS;
        let prev_off = kind_off + Decision::ALL.len();
        let depth_off = prev_off + acc;
        let chunk_off = depth_off + MAX_DEPTH;
        Layout {
            values,
            heads,
            head_off,
            kind_off,
            prev_off,
            depth_off,
            chunk_off,
            input_dim: chunk_off + MAX_CHUNKS,
        }
    }

    pub fn kind_bit(&self, d: Decision) -> u32 {
        (self.kind_off + d.index()) as u32
    }

    /// Input bit encoding "the previous step chose output `i` of head `d`".
    pub fn prev_bit(&self, d: Decision, i: usize) -> u32 {
        debug_assert!(i < self.heads[d.index()]);
        (self.prev_off + self.head_off[d.index()] + i) as u32
    }

    pub fn depth_bit(&self, depth: usize) -> u32 {
        (self.depth_off + depth.min(MAX_DEPTH - 1)) as u32
    }

    pub fn chunk_bit(&self, c: usize) -> u32 {
        (self.chunk_off + c.min(MAX_CHUNKS - 1)) as u32
    }
}

impl Default for Layout {
    fn default() -> Self {
        Layout::new(ValueSets::default())
    }
}

/// Set bits of the root encoding: min, max and unique count as 64-bit binary,
/// then each histogram bin log-scaled to 8 bits.
pub fn encode_root(stats: &DatasetStats) -> Vec<u32> {
    let mut bits = Vec::new();
    for (f, v) in [stats.min, stats.max, stats.unique as u64].into_iter().enumerate() {
        for b in 0..64 {
            if v >> b & 1 == 1 {
                bits.push((f * 64 + b) as u32);
            }
        }
    }
    let total = (stats.count as f64 + 1.0).ln().max(f64::MIN_POSITIVE);
    for (i, &c) in stats.histogram.iter().take(HISTOGRAM_BINS).enumerate() {
        let q = ((c as f64 + 1.0).ln() / total * 255.0).round() as u32;
        for b in 0..8 {
            if q >> b & 1 == 1 {
                bits.push((192 + i * 8 + b) as u32);
            }
        }
    }
    bits
}
