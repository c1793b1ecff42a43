use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{Entry, IndexBlock};
use crate::key::{Key, KeyRange};
use crate::params::{link_levels, HyperParams};

/// Where a skip-list search ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Landing {
    /// The block's observed range contains the key.
    Contains,
    /// The block is the last non-empty block whose maximum is below the key.
    Below,
    /// The key precedes every non-empty block; index is the first block.
    Before,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchHit {
    pub index: usize,
    pub landing: Landing,
    pub visited: usize,
}

impl SearchHit {
    pub fn contains(&self) -> bool {
        self.landing == Landing::Contains
    }
}

/// Sibling blocks over consecutive key ranges sharing one set of hyper-parameters.
#[derive(Clone, Debug)]
pub struct BlockGroup {
    pub params: HyperParams,
    pub range: KeyRange,
    pub level: usize,
    pub is_bottom: bool,
    pub path: Vec<u32>,
    pub blocks: Vec<IndexBlock>,
    /// Seed for skip-link sampling; every rebuild re-draws from it.
    pub seed: u64,
}

impl BlockGroup {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Skip-list style search over observed ranges.
    pub fn skip_list_search(&self, k: Key) -> SearchHit {
        self.skip_list_search_with(k, |_| {})
    }

    /// Like [`BlockGroup::skip_list_search`], reporting every visited block index.
    pub fn skip_list_search_with(&self, k: Key, mut visit: impl FnMut(usize)) -> SearchHit {
        assert!(!self.blocks.is_empty(), "search on an empty group");
        let n = self.blocks.len();
        let mut cur = 0;
        let mut best = None;
        let mut visited = 0;
        loop {
            visit(cur);
            visited += 1;
            let b = &self.blocks[cur];
            if let Some((lo, hi)) = b.range.observed {
                if k < lo {
                    break;
                }
                if k <= hi {
                    return SearchHit {
                        index: cur,
                        landing: Landing::Contains,
                        visited,
                    };
                }
                best = Some(cur);
            }
            let mut next = cur + 1;
            let mut mask = b.links;
            while mask != 0 {
                let bit = 31 - mask.leading_zeros();
                mask &= !(1 << bit);
                let t = cur + (2usize << bit);
                if t >= n {
                    continue;
                }
                if let Some((lo, _)) = self.blocks[t].range.observed {
                    if lo <= k {
                        next = t;
                        break;
                    }
                }
            }
            if next >= n {
                break;
            }
            cur = next;
        }
        match best {
            Some(index) => SearchHit {
                index,
                landing: Landing::Below,
                visited,
            },
            None => SearchHit {
                index: 0,
                landing: Landing::Before,
                visited,
            },
        }
    }

    /// Block whose logical range holds `k`, or the nearest end block.
    pub fn locate_logical(&self, k: Key) -> usize {
        let p = self.blocks.partition_point(|b| b.range.lo <= k);
        p.saturating_sub(1)
    }

    /// Samples skip links `j -> j + 2^k` with probability `gamma[k-1]`.
    pub fn create_skip_links(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let levels = link_levels(self.params.y).min(self.params.gamma.len()).min(31);
        let n = self.blocks.len();
        for j in 0..n {
            let mut mask = 0u32;
            for k in 1..=levels {
                let target = j + (1usize << k);
                if target >= n {
                    break;
                }
                let draw: f64 = rng.random();
                if draw < self.params.gamma[k - 1] {
                    mask |= 1 << (k - 1);
                }
            }
            self.blocks[j].links = mask;
        }
    }

    /// Splits bottom block `idx` into lower and upper halves.
    pub fn split_block(&mut self, idx: usize, next_id: &mut u64) {
        let block = &self.blocks[idx];
        assert!(block.is_bottom(), "split_block on a non-bottom block");
        let kind = block.kind();
        let range = block.range;
        let mut entries = block.sorted_entries();
        let right_entries = entries.split_off(entries.len().div_ceil(2));
        let mid = right_entries
            .first()
            .map_or(range.hi, |e| e.key)
            .clamp(range.lo, range.hi);
        let left = IndexBlock::leaf_from_entries(
            take_id(next_id),
            kind,
            KeyRange::new(range.lo, mid),
            entries,
        );
        let right = IndexBlock::leaf_from_entries(
            take_id(next_id),
            kind,
            KeyRange::new(mid, range.hi),
            right_entries,
        );
        self.blocks[idx] = left;
        self.blocks.insert(idx + 1, right);
        self.create_skip_links();
    }

    /// Merges bottom blocks `idx` and `idx + 1` when both are non-empty and under `beta * m`.
    /// Returns false (and leaves the group untouched) otherwise.
    pub fn merge_blocks(&mut self, idx: usize, m: usize, next_id: &mut u64) -> bool {
        if idx + 1 >= self.blocks.len() {
            return false;
        }
        let limit = self.params.merge_threshold(m);
        let (a, b) = (&self.blocks[idx], &self.blocks[idx + 1]);
        if !a.is_bottom() || !b.is_bottom() || a.is_empty() || b.is_empty() {
            return false;
        }
        if a.key_count() as f64 >= limit || b.key_count() as f64 >= limit {
            return false;
        }
        let kind = a.kind();
        let range = KeyRange::new(a.range.lo, b.range.hi);
        let mut entries: Vec<Entry> = a.sorted_entries();
        entries.extend(b.sorted_entries());
        let merged = IndexBlock::leaf_from_entries(take_id(next_id), kind, range, entries);
        self.blocks[idx] = merged;
        self.blocks.remove(idx + 1);
        self.create_skip_links();
        true
    }

    /// Picks the block that absorbs a key no observed range covers and widens its range.
    ///
    /// Empty blocks come first, restricted to those sitting between the non-empty
    /// neighbours of `k` so ranges stay sorted; among them the one whose logical
    /// range is closest wins. Otherwise the nearest non-empty block by
    /// `min(|L - k|, |U - k|)`, ties to the lower index.
    pub fn expand_range(&mut self, k: Key) -> usize {
        let below = self
            .blocks
            .iter()
            .rposition(|b| matches!(b.range.observed, Some((_, hi)) if hi < k));
        let above = self
            .blocks
            .iter()
            .position(|b| matches!(b.range.observed, Some((lo, _)) if lo > k));
        let from = below.map_or(0, |i| i + 1);
        let to = above.unwrap_or(self.blocks.len());
        let empty = (from..to)
            .filter(|&i| self.blocks[i].is_empty())
            .min_by_key(|&i| (self.blocks[i].range.logical_distance(k), i));
        let chosen = match empty {
            Some(i) => i,
            None => {
                let dist = |i: usize| {
                    let (lo, hi) = self.blocks[i].range.observed.expect("non-empty");
                    lo.abs_diff(k).min(hi.abs_diff(k))
                };
                match (below, above) {
                    (Some(a), Some(b)) => {
                        if dist(a) <= dist(b) {
                            a
                        } else {
                            b
                        }
                    }
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => 0,
                }
            }
        };
        self.blocks[chosen].range.observe(k);
        chosen
    }

    /// Checks ordering, containment, capacity and link invariants.
    pub fn check_invariants(&self, m: usize) -> Result<(), String> {
        let mut prev_hi: Option<Key> = None;
        let n = self.blocks.len();
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some((lo, hi)) = b.range.observed {
                if lo > hi {
                    return Err(format!("block {i}: inverted range"));
                }
                if let Some(p) = prev_hi {
                    if lo <= p {
                        return Err(format!("block {i}: range [{lo},{hi}] overlaps predecessor"));
                    }
                }
                prev_hi = Some(hi);
            }
            if b.is_bottom() != self.is_bottom {
                return Err(format!("block {i}: bottom flag disagrees with group"));
            }
            if b.kind() != self.params.kind {
                return Err(format!("block {i}: kind differs from group params"));
            }
            if b.key_count() > m {
                return Err(format!("block {i}: {} keys exceed m={m}", b.key_count()));
            }
            if let crate::block::BlockBody::OrderedLeaf(entries) = &b.body {
                if entries.windows(2).any(|w| w[0].key >= w[1].key) {
                    return Err(format!("block {i}: entries not strictly ascending"));
                }
            }
            if b.is_bottom() {
                let keys = b.sorted_entries();
                match (keys.first(), keys.last(), b.range.observed) {
                    (None, None, None) => {}
                    (Some(a), Some(z), Some((lo, hi))) if a.key == lo && z.key == hi => {}
                    _ => return Err(format!("block {i}: observed bounds disagree with keys")),
                }
            }
            let mut mask = b.links;
            while mask != 0 {
                let bit = mask.trailing_zeros();
                mask &= mask - 1;
                let k = bit as usize + 1;
                if k > link_levels(self.params.y) || i + (1 << k) >= n {
                    return Err(format!("block {i}: illegal skip link distance 2^{k}"));
                }
            }
        }
        Ok(())
    }
}

fn take_id(next: &mut u64) -> u64 {
    let id = *next;
    *next += 1;
    id
}
