use std::collections::HashMap;
use std::hash::{BuildHasherDefault, DefaultHasher};

use crate::bloom::BloomFilter;
use crate::hash::hash_route;
use crate::key::{Key, KeyRange, Offset, OffsetList};
use crate::params::BlockKind;

/// Index of a group inside the index arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub usize);

/// Deterministic (fixed-key SipHash) map used for hashed bottom blocks.
pub type BucketMap = HashMap<Key, OffsetList, BuildHasherDefault<DefaultHasher>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: Key,
    pub offsets: OffsetList,
}

#[derive(Clone, Debug)]
pub enum BlockBody {
    /// Bottom ordered block: entries strictly ascending by key.
    OrderedLeaf(Vec<Entry>),
    /// Bottom unordered block: hash buckets from key to record locators.
    HashLeaf(BucketMap),
    /// Routes by even partition of the logical range into `children.len()` slices.
    OrderedInner(Vec<GroupId>),
    /// Routes by `sha1(k) % children.len()`; every child shares this block's range.
    HashInner {
        children: Vec<GroupId>,
        bloom: BloomFilter,
    },
}

#[derive(Clone, Debug)]
pub struct IndexBlock {
    /// Stable identity for per-block statistics; fresh after split/merge.
    pub id: u64,
    pub range: KeyRange,
    /// Bit `k` set means a skip link to `self + 2^(k+1)`.
    pub links: u32,
    pub body: BlockBody,
}

/// Result of probing one block for a key.
#[derive(Debug, PartialEq, Eq)]
pub enum Find<'a> {
    Child(usize),
    Found(&'a OffsetList),
    Missing,
}

fn insert_offset(list: &mut OffsetList, o: Offset) {
    let pos = list.partition_point(|&x| x < o);
    list.insert(pos, o);
}

impl IndexBlock {
    pub fn leaf(id: u64, kind: BlockKind, range: KeyRange) -> Self {
        let body = match kind {
            BlockKind::Ordered => BlockBody::OrderedLeaf(Vec::new()),
            BlockKind::Unordered => BlockBody::HashLeaf(BucketMap::default()),
        };
        IndexBlock {
            id,
            range,
            links: 0,
            body,
        }
    }

    pub fn kind(&self) -> BlockKind {
        match self.body {
            BlockBody::OrderedLeaf(_) | BlockBody::OrderedInner(_) => BlockKind::Ordered,
            BlockBody::HashLeaf(_) | BlockBody::HashInner { .. } => BlockKind::Unordered,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self.body, BlockBody::OrderedLeaf(_) | BlockBody::HashLeaf(_))
    }

    pub fn is_empty(&self) -> bool {
        self.range.observed.is_none()
    }

    /// Distinct keys held by a bottom block; 0 for routing blocks.
    pub fn key_count(&self) -> usize {
        match &self.body {
            BlockBody::OrderedLeaf(v) => v.len(),
            BlockBody::HashLeaf(m) => m.len(),
            _ => 0,
        }
    }

    pub fn children(&self) -> &[GroupId] {
        match &self.body {
            BlockBody::OrderedInner(c) => c,
            BlockBody::HashInner { children, .. } => children,
            _ => &[],
        }
    }

    /// Binary search for ordered blocks, hash probe for unordered ones.
    pub fn find(&self, k: Key) -> Find<'_> {
        match &self.body {
            BlockBody::OrderedLeaf(entries) => match entries.binary_search_by_key(&k, |e| e.key) {
                Ok(i) => Find::Found(&entries[i].offsets),
                Err(_) => Find::Missing,
            },
            BlockBody::HashLeaf(map) => map.get(&k).map_or(Find::Missing, Find::Found),
            BlockBody::OrderedInner(children) => {
                Find::Child(self.range.slice_of(k, children.len()))
            }
            BlockBody::HashInner { children, .. } => Find::Child(hash_route(k, children.len())),
        }
    }

    /// Adds `(k, o)` to a bottom block. Returns true when `k` is a new key.
    pub fn leaf_insert(&mut self, k: Key, o: Offset) -> bool {
        let fresh = match &mut self.body {
            BlockBody::OrderedLeaf(entries) => match entries.binary_search_by_key(&k, |e| e.key) {
                Ok(i) => {
                    insert_offset(&mut entries[i].offsets, o);
                    false
                }
                Err(i) => {
                    entries.insert(
                        i,
                        Entry {
                            key: k,
                            offsets: smallvec::smallvec![o],
                        },
                    );
                    true
                }
            },
            BlockBody::HashLeaf(map) => match map.get_mut(&k) {
                Some(list) => {
                    insert_offset(list, o);
                    false
                }
                None => {
                    map.insert(k, smallvec::smallvec![o]);
                    true
                }
            },
            _ => panic!("leaf_insert on a routing block"),
        };
        self.range.observe(k);
        fresh
    }

    /// Removes every offset of `k`. Shrinks the observed bounds when `k` was an extreme.
    pub fn leaf_remove(&mut self, k: Key) -> Option<OffsetList> {
        let removed = match &mut self.body {
            BlockBody::OrderedLeaf(entries) => entries
                .binary_search_by_key(&k, |e| e.key)
                .ok()
                .map(|i| entries.remove(i).offsets),
            BlockBody::HashLeaf(map) => map.remove(&k),
            _ => panic!("leaf_remove on a routing block"),
        };
        if removed.is_some() {
            if let Some((lo, hi)) = self.range.observed {
                if k == lo || k == hi {
                    self.recompute_leaf_bounds();
                }
            }
        }
        removed
    }

    pub fn recompute_leaf_bounds(&mut self) {
        self.range.observed = match &self.body {
            BlockBody::OrderedLeaf(entries) => match (entries.first(), entries.last()) {
                (Some(a), Some(b)) => Some((a.key, b.key)),
                _ => None,
            },
            BlockBody::HashLeaf(map) => {
                let lo = map.keys().min();
                let hi = map.keys().max();
                lo.zip(hi).map(|(a, b)| (*a, *b))
            }
            _ => self.range.observed,
        };
    }

    /// Entries of a bottom block in ascending key order.
    pub fn sorted_entries(&self) -> Vec<Entry> {
        match &self.body {
            BlockBody::OrderedLeaf(entries) => entries.clone(),
            BlockBody::HashLeaf(map) => {
                let mut v: Vec<Entry> = map
                    .iter()
                    .map(|(k, o)| Entry {
                        key: *k,
                        offsets: o.clone(),
                    })
                    .collect();
                v.sort_unstable_by_key(|e| e.key);
                v
            }
            _ => Vec::new(),
        }
    }

    /// Builds a bottom block of `kind` holding `entries` (ascending).
    pub fn leaf_from_entries(id: u64, kind: BlockKind, range: KeyRange, entries: Vec<Entry>) -> Self {
        let mut range = range;
        range.observed = match (entries.first(), entries.last()) {
            (Some(a), Some(b)) => Some((a.key, b.key)),
            _ => None,
        };
        let body = match kind {
            BlockKind::Ordered => BlockBody::OrderedLeaf(entries),
            BlockKind::Unordered => {
                BlockBody::HashLeaf(entries.into_iter().map(|e| (e.key, e.offsets)).collect())
            }
        };
        IndexBlock {
            id,
            range,
            links: 0,
            body,
        }
    }

    /// Rough heap + inline footprint in bytes.
    pub fn size_bytes(&self) -> usize {
        let base = std::mem::size_of::<IndexBlock>();
        base + match &self.body {
            BlockBody::OrderedLeaf(v) => v.capacity() * std::mem::size_of::<Entry>(),
            BlockBody::HashLeaf(m) => m.capacity() * (std::mem::size_of::<Entry>() + 8),
            BlockBody::OrderedInner(c) => c.len() * 8,
            BlockBody::HashInner { children, bloom } => children.len() * 8 + bloom.size_bytes(),
        }
    }
}
