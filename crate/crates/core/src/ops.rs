use crate::block::{BlockBody, Find, GroupId};
use crate::group::Landing;
use crate::key::{Key, Offset};
use crate::tree::{Routing, Tree, ROOT};

/// Offsets found by a query plus its deterministic cost.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryResult {
    pub offsets: Vec<Offset>,
    /// Blocks examined, counting the final in-block probe.
    pub visited_blocks: usize,
    pub bloom_rejected: bool,
}

impl Tree {
    pub fn lookup(&self, k: Key) -> QueryResult {
        self.lookup_with(k, |_| {})
    }

    /// Point lookup reporting the id of every block it touches.
    pub fn lookup_with(&self, k: Key, mut visit: impl FnMut(u64)) -> QueryResult {
        let mut res = QueryResult::default();
        match self.group_hull(ROOT) {
            Some((lo, hi)) if lo <= k && k <= hi => {}
            _ => {
                res.visited_blocks = 1;
                visit(self.root().blocks[0].id);
                return res;
            }
        }
        let mut g = ROOT;
        loop {
            let group = &self.groups[g.0];
            let hit = group.skip_list_search_with(k, |i| visit(group.blocks[i].id));
            res.visited_blocks += hit.visited;
            if !hit.contains() {
                return res;
            }
            let block = &group.blocks[hit.index];
            if let BlockBody::HashInner { bloom, .. } = &block.body {
                if !bloom.may_contain(k) {
                    res.bloom_rejected = true;
                    return res;
                }
            }
            match block.find(k) {
                Find::Child(c) => g = block.children()[c],
                Find::Found(offsets) => {
                    res.visited_blocks += 1;
                    visit(block.id);
                    res.offsets = offsets.to_vec();
                    return res;
                }
                Find::Missing => {
                    res.visited_blocks += 1;
                    visit(block.id);
                    return res;
                }
            }
        }
    }

    pub fn range_search(&self, lo: Key, hi: Key) -> QueryResult {
        self.range_search_with(lo, hi, |_| {})
    }

    /// All offsets of keys in `[lo, hi]`, sorted.
    pub fn range_search_with(&self, lo: Key, hi: Key, mut visit: impl FnMut(u64)) -> QueryResult {
        assert!(lo <= hi, "range_search with lo > hi");
        let mut res = QueryResult::default();
        let (lo, hi) = match self.group_hull(ROOT) {
            Some((a, z)) if lo.max(a) <= hi.min(z) => (lo.max(a), hi.min(z)),
            _ => {
                res.visited_blocks = 1;
                visit(self.root().blocks[0].id);
                return res;
            }
        };
        self.range_group(ROOT, lo, hi, &mut res, &mut visit);
        res.offsets.sort_unstable();
        res
    }

    fn range_group(
        &self,
        g: GroupId,
        lo: Key,
        hi: Key,
        res: &mut QueryResult,
        visit: &mut impl FnMut(u64),
    ) {
        let group = &self.groups[g.0];
        let hit = group.skip_list_search_with(lo, |i| visit(group.blocks[i].id));
        res.visited_blocks += hit.visited;
        let start = match hit.landing {
            Landing::Below => hit.index + 1,
            Landing::Contains | Landing::Before => hit.index,
        };
        for j in start..group.blocks.len() {
            let b = &group.blocks[j];
            if j != hit.index || hit.landing == Landing::Below {
                res.visited_blocks += 1;
                visit(b.id);
            }
            let Some((a, z)) = b.range.observed else {
                continue;
            };
            if a > hi {
                break;
            }
            if z < lo {
                continue;
            }
            match &b.body {
                BlockBody::OrderedLeaf(entries) => {
                    res.visited_blocks += 1;
                    visit(b.id);
                    let from = entries.partition_point(|e| e.key < lo);
                    for e in entries[from..].iter().take_while(|e| e.key <= hi) {
                        res.offsets.extend_from_slice(&e.offsets);
                    }
                }
                BlockBody::HashLeaf(map) => {
                    res.visited_blocks += 1;
                    visit(b.id);
                    for (k, offs) in map {
                        if lo <= *k && *k <= hi {
                            res.offsets.extend_from_slice(offs);
                        }
                    }
                }
                BlockBody::OrderedInner(children) => {
                    let c0 = b.range.slice_of(lo.max(a), children.len());
                    let c1 = b.range.slice_of(hi.min(z), children.len());
                    for &c in &children[c0..=c1] {
                        self.range_group(c, lo, hi, res, visit);
                    }
                }
                BlockBody::HashInner { children, .. } => {
                    for &c in children {
                        self.range_group(c, lo, hi, res, visit);
                    }
                }
            }
        }
    }

    /// Inserts after finalization: observed-range routing with expansion, split on overflow.
    pub fn insert(&mut self, k: Key, o: Offset) {
        self.route_insert(k, o, Routing::Effective, &mut |_| {});
    }

    /// Like [`Tree::insert`], reporting every block the routing touches.
    pub fn insert_with(&mut self, k: Key, o: Offset, mut visit: impl FnMut(u64)) {
        self.route_insert(k, o, Routing::Effective, &mut visit);
    }

    /// Removes every offset of `k`; shrinks boundaries and merges underfull neighbours.
    pub fn delete(&mut self, k: Key) -> bool {
        self.delete_with(k, |_| {})
    }

    pub fn delete_with(&mut self, k: Key, mut visit: impl FnMut(u64)) -> bool {
        let mut path: Vec<(GroupId, usize)> = Vec::new();
        let mut g = ROOT;
        loop {
            let group = &self.groups[g.0];
            let hit = group.skip_list_search_with(k, |i| visit(group.blocks[i].id));
            if !hit.contains() {
                return false;
            }
            path.push((g, hit.index));
            let block = &group.blocks[hit.index];
            match block.find(k) {
                Find::Child(c) => g = block.children()[c],
                Find::Found(_) => {
                    visit(block.id);
                    break;
                }
                Find::Missing => {
                    visit(block.id);
                    return false;
                }
            }
        }
        let (leaf_g, leaf_idx) = *path.last().unwrap();
        self.groups[leaf_g.0].blocks[leaf_idx].leaf_remove(k);
        self.key_count -= 1;

        for &(g, idx) in path.iter().rev().skip(1) {
            let block = &self.groups[g.0].blocks[idx];
            let Some((lo, hi)) = block.range.observed else {
                continue;
            };
            if k != lo && k != hi {
                continue;
            }
            let hull = block
                .children()
                .iter()
                .filter_map(|&c| self.group_hull(c))
                .fold(None, |acc: Option<(Key, Key)>, (a, z)| {
                    Some(acc.map_or((a, z), |(x, y)| (x.min(a), y.max(z))))
                });
            self.groups[g.0].blocks[idx].range.observed = hull;
        }

        let mut next_id = self.next_block_id;
        let group = &mut self.groups[leaf_g.0];
        let merged = group.merge_blocks(leaf_idx, self.m, &mut next_id)
            || (leaf_idx > 0 && group.merge_blocks(leaf_idx - 1, self.m, &mut next_id));
        self.next_block_id = next_id;
        if merged {
            self.block_count -= 1;
        }
        true
    }
}
