use crate::block::{BlockBody, GroupId, IndexBlock};
use crate::bloom::BloomFilter;
use crate::error::{Error, Result};
use crate::group::BlockGroup;
use crate::hash::hash_route;
use crate::key::{Key, KeyRange, Offset};
use crate::param_index::{format_path, ParameterIndex};
use crate::params::{BlockKind, DEFAULT_CAPACITY};
use crate::stats::DatasetStats;

pub const MAX_DEPTH: usize = 8;

#[derive(Clone, Debug)]
pub struct BuildOptions {
    /// Maximum keys per block.
    pub m: usize,
    pub max_depth: usize,
    /// Storage budget in bytes; `None` disables the check.
    pub budget_bytes: Option<u64>,
    /// Base seed for per-group skip-link sampling.
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            m: DEFAULT_CAPACITY,
            max_depth: MAX_DEPTH,
            budget_bytes: None,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Routing {
    /// Route by logical ranges (materialization).
    Logical,
    /// Route by observed ranges, expanding when nothing covers the key.
    Effective,
}

/// Arena holding every group of one index. Group 0 is the root.
#[derive(Clone, Debug)]
pub struct Tree {
    pub groups: Vec<BlockGroup>,
    pub m: usize,
    pub(crate) next_block_id: u64,
    pub(crate) key_count: usize,
    pub(crate) block_count: usize,
    /// Groups traversed while routing tuples; grows linearly with materialized keys.
    pub routing_steps: u64,
}

pub const ROOT: GroupId = GroupId(0);

fn mix_seed(seed: u64, path: &[u32]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in path {
        h = (h ^ p as u64).wrapping_mul(0x1000_0000_01b3);
        h ^= h >> 29;
    }
    h
}

const GROUP_OVERHEAD: u64 = std::mem::size_of::<BlockGroup>() as u64;
const BLOCK_OVERHEAD: u64 = std::mem::size_of::<IndexBlock>() as u64;

struct BuildCtx<'a> {
    pi: &'a ParameterIndex,
    stats: &'a DatasetStats,
    opts: &'a BuildOptions,
    bytes: u64,
}

impl Tree {
    /// Builds the logical skeleton: groups, even-split ranges, child pointers, skip links.
    pub fn build(pi: &ParameterIndex, stats: &DatasetStats, opts: &BuildOptions) -> Result<Tree> {
        let (lo, hi) = stats.root_range();
        Self::build_scoped(pi, stats, opts, KeyRange::new(lo, hi), 0)
    }

    /// Builds a standalone skeleton over a fixed logical range whose top group sits at `level`.
    pub fn build_scoped(
        pi: &ParameterIndex,
        stats: &DatasetStats,
        opts: &BuildOptions,
        range: KeyRange,
        level: usize,
    ) -> Result<Tree> {
        let mut tree = Tree {
            groups: Vec::new(),
            m: opts.m,
            next_block_id: 0,
            key_count: 0,
            block_count: 0,
            routing_steps: 0,
        };
        let mut ctx = BuildCtx {
            pi,
            stats,
            opts,
            bytes: 0,
        };
        tree.build_group(&mut ctx, vec![0], range, level, 1.0)?;
        Ok(tree)
    }

    fn build_group(
        &mut self,
        ctx: &mut BuildCtx<'_>,
        path: Vec<u32>,
        range: KeyRange,
        level: usize,
        share: f64,
    ) -> Result<GroupId> {
        let params = ctx
            .pi
            .get(&path)
            .ok_or_else(|| Error::MissingPath(format_path(&path)))?
            .clone();
        params.validate(self.m)?;
        let y = params.y;
        let per_block = ctx.stats.estimate(range.lo, range.hi) * share / y as f64;
        let descend = level + 1 < ctx.opts.max_depth
            && per_block > params.split_threshold(self.m)
            && ctx.pi.has_children(&path);

        let gid = GroupId(self.groups.len());
        self.groups.push(BlockGroup {
            params: params.clone(),
            range,
            level,
            is_bottom: !descend,
            path: path.clone(),
            blocks: Vec::with_capacity(y),
            seed: mix_seed(ctx.opts.seed, &path),
        });
        ctx.bytes += GROUP_OVERHEAD + 4 * path.len() as u64;
        for j in 0..y {
            let brange = range.slice(j, y);
            let id = self.fresh_id();
            let block = if descend {
                let x = params.x;
                let mut children = Vec::with_capacity(x);
                for i in 0..x {
                    let mut cpath = path.clone();
                    cpath.push((j * x + i) as u32);
                    let (crange, cshare) = match params.kind {
                        BlockKind::Ordered => (brange.slice(i, x), share),
                        BlockKind::Unordered => (brange, share / x as f64),
                    };
                    children.push(self.build_group(ctx, cpath, crange, level + 1, cshare)?);
                }
                let body = match params.kind {
                    BlockKind::Ordered => BlockBody::OrderedInner(children),
                    BlockKind::Unordered => {
                        let expected = ctx.stats.estimate(brange.lo, brange.hi) * share;
                        let bloom = BloomFilter::new(expected.ceil() as usize);
                        ctx.bytes += bloom.size_bytes() as u64;
                        BlockBody::HashInner { children, bloom }
                    }
                };
                ctx.bytes += 8 * x as u64;
                IndexBlock {
                    id,
                    range: brange,
                    links: 0,
                    body,
                }
            } else {
                IndexBlock::leaf(id, params.kind, brange)
            };
            ctx.bytes += BLOCK_OVERHEAD;
            if let Some(budget) = ctx.opts.budget_bytes {
                if ctx.bytes > budget {
                    return Err(Error::BudgetExceeded {
                        bytes: ctx.bytes,
                        budget,
                    });
                }
            }
            self.groups[gid.0].blocks.push(block);
            self.block_count += 1;
        }
        self.groups[gid.0].create_skip_links();
        Ok(gid)
    }

    pub(crate) fn fresh_id(&mut self) -> u64 {
        let id = self.next_block_id;
        self.next_block_id += 1;
        id
    }

    pub fn group(&self, g: GroupId) -> &BlockGroup {
        &self.groups[g.0]
    }

    pub fn root(&self) -> &BlockGroup {
        &self.groups[ROOT.0]
    }

    /// Number of group levels.
    pub fn depth(&self) -> usize {
        self.groups.iter().map(|g| g.level + 1).max().unwrap_or(0)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn key_count(&self) -> usize {
        self.key_count
    }

    /// Routes one tuple down to a bottom block and stores it there.
    pub(crate) fn route_insert(
        &mut self,
        k: Key,
        o: Offset,
        routing: Routing,
        visit: &mut dyn FnMut(u64),
    ) {
        let mut g = ROOT;
        loop {
            self.routing_steps += 1;
            let group = &mut self.groups[g.0];
            let idx = match routing {
                Routing::Logical => {
                    let i = group.locate_logical(k);
                    visit(group.blocks[i].id);
                    i
                }
                Routing::Effective => {
                    let gref = &*group;
                    let hit = gref.skip_list_search_with(k, |i| visit(gref.blocks[i].id));
                    if hit.contains() {
                        hit.index
                    } else {
                        group.expand_range(k)
                    }
                }
            };
            let block = &mut group.blocks[idx];
            block.range.observe(k);
            let next = match &mut block.body {
                BlockBody::OrderedLeaf(_) | BlockBody::HashLeaf(_) => None,
                BlockBody::OrderedInner(children) => {
                    Some(children[block.range.slice_of(k, children.len())])
                }
                BlockBody::HashInner { children, bloom } => {
                    bloom.insert(k);
                    Some(children[hash_route(k, children.len())])
                }
            };
            match next {
                Some(child) => g = child,
                None => {
                    visit(block.id);
                    if block.leaf_insert(k, o) {
                        self.key_count += 1;
                    }
                    let limit = group.params.split_threshold(self.m);
                    if group.blocks[idx].key_count() as f64 > limit {
                        let mut next_id = self.next_block_id;
                        group.split_block(idx, &mut next_id);
                        self.next_block_id = next_id;
                        self.block_count += 1;
                    }
                    return;
                }
            }
        }
    }

    /// Keys stored under group `g`, each once.
    pub fn subtree_keys(&self, g: GroupId, out: &mut Vec<Key>) {
        for b in &self.groups[g.0].blocks {
            match &b.body {
                BlockBody::OrderedLeaf(entries) => out.extend(entries.iter().map(|e| e.key)),
                BlockBody::HashLeaf(map) => out.extend(map.keys().copied()),
                _ => {
                    for &c in b.children() {
                        self.subtree_keys(c, out);
                    }
                }
            }
        }
    }

    /// Every `(key, offset)` pair reachable from group `g`.
    pub fn subtree_pairs(&self, g: GroupId, out: &mut Vec<(Key, Offset)>) {
        for b in &self.groups[g.0].blocks {
            match &b.body {
                BlockBody::OrderedLeaf(_) | BlockBody::HashLeaf(_) => {
                    for e in b.sorted_entries() {
                        out.extend(e.offsets.iter().map(|&o| (e.key, o)));
                    }
                }
                _ => {
                    for &c in b.children() {
                        self.subtree_pairs(c, out);
                    }
                }
            }
        }
    }

    /// Resizes every hashed routing block's bloom filter to its actual key count.
    pub(crate) fn rebuild_blooms(&mut self) {
        for gi in 0..self.groups.len() {
            for bi in 0..self.groups[gi].blocks.len() {
                let children = match &self.groups[gi].blocks[bi].body {
                    BlockBody::HashInner { children, .. } => children.clone(),
                    _ => continue,
                };
                let mut keys = Vec::new();
                for c in children {
                    self.subtree_keys(c, &mut keys);
                }
                let mut fresh = BloomFilter::new(keys.len());
                for k in keys {
                    fresh.insert(k);
                }
                if let BlockBody::HashInner { bloom, .. } = &mut self.groups[gi].blocks[bi].body {
                    *bloom = fresh;
                }
            }
        }
    }

    /// Observed hull of a group: first non-empty minimum, last non-empty maximum.
    pub fn group_hull(&self, g: GroupId) -> Option<(Key, Key)> {
        let blocks = &self.groups[g.0].blocks;
        let lo = blocks.iter().find_map(|b| b.range.observed.map(|r| r.0))?;
        let hi = blocks.iter().rev().find_map(|b| b.range.observed.map(|r| r.1))?;
        Some((lo, hi))
    }

    /// Approximate footprint in bytes.
    pub fn size_bytes(&self) -> u64 {
        self.groups
            .iter()
            .map(|g| {
                GROUP_OVERHEAD
                    + 4 * g.path.len() as u64
                    + g.blocks.iter().map(|b| b.size_bytes() as u64).sum::<u64>()
            })
            .sum()
    }

    /// Keys stored divided by total block capacity.
    pub fn space_utilization(&self) -> f64 {
        if self.block_count == 0 {
            return 0.0;
        }
        (self.key_count as f64 / (self.block_count * self.m) as f64).min(1.0)
    }

    /// Recounts keys and blocks by traversal.
    pub fn recount(&self) -> (usize, usize) {
        let blocks = self.groups.iter().map(|g| g.blocks.len()).sum();
        let keys = self
            .groups
            .iter()
            .flat_map(|g| g.blocks.iter())
            .map(|b| b.key_count())
            .sum();
        (keys, blocks)
    }

    /// Replaces group `at` and everything below it with the whole of `sub`.
    ///
    /// `sub`'s top group takes over the slot of `at`, so the parent pointer is untouched;
    /// its block ids are renumbered from this arena's counter. Orphaned groups are
    /// dropped afterwards, which may renumber other groups but never block ids.
    pub fn graft(&mut self, at: GroupId, sub: Tree) {
        let prefix = self.groups[at.0].path.clone();
        let base = self.groups.len();
        let slot = |g: GroupId| if g.0 == 0 { at } else { GroupId(base + g.0 - 1) };
        let id_base = self.next_block_id;
        let mut top = None;
        for (i, mut g) in sub.groups.into_iter().enumerate() {
            let mut path = prefix.clone();
            path.extend_from_slice(&g.path[1..]);
            g.path = path;
            for b in &mut g.blocks {
                b.id += id_base;
                match &mut b.body {
                    BlockBody::OrderedInner(children) | BlockBody::HashInner { children, .. } => {
                        for c in children.iter_mut() {
                            *c = slot(*c);
                        }
                    }
                    _ => {}
                }
            }
            if i == 0 {
                top = Some(g);
            } else {
                self.groups.push(g);
            }
        }
        self.groups[at.0] = top.expect("subtree has a top group");
        self.next_block_id = id_base + sub.next_block_id;
        self.compact();
        let (keys, blocks) = self.recount();
        self.key_count = keys;
        self.block_count = blocks;
    }

    /// Drops groups unreachable from the root and renumbers the rest in place order.
    fn compact(&mut self) {
        let mut reachable = vec![false; self.groups.len()];
        let mut stack = vec![ROOT];
        while let Some(g) = stack.pop() {
            if std::mem::replace(&mut reachable[g.0], true) {
                continue;
            }
            for b in &self.groups[g.0].blocks {
                stack.extend_from_slice(b.children());
            }
        }
        let mut remap = vec![usize::MAX; self.groups.len()];
        let mut next = 0;
        for (i, &r) in reachable.iter().enumerate() {
            if r {
                remap[i] = next;
                next += 1;
            }
        }
        let old = std::mem::take(&mut self.groups);
        for (i, mut g) in old.into_iter().enumerate() {
            if !reachable[i] {
                continue;
            }
            for b in &mut g.blocks {
                if let BlockBody::OrderedInner(children) | BlockBody::HashInner { children, .. } =
                    &mut b.body
                {
                    for c in children.iter_mut() {
                        *c = GroupId(remap[c.0]);
                    }
                }
            }
            self.groups.push(g);
        }
    }

    /// Parent group of every group; `None` for the root.
    pub fn parents(&self) -> Vec<Option<(GroupId, usize)>> {
        let mut out = vec![None; self.groups.len()];
        for (gi, g) in self.groups.iter().enumerate() {
            for (bi, b) in g.blocks.iter().enumerate() {
                for c in b.children() {
                    out[c.0] = Some((GroupId(gi), bi));
                }
            }
        }
        out
    }

    /// Checks every group's invariants and that routing hulls cover their subtrees.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (gi, g) in self.groups.iter().enumerate() {
            g.check_invariants(self.m)
                .map_err(|e| format!("group {} ({}): {e}", gi, format_path(&g.path)))?;
            for (bi, b) in g.blocks.iter().enumerate() {
                for &c in b.children() {
                    if let Some((lo, hi)) = self.group_hull(c) {
                        let ok = matches!(b.range.observed, Some((a, z)) if a <= lo && hi <= z);
                        if !ok {
                            return Err(format!(
                                "group {gi} block {bi}: child hull [{lo},{hi}] escapes {}",
                                b.range
                            ));
                        }
                    }
                }
            }
        }
        let (keys, blocks) = self.recount();
        if keys != self.key_count || blocks != self.block_count {
            return Err(format!(
                "counters drifted: keys {} vs {keys}, blocks {} vs {blocks}",
                self.key_count, self.block_count
            ));
        }
        Ok(())
    }
}
