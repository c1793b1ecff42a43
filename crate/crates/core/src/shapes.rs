//! Fixed configurations that reproduce conventional index layouts, and
//! predicates that recognise their shapes.

use crate::block::BlockBody;
use crate::param_index::{PathPattern, Segment};
use crate::params::{BlockKind, HyperParams};
use crate::tree::{Tree, MAX_DEPTH};
use crate::ParameterIndex;

fn every_level(params: HyperParams, depth: usize) -> ParameterIndex {
    let mut pi = ParameterIndex::new();
    let mut pat = PathPattern::exact(&[0]);
    for _ in 0..depth {
        pi.insert(pat.clone(), params.clone());
        pat = pat.child(Segment::Any);
    }
    pi
}

/// All-ordered, one block per group, full fanout.
pub fn btree_config(m: usize) -> ParameterIndex {
    every_level(
        HyperParams {
            kind: BlockKind::Ordered,
            x: m,
            y: 1,
            alpha: 1.0,
            beta: 0.5,
            gamma: Vec::new(),
        },
        MAX_DEPTH,
    )
}

/// A single group of one hashed block with no layer below.
pub fn hash_config() -> ParameterIndex {
    every_level(
        HyperParams {
            kind: BlockKind::Unordered,
            x: 1,
            y: 1,
            alpha: 1.0,
            beta: 0.5,
            gamma: Vec::new(),
        },
        1,
    )
}

/// One routing block over a single bottom group of `y` blocks with every skip link.
pub fn skiplist_config(y: usize) -> ParameterIndex {
    let mut pi = ParameterIndex::new();
    pi.insert(
        PathPattern::exact(&[0]),
        HyperParams {
            kind: BlockKind::Ordered,
            x: 1,
            y: 1,
            alpha: 1.0,
            beta: 0.5,
            gamma: Vec::new(),
        },
    );
    pi.insert(
        PathPattern::exact(&[0, 0]),
        HyperParams {
            kind: BlockKind::Ordered,
            x: 1,
            y,
            alpha: 1.0,
            beta: 0.5,
            gamma: vec![1.0; crate::params::link_levels(y)],
        },
    );
    pi
}

/// Every group has one ordered block and every routing block has exactly `x` children.
pub fn is_btree_shape(tree: &Tree) -> bool {
    tree.groups.iter().all(|g| {
        g.params.kind == BlockKind::Ordered
            && g.blocks.len() == 1
            && g.blocks.iter().all(|b| match &b.body {
                BlockBody::OrderedInner(c) => c.len() == g.params.x,
                BlockBody::OrderedLeaf(_) => true,
                _ => false,
            })
    })
}

/// One layer of hashed bottom blocks.
pub fn is_single_layer_hash(tree: &Tree) -> bool {
    tree.depth() == 1
        && tree
            .groups
            .iter()
            .all(|g| g.is_bottom && g.params.kind == BlockKind::Unordered)
}

/// One group per layer, with block counts strictly growing downward.
pub fn is_skiplist_shape(tree: &Tree) -> bool {
    let depth = tree.depth();
    let mut per_level = vec![Vec::new(); depth];
    for g in &tree.groups {
        per_level[g.level].push(g.blocks.len());
    }
    per_level.iter().all(|l| l.len() == 1)
        && per_level.windows(2).all(|w| w[0][0] < w[1][0])
        && tree.groups.iter().all(|g| g.params.kind == BlockKind::Ordered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::PhysicalIndex;
    use crate::stats::DatasetStats;
    use crate::tree::BuildOptions;

    fn uniform(n: u64) -> Vec<u64> {
        (0..n).map(|i| i.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 20).collect()
    }

    #[test]
    fn btree_config_gives_btree_shape() {
        let keys = uniform(100_000);
        let opts = BuildOptions::default();
        let idx = PhysicalIndex::from_keys(&btree_config(opts.m), &keys, &DatasetStats::from_keys(&keys), &opts)
            .unwrap();
        assert!(is_btree_shape(&idx));
        assert!(idx.depth() > 1);
    }

    #[test]
    fn hash_config_lookups_take_two_visits() {
        let keys = uniform(5_000);
        let opts = BuildOptions {
            m: 8192,
            ..BuildOptions::default()
        };
        let idx = PhysicalIndex::from_keys(&hash_config(), &keys, &DatasetStats::from_keys(&keys), &opts)
            .unwrap();
        assert!(is_single_layer_hash(&idx));
        for &k in keys.iter().step_by(7) {
            assert!(idx.lookup(k).visited_blocks <= 2);
        }
    }

    #[test]
    fn skiplist_config_gives_skiplist_shape() {
        let keys = uniform(20_000);
        let opts = BuildOptions::default();
        let idx = PhysicalIndex::from_keys(&skiplist_config(128), &keys, &DatasetStats::from_keys(&keys), &opts)
            .unwrap();
        assert!(is_skiplist_shape(&idx));
        assert!(!is_btree_shape(&idx));
    }
}
