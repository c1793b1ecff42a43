use std::ops::{Deref, DerefMut};

use crate::error::Result;
use crate::key::{Key, Offset};
use crate::param_index::ParameterIndex;
use crate::stats::DatasetStats;
use crate::tree::{BuildOptions, Routing, Tree};

/// Structure-only skeleton. Accepts tuples but cannot answer queries.
#[derive(Clone, Debug)]
pub struct LogicalIndex {
    tree: Tree,
}

impl LogicalIndex {
    pub fn build(pi: &ParameterIndex, stats: &DatasetStats, opts: &BuildOptions) -> Result<Self> {
        Ok(LogicalIndex {
            tree: Tree::build(pi, stats, opts)?,
        })
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    /// Streams one tuple down by logical ranges.
    pub fn materialize(&mut self, k: Key, o: Offset) {
        self.tree.route_insert(k, o, Routing::Logical, &mut |_| {});
    }

    /// Streams `keys`, using each key's position as its offset.
    pub fn materialize_all(&mut self, keys: &[Key]) {
        for (i, &k) in keys.iter().enumerate() {
            self.materialize(k, i as Offset);
        }
    }

    pub fn materialize_pairs(&mut self, pairs: &[(Key, Offset)]) {
        for &(k, o) in pairs {
            self.materialize(k, o);
        }
    }

    pub fn from_tree(tree: Tree) -> Self {
        LogicalIndex { tree }
    }

    pub fn finalize(self) -> PhysicalIndex {
        let mut p = PhysicalIndex { tree: self.tree };
        p.finalize();
        p
    }
}

/// Queryable index: routing follows observed ranges.
#[derive(Clone, Debug)]
pub struct PhysicalIndex {
    tree: Tree,
}

impl PhysicalIndex {
    /// Build, materialize `keys` (offset = position) and finalize in one go.
    pub fn from_keys(
        pi: &ParameterIndex,
        keys: &[Key],
        stats: &DatasetStats,
        opts: &BuildOptions,
    ) -> Result<Self> {
        let mut logical = LogicalIndex::build(pi, stats, opts)?;
        logical.materialize_all(keys);
        Ok(logical.finalize())
    }

    /// Resizes bloom filters to their final key counts. Safe to call repeatedly.
    pub fn finalize(&mut self) {
        self.tree.rebuild_blooms();
    }

    pub fn into_tree(self) -> Tree {
        self.tree
    }

    pub fn from_tree(tree: Tree) -> Self {
        PhysicalIndex { tree }
    }
}

impl Deref for PhysicalIndex {
    type Target = Tree;
    fn deref(&self) -> &Tree {
        &self.tree
    }
}

impl DerefMut for PhysicalIndex {
    fn deref_mut(&mut self) -> &mut Tree {
        &mut self.tree
    }
}
