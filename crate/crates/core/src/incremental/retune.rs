//! Scoped re-search of outlier groups, scored by the cost predictor, and the graft that installs the winner.

use std::collections::BTreeSet;

use crate::block::GroupId;
use crate::controller::reward::{compute_reward, BUDGET_VIOLATION_REWARD};
use crate::controller::search::{parallel_map, search_with, Evaluate, Evaluation};
use crate::controller::{Model, TrainConfig};
use crate::error::{Error, Result};
use crate::index::{LogicalIndex, PhysicalIndex};
use crate::key::{Key, KeyRange, Offset};
use crate::stats::DatasetStats;
use crate::tree::{BuildOptions, Tree, ROOT};
use crate::workload::{measure_baseline, run_workload, CostMode, OpKind, WorkloadOp};
use crate::ParameterIndex;

use super::predictor::{query_keys, CostPredictor, SampleTree};

/// Everything needed to rebuild one group's subtree on the side.
pub struct Scope {
    pub pairs: Vec<(Key, Offset)>,
    pub stats: DatasetStats,
    pub range: KeyRange,
    pub level: usize,
    /// Sorted keys of the ops that fall inside the scope.
    pub query_keys: Vec<Key>,
    pub ops: Vec<WorkloadOp>,
}

impl Scope {
    pub fn of(tree: &Tree, g: GroupId, ops: &[WorkloadOp]) -> Self {
        let group = tree.group(g);
        let mut pairs = Vec::new();
        tree.subtree_pairs(g, &mut pairs);
        pairs.sort_unstable();
        let mut keys: Vec<Key> = pairs.iter().map(|p| p.0).collect();
        keys.dedup();
        let (mut lo, mut hi) = (group.range.lo, group.range.hi.saturating_sub(1));
        if let Some((a, b)) = tree.group_hull(g) {
            lo = lo.min(a);
            hi = hi.max(b);
        }
        let ops: Vec<WorkloadOp> = ops
            .iter()
            .filter(|op| lo <= op.key && op.key <= hi)
            .cloned()
            .collect();
        Scope {
            stats: DatasetStats::from_keys(&keys),
            pairs,
            range: group.range,
            level: group.level,
            query_keys: query_keys(&ops),
            ops,
        }
    }

    pub fn keys(&self) -> Vec<Key> {
        let mut keys: Vec<Key> = self.pairs.iter().map(|p| p.0).collect();
        keys.dedup();
        keys
    }

    /// Builds, materializes and finalizes a standalone replacement.
    pub fn build(&self, config: &ParameterIndex, opts: &BuildOptions) -> Result<Tree> {
        let tree = Tree::build_scoped(config, &self.stats, opts, self.range, self.level)?;
        let mut logical = LogicalIndex::from_tree(tree);
        logical.materialize_pairs(&self.pairs);
        Ok(logical.finalize().into_tree())
    }
}

/// Scores configs for a scope with the predictor instead of running the workload.
pub struct PredictedEvaluator<'a> {
    pub scope: &'a Scope,
    pub predictor: &'a CostPredictor,
    pub c_b: f64,
    pub rho: f64,
    pub build: BuildOptions,
}

impl<'a> PredictedEvaluator<'a> {
    pub fn new(scope: &'a Scope, predictor: &'a CostPredictor, cfg: &TrainConfig) -> Self {
        PredictedEvaluator {
            c_b: measure_baseline(&scope.keys(), &scope.ops, CostMode::VisitCount).max(f64::MIN_POSITIVE),
            scope,
            predictor,
            rho: cfg.rho,
            build: cfg.build_options(),
        }
    }
}

impl Evaluate for PredictedEvaluator<'_> {
    fn stats(&self) -> &DatasetStats {
        &self.scope.stats
    }

    fn evaluate(&mut self, config: &ParameterIndex) -> Result<Evaluation> {
        self.score(config)
    }

    fn evaluate_batch(&mut self, configs: &[&ParameterIndex], workers: usize) -> Result<Vec<Evaluation>> {
        let this = &*self;
        parallel_map(configs, workers, |c| this.score(c)).into_iter().collect()
    }
}

impl PredictedEvaluator<'_> {
    pub fn score(&self, config: &ParameterIndex) -> Result<Evaluation> {
        let over = |bytes| Evaluation {
            reward: BUDGET_VIOLATION_REWARD,
            c_t: f64::INFINITY,
            c_s: 0.0,
            depth: 0,
            groups: 0,
            bytes,
            over_budget: true,
        };
        let sub = match self.scope.build(config, &self.build) {
            Ok(t) => t,
            Err(Error::BudgetExceeded { bytes, .. }) => return Ok(over(bytes)),
            Err(e) => return Err(e),
        };
        let bytes = sub.size_bytes();
        if self.build.budget_bytes.is_some_and(|b| bytes > b) {
            return Ok(over(bytes));
        }
        let sample = SampleTree::from_tree(&sub, ROOT, &self.scope.query_keys, None);
        let c_t = self.predictor.estimate_cost(&sample);
        let c_s = sub.space_utilization();
        Ok(Evaluation {
            reward: compute_reward(self.c_b, c_t, c_s, self.rho),
            c_t,
            c_s,
            depth: sub.depth(),
            groups: sub.group_count(),
            bytes,
            over_budget: false,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScopeOutcome {
    /// Id of the first block of the group that was re-searched.
    pub anchor: u64,
    pub predicted_old: f64,
    pub predicted_new: f64,
    pub replaced: bool,
}

fn group_of(tree: &Tree, id: u64) -> Option<GroupId> {
    tree.groups
        .iter()
        .position(|g| g.blocks.iter().any(|b| b.id == id))
        .map(GroupId)
}

/// Groups holding the outlier blocks, minus any group that sits under another one.
pub fn outlier_scopes(tree: &Tree, outliers: &[u64]) -> Vec<GroupId> {
    let groups: BTreeSet<GroupId> = outliers.iter().filter_map(|&id| group_of(tree, id)).collect();
    let parents = tree.parents();
    groups
        .iter()
        .copied()
        .filter(|&g| {
            let mut cur = parents[g.0];
            while let Some((p, _)) = cur {
                if groups.contains(&p) {
                    return false;
                }
                cur = parents[p.0];
            }
            true
        })
        .collect()
}

/// Re-searches every outlier scope and grafts in replacements the predictor rates cheaper
/// and that also replay the scope's ops more cheaply.
/// The live index is only touched by the final graft of each scope.
pub fn retune(
    index: &mut PhysicalIndex,
    outliers: &[u64],
    predictor: &CostPredictor,
    model: &Model,
    ops: &[WorkloadOp],
    cfg: &TrainConfig,
) -> Result<Vec<ScopeOutcome>> {
    let anchors: Vec<u64> = outlier_scopes(index, outliers)
        .into_iter()
        .map(|g| index.group(g).blocks[0].id)
        .collect();
    let mut out = Vec::with_capacity(anchors.len());
    for anchor in anchors {
        let Some(g) = group_of(index, anchor) else { continue };
        let scope = Scope::of(index, g, ops);
        if scope.ops.is_empty() || scope.pairs.is_empty() {
            continue;
        }
        let old = SampleTree::from_tree(index, g, &scope.query_keys, None);
        let predicted_old = predictor.estimate_cost(&old);
        let scoped_cfg = TrainConfig {
            seed: cfg.seed ^ anchor.wrapping_mul(0x9e37_79b9_7f4a_7c15),
            ..cfg.clone()
        };
        let mut eval = PredictedEvaluator::new(&scope, predictor, &scoped_cfg);
        let found = search_with(&mut eval, &scoped_cfg, model.clone())?;
        let mut replaced = !found.best_eval.over_budget && found.best_eval.c_t < predicted_old;
        if replaced {
            // One measured replay of the scope's ops guards against predictor error.
            // Keys the ops inserted are taken out first so the replay pays for real inserts.
            let sub = scope.build(&found.best, &scoped_cfg.build_options())?;
            let mut candidate = index.clone();
            candidate.graft(g, sub);
            let replay = |idx: &PhysicalIndex| {
                let mut idx = idx.clone();
                for op in scope.ops.iter().filter(|o| o.kind == OpKind::Insert) {
                    idx.delete(op.key);
                }
                run_workload(&mut idx, &scope.ops, CostMode::VisitCount).c_t
            };
            replaced = replay(&candidate) < replay(index);
            if replaced {
                *index = candidate;
            }
        }
        out.push(ScopeOutcome {
            anchor,
            predicted_old,
            predicted_new: found.best_eval.c_t,
            replaced,
        });
    }
    Ok(out)
}
