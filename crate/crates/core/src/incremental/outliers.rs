//! Per-block performance records and bottom-up outlier detection.

use std::collections::{BTreeMap, BTreeSet};

use crate::block::GroupId;
use crate::error::{Error, Result};
use crate::tree::{Tree, ROOT};
use crate::workload::CostReport;

use super::classes::ClassMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierConfig {
    /// Mismatching epochs in a row tolerated before a block is flagged.
    pub tau: usize,
    /// Relative growth over the post-tune cost tolerated before a block is flagged.
    pub omega: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig { tau: 3, omega: 0.5 }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || !(self.omega > 0.0) {
            return Err(Error::InvalidParams(format!(
                "outlier thresholds need tau >= 1 and omega > 0, got tau={} omega={}",
                self.tau, self.omega
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPerfRecord {
    pub block_id: u64,
    /// Measured cost in the first epoch after the block was (re)built.
    pub x0: f64,
    /// Measured cost per epoch.
    pub x_history: Vec<f64>,
    /// Predicted class per epoch.
    pub pred_history: Vec<usize>,
}

impl BlockPerfRecord {
    fn new(block_id: u64, cost: f64) -> Self {
        BlockPerfRecord {
            block_id,
            x0: cost,
            x_history: Vec::new(),
            pred_history: Vec::new(),
        }
    }

    /// Trailing epochs whose predicted class differs from the measured one.
    pub fn mismatch_run(&self, classes: &ClassMap) -> usize {
        self.x_history
            .iter()
            .zip(&self.pred_history)
            .rev()
            .take_while(|(x, p)| classes.class(**x) != **p)
            .count()
    }

    pub fn is_outlier(&self, classes: &ClassMap, cfg: &OutlierConfig) -> bool {
        let grown = self
            .x_history
            .last()
            .is_some_and(|&x| x - self.x0 > cfg.omega * self.x0);
        grown || self.mismatch_run(classes) > cfg.tau
    }
}

/// Records of every block currently in the index.
#[derive(Clone, Debug, Default)]
pub struct PerfRecords {
    pub records: BTreeMap<u64, BlockPerfRecord>,
    pub epochs: usize,
}

impl PerfRecords {
    /// Appends one epoch. `predicted` maps block ids to their predicted class.
    /// Blocks without a record start one with `x0` set to this measurement;
    /// records of blocks that left the index are dropped.
    pub fn record_epoch(&mut self, tree: &Tree, report: &CostReport, predicted: &BTreeMap<u64, usize>) {
        let live: BTreeSet<u64> = tree
            .groups
            .iter()
            .flat_map(|g| g.blocks.iter().map(|b| b.id))
            .collect();
        self.records.retain(|id, _| live.contains(id));
        for &id in &live {
            let cost = report.per_block.get(&id).map_or(0.0, |s| s.cost);
            let rec = self
                .records
                .entry(id)
                .or_insert_with(|| BlockPerfRecord::new(id, cost));
            rec.x_history.push(cost);
            rec.pred_history.push(predicted.get(&id).copied().unwrap_or(0));
        }
        self.epochs += 1;
    }

    /// Drops the records under `g` so the next epoch re-seeds their `x0`.
    pub fn reset_subtree(&mut self, tree: &Tree, g: GroupId) {
        let mut stack = vec![g];
        while let Some(g) = stack.pop() {
            for b in &tree.group(g).blocks {
                self.records.remove(&b.id);
                stack.extend_from_slice(b.children());
            }
        }
    }
}

/// Maximal outlier blocks, found bottom-up: bottom blocks are always checked, a routing
/// block only when one of its children's blocks is an outlier.
pub fn detect_outliers(
    tree: &Tree,
    records: &PerfRecords,
    classes: &ClassMap,
    cfg: &OutlierConfig,
) -> Vec<u64> {
    fn walk(
        tree: &Tree,
        g: GroupId,
        records: &PerfRecords,
        classes: &ClassMap,
        cfg: &OutlierConfig,
        out: &mut Vec<u64>,
    ) -> bool {
        let mut any = false;
        for b in &tree.group(g).blocks {
            let rule = || {
                records
                    .records
                    .get(&b.id)
                    .is_some_and(|r| r.is_outlier(classes, cfg))
            };
            let flagged = if b.is_bottom() {
                rule()
            } else {
                let mut below = Vec::new();
                let mut child_hit = false;
                for &c in b.children() {
                    child_hit |= walk(tree, c, records, classes, cfg, &mut below);
                }
                let flagged = child_hit && rule();
                if !flagged {
                    out.extend(below);
                }
                flagged
            };
            if flagged {
                out.push(b.id);
            }
            any |= flagged;
        }
        any
    }
    let mut out = Vec::new();
    walk(tree, ROOT, records, classes, cfg, &mut out);
    out.sort_unstable();
    out
}
