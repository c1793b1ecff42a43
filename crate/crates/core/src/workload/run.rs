use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::block::GroupId;
use crate::error::{Error, Result};
use crate::index::PhysicalIndex;
use crate::key::{Key, Offset};
use crate::tree::{Tree, ROOT};

use super::ops::{OpKind, WorkloadOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostMode {
    /// Blocks visited per op; deterministic.
    VisitCount,
    /// Elapsed nanoseconds per op.
    WallClock,
}

impl FromStr for CostMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "visitcount" | "visits" => Ok(CostMode::VisitCount),
            "wallclock" | "ns" => Ok(CostMode::WallClock),
            _ => Err(Error::UnknownStrategy {
                kind: "cost mode",
                name: s.into(),
                known: "visit-count, wall-clock".into(),
            }),
        }
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::VisitCount => "visit-count",
            CostMode::WallClock => "wall-clock",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockStat {
    /// Own cost plus the cost of every descendant block.
    pub cost: f64,
    /// Queries that touched this block itself.
    pub queries: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KindStat {
    pub count: u64,
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostReport {
    pub c_t: f64,
    pub c_b: Option<f64>,
    pub c_s: f64,
    pub bytes: u64,
    pub per_block: BTreeMap<u64, BlockStat>,
    pub per_kind: BTreeMap<OpKind, KindStat>,
}

impl CostReport {
    /// CSV with one row per op kind present plus a total row; header only when empty.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Malformed(e.to_string());
        w.write_record(["kind", "count", "total_cost", "avg_cost"]).map_err(io)?;
        let mut total = KindStat::default();
        for (kind, s) in &self.per_kind {
            total.count += s.count;
            total.cost += s.cost;
            w.write_record([
                kind.as_str().to_string(),
                s.count.to_string(),
                format!("{}", s.cost),
                format!("{}", s.cost / s.count as f64),
            ])
            .map_err(io)?;
        }
        if total.count > 0 {
            w.write_record([
                "total".to_string(),
                total.count.to_string(),
                format!("{}", total.cost),
                format!("{}", total.cost / total.count as f64),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Malformed(e.to_string()))
    }
}

/// Executes `ops` in order; reads through lookup/range search, writes through insert/delete.
/// New keys get offsets counting up from the index's key count at start.
pub fn run_workload(index: &mut PhysicalIndex, ops: &[WorkloadOp], mode: CostMode) -> CostReport {
    let mut own: BTreeMap<u64, BlockStat> = BTreeMap::new();
    let mut report = CostReport::default();
    let mut next_offset = index.key_count() as Offset;
    let mut touched: Vec<u64> = Vec::new();
    for op in ops {
        touched.clear();
        let start = Instant::now();
        let visit = |id: u64| touched.push(id);
        match op.kind {
            OpKind::Lookup => {
                index.lookup_with(op.key, visit);
            }
            OpKind::Range => {
                index.range_search_with(op.key, op.hi.expect("range op carries hi"), visit);
            }
            OpKind::Insert => {
                index.insert_with(op.key, next_offset, visit);
                next_offset += 1;
            }
            OpKind::Delete => {
                index.delete_with(op.key, visit);
            }
        }
        let elapsed = start.elapsed().as_nanos() as f64;
        let visits = touched.len().max(1) as f64;
        let cost = match mode {
            CostMode::VisitCount => visits,
            CostMode::WallClock => elapsed,
        } * op.weight;
        report.c_t += cost;
        let k = report.per_kind.entry(op.kind).or_default();
        k.count += 1;
        k.cost += cost;
        let per_visit = cost / visits;
        touched.sort_unstable();
        let mut last = None;
        for &id in &touched {
            let s = own.entry(id).or_default();
            s.cost += per_visit;
            if last != Some(id) {
                s.queries += 1;
                last = Some(id);
            }
        }
    }
    report.per_block = aggregate(index, own);
    report.c_s = index.space_utilization();
    report.bytes = index.size_bytes();
    report
}

/// Adds every block's descendants' cost into its own. Ids no longer in the tree keep their own cost.
fn aggregate(tree: &Tree, mut own: BTreeMap<u64, BlockStat>) -> BTreeMap<u64, BlockStat> {
    fn walk(tree: &Tree, g: GroupId, own: &mut BTreeMap<u64, BlockStat>) -> f64 {
        let mut group_total = 0.0;
        for b in &tree.group(g).blocks {
            let below: f64 = b.children().iter().map(|&c| walk(tree, c, own)).sum();
            let s = own.entry(b.id).or_default();
            s.cost += below;
            group_total += s.cost;
        }
        group_total
    }
    walk(tree, ROOT, &mut own);
    own
}

/// Cost of answering `ops` by scanning the unsorted key array with no index.
pub fn measure_baseline(keys: &[Key], ops: &[WorkloadOp], mode: CostMode) -> f64 {
    let mut data = keys.to_vec();
    let mut total = 0.0;
    let mut sink = 0usize;
    for op in ops {
        let start = Instant::now();
        let visits = match op.kind {
            OpKind::Lookup => {
                sink += data.iter().filter(|&&k| k == op.key).count();
                data.len()
            }
            OpKind::Range => {
                let hi = op.hi.expect("range op carries hi");
                sink += data.iter().filter(|&&k| op.key <= k && k <= hi).count();
                data.len()
            }
            OpKind::Insert => {
                data.push(op.key);
                1
            }
            OpKind::Delete => {
                let n = data.len();
                data.retain(|&k| k != op.key);
                n
            }
        };
        let cost = match mode {
            CostMode::VisitCount => visits.max(1) as f64,
            CostMode::WallClock => start.elapsed().as_nanos() as f64,
        };
        total += cost * op.weight;
    }
    std::hint::black_box(sink);
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::btree_config;
    use crate::stats::DatasetStats;
    use crate::tree::BuildOptions;
    use crate::workload::keys::{gen_keys, Uniform64};
    use crate::workload::ops::{Generator, WorkloadSpec};

    fn small_index(keys: &[Key]) -> PhysicalIndex {
        let opts = BuildOptions { m: 16, ..BuildOptions::default() };
        PhysicalIndex::from_keys(&btree_config(16), keys, &DatasetStats::from_keys(keys), &opts).unwrap()
    }

    #[test]
    fn empty_ops_cost_nothing() {
        let keys = gen_keys(&Uniform64, 100, 1);
        let mut idx = small_index(&keys);
        let r = run_workload(&mut idx, &[], CostMode::VisitCount);
        assert_eq!(r.c_t, 0.0);
        assert_eq!(measure_baseline(&keys, &[], CostMode::VisitCount), 0.0);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "kind,count,total_cost,avg_cost\n");
    }

    #[test]
    fn weight_multiplies_path_length() {
        let keys = gen_keys(&Uniform64, 1000, 1);
        let mut idx = small_index(&keys);
        let path = idx.lookup(keys[3]).visited_blocks as f64;
        let op = WorkloadOp { weight: 3.0, ..WorkloadOp::lookup(keys[3]) };
        let r = run_workload(&mut idx, &[op], CostMode::VisitCount);
        assert_eq!(r.c_t, 3.0 * path);
    }

    #[test]
    fn baseline_lookup_costs_n() {
        let keys = gen_keys(&Uniform64, 777, 1);
        assert_eq!(measure_baseline(&keys, &[WorkloadOp::lookup(keys[0])], CostMode::VisitCount), 777.0);
    }

    #[test]
    fn root_blocks_carry_total_cost() {
        let keys = gen_keys(&Uniform64, 5000, 4);
        let mut idx = small_index(&keys);
        let ops = Generator { scale: 5000, ..Generator::default() }.generate(WorkloadSpec::W1, &keys, 2);
        let r = run_workload(&mut idx, &ops, CostMode::VisitCount);
        let root: f64 = idx.root().blocks.iter().map(|b| r.per_block[&b.id].cost).sum();
        assert!((root - r.c_t).abs() < 1e-6 * r.c_t, "{root} vs {}", r.c_t);
        assert!(r.c_t < measure_baseline(&keys, &ops, CostMode::VisitCount));
    }
}
