//! Tree-structured cost predictor: a per-class linear scorer fed by each block's data,
//! query and configuration features plus its children's predictions.

use std::fs;
use std::path::Path;

use crate::block::{BlockBody, GroupId};
use crate::controller::model::{envelope, open_envelope, softmax};
use crate::controller::updater::kl_categorical;
use crate::error::{Error, Result};
use crate::key::Key;
use crate::group::Landing;
use crate::hash::hash_route;
use crate::tree::{Tree, ROOT};
use crate::workload::{CostReport, WorkloadOp};

use super::classes::{ClassMap, CLASSES};

pub const PREDICTOR_MAGIC: &[u8; 8] = b"NISPRD01";
const DATA_BINS: usize = 8;
const STATIC: usize = 10 + DATA_BINS + 4;
/// Static features, then one-hots of: landing-query bucket, path-query class, mean child
/// distribution (dense), class of summed child cost, class of path queries plus child cost.
pub const FEATURES: usize = STATIC + 5 * CLASSES;
const PRIOR: f64 = 6.0;
const SMOOTHING: f64 = 0.01;
const BATCH: usize = 32;

/// One block of a sampled index, children listed before parents.
#[derive(Clone, Debug)]
pub struct Node {
    pub block_id: u64,
    pub group: GroupId,
    pub dense: [f64; STATIC],
    /// Log bucket of the queries whose key falls inside the block.
    pub query_bucket: usize,
    /// Queries whose search path inside the group crosses this block, plus leaf probes.
    pub path_queries: f64,
    pub children: Vec<usize>,
    /// Measured cost including descendants, when a report was supplied.
    pub cost: f64,
}

/// A flattened index annotated for the predictor. Blocks without data, queries or
/// kept children are left out; they cost nothing.
#[derive(Clone, Debug)]
pub struct SampleTree {
    pub nodes: Vec<Node>,
    /// Nodes of the top group.
    pub roots: Vec<usize>,
}

/// Bucket of a query count on a log scale from 1 to `total`; 0 when no query lands.
fn query_bucket(q: f64, total: f64) -> usize {
    if q < 0.5 {
        return 0;
    }
    let span = (total.max(2.0)).ln();
    (1 + ((q.max(1.0).ln() / span) * (CLASSES - 2) as f64).round() as usize).min(CLASSES - 1)
}

struct Scope<'a> {
    tree: &'a Tree,
    total_keys: f64,
    total_q: f64,
    report: Option<&'a CostReport>,
}

impl SampleTree {
    /// Annotates the subtree under `top`. `query_keys` must be sorted.
    pub fn from_tree(tree: &Tree, top: GroupId, query_keys: &[Key], report: Option<&CostReport>) -> Self {
        let mut s = SampleTree {
            nodes: Vec::new(),
            roots: Vec::new(),
        };
        let mut keys = Vec::new();
        tree.subtree_keys(top, &mut keys);
        let scope = Scope {
            tree,
            total_keys: keys.len().max(1) as f64,
            total_q: query_keys.len().max(1) as f64,
            report,
        };
        s.roots = s.walk(&scope, top, query_keys);
        s
    }

    /// `qk` holds the sorted query keys routed into group `g`.
    fn walk(&mut self, sc: &Scope<'_>, g: GroupId, qk: &[Key]) -> Vec<usize> {
        let tree = sc.tree;
        let group = tree.group(g);
        let p = &group.params;
        let m = tree.m as f64;
        let n = group.blocks.len();
        // Each run of keys sharing a landing block (or gap) follows one search path.
        let mut landing = vec![0.0; n];
        let mut path = vec![0.0; n];
        let mut routed: Vec<Vec<Vec<Key>>> = group
            .blocks
            .iter()
            .map(|b| vec![Vec::new(); b.children().len()])
            .collect();
        let mut i = 0;
        while i < qk.len() {
            let hit = group.skip_list_search(qk[i]);
            let end = match (hit.contains(), group.blocks[hit.index].range.observed) {
                (true, Some((_, hi))) => i + qk[i..].partition_point(|&k| k <= hi),
                _ => {
                    let from = match hit.landing {
                        Landing::Before => 0,
                        _ => hit.index + 1,
                    };
                    let next_lo = group.blocks[from..]
                        .iter()
                        .find_map(|b| b.range.observed.map(|r| r.0))
                        .unwrap_or(Key::MAX);
                    i + qk[i..].partition_point(|&k| k < next_lo).max(1)
                }
            };
            let run = (end - i) as f64;
            group.skip_list_search_with(qk[i], |j| path[j] += run);
            if hit.contains() {
                let t = hit.index;
                let b = &group.blocks[t];
                landing[t] += run;
                match &b.body {
                    BlockBody::OrderedLeaf(_) | BlockBody::HashLeaf(_) => path[t] += run,
                    BlockBody::OrderedInner(children) => {
                        for &k in &qk[i..end] {
                            routed[t][b.range.slice_of(k, children.len())].push(k);
                        }
                    }
                    BlockBody::HashInner { children, bloom } => {
                        for &k in qk[i..end].iter().filter(|&&k| bloom.may_contain(k)) {
                            routed[t][hash_route(k, children.len())].push(k);
                        }
                    }
                }
            }
            i = end;
        }
        let mut out = Vec::with_capacity(group.blocks.len());
        for (j, b) in group.blocks.iter().enumerate() {
            let mut children = Vec::new();
            for (ci, &c) in b.children().iter().enumerate() {
                children.extend(self.walk(sc, c, &routed[j][ci]));
            }
            let mut keys = Vec::new();
            match &b.body {
                BlockBody::OrderedLeaf(_) | BlockBody::HashLeaf(_) => {
                    keys.extend(b.sorted_entries().iter().map(|e| e.key))
                }
                _ => {
                    for &c in b.children() {
                        tree.subtree_keys(c, &mut keys);
                    }
                }
            }
            let q = landing[j];
            if children.is_empty() && keys.is_empty() && q == 0.0 && path[j] == 0.0 {
                continue;
            }
            let mut hist = [0.0; DATA_BINS];
            if let Some((lo, hi)) = b.range.observed {
                let width = (hi - lo) as f64 + 1.0;
                for &k in &keys {
                    let i = (((k - lo) as f64 / width) * DATA_BINS as f64) as usize;
                    hist[i.min(DATA_BINS - 1)] += 1.0;
                }
            }
            let n = keys.len().max(1) as f64;
            let mut dense = [0.0; STATIC];
            dense[p.kind.index()] = 1.0;
            dense[2] = p.x as f64 / m;
            dense[3] = (p.y as f64).log2() / 8.0;
            dense[4] = p.alpha;
            dense[5] = p.beta;
            dense[6] = p.gamma.iter().sum::<f64>() / p.gamma.len().max(1) as f64;
            dense[7] = group.level as f64 / 8.0;
            dense[8] = b.is_bottom() as u8 as f64;
            dense[9] = 1.0;
            for (d, h) in dense[10..10 + DATA_BINS].iter_mut().zip(hist) {
                *d = h / n;
            }
            dense[10 + DATA_BINS] = (keys.len() as f64).ln_1p() / sc.total_keys.ln_1p();
            dense[11 + DATA_BINS] = q.ln_1p() / sc.total_q.ln_1p();
            dense[12 + DATA_BINS] = (group.blocks.len() as f64).log2() / 16.0;
            dense[13 + DATA_BINS] = j as f64 / group.blocks.len() as f64;
            let cost = sc
                .report
                .and_then(|r| r.per_block.get(&b.id))
                .map_or(0.0, |s| s.cost);
            self.nodes.push(Node {
                block_id: b.id,
                group: g,
                dense,
                query_bucket: query_bucket(q, sc.total_q),
                path_queries: path[j],
                children,
                cost,
            });
            out.push(self.nodes.len() - 1);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostPredictor {
    pub classes: ClassMap,
    /// `CLASSES x FEATURES`, row-major.
    pub weights: Vec<f64>,
}

impl CostPredictor {
    /// Starts from an identity prior on the routed-cost class so rarely seen
    /// classes still map to themselves before training.
    pub fn new(classes: ClassMap) -> Self {
        let mut weights = vec![0.0; CLASSES * FEATURES];
        for c in 0..CLASSES {
            weights[c * FEATURES + STATIC + 4 * CLASSES + c] = PRIOR;
        }
        CostPredictor { classes, weights }
    }

    fn logits(&self, f: &[(usize, f64)]) -> Vec<f64> {
        (0..CLASSES)
            .map(|c| {
                let row = &self.weights[c * FEATURES..(c + 1) * FEATURES];
                f.iter().map(|&(i, x)| row[i] * x).sum()
            })
            .collect()
    }

    /// Non-zero features of one node given its children's mean distribution and summed cost.
    fn features(&self, node: &Node, child_dist: &[f64], child_cost: Option<f64>) -> Vec<(usize, f64)> {
        let mut f: Vec<(usize, f64)> = node
            .dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        f.push((STATIC + node.query_bucket, 1.0));
        f.push((STATIC + CLASSES + self.classes.class(node.path_queries), 1.0));
        f.extend(
            child_dist
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 1e-9)
                .map(|(i, &v)| (STATIC + 2 * CLASSES + i, v)),
        );
        if let Some(c) = child_cost {
            f.push((STATIC + 3 * CLASSES + self.classes.class(c), 1.0));
        }
        let combined = node.path_queries + child_cost.unwrap_or(0.0);
        f.push((STATIC + 4 * CLASSES + self.classes.class(combined), 1.0));
        f
    }

    /// Class distribution and feature vector of every node, bottom-up.
    fn forward(&self, s: &SampleTree) -> Vec<(Vec<f64>, Vec<(usize, f64)>)> {
        let mut out: Vec<(Vec<f64>, Vec<(usize, f64)>)> = Vec::with_capacity(s.nodes.len());
        for node in &s.nodes {
            let mut mean = vec![0.0; CLASSES];
            let mut sum_cost = 0.0;
            for &c in &node.children {
                let p = &out[c].0;
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += v / node.children.len() as f64;
                }
                sum_cost += self.classes.midpoint(argmax(p));
            }
            let child_cost = (!node.children.is_empty()).then_some(sum_cost);
            let f = self.features(node, &mean, child_cost);
            let p = softmax(&self.logits(&f));
            out.push((p, f));
        }
        out
    }

    /// Predicted class distribution per node.
    pub fn predict(&self, s: &SampleTree) -> Vec<Vec<f64>> {
        self.forward(s).into_iter().map(|(p, _)| p).collect()
    }

    pub fn predict_classes(&self, s: &SampleTree) -> Vec<usize> {
        self.predict(s).iter().map(|p| argmax(p)).collect()
    }

    /// Estimated cost of the whole sample: midpoints of the top group's predicted classes.
    pub fn estimate_cost(&self, s: &SampleTree) -> f64 {
        let p = self.predict(s);
        s.roots.iter().map(|&r| self.classes.midpoint(argmax(&p[r]))).sum()
    }

    fn target(&self, cost: f64) -> Vec<f64> {
        let mut q = vec![SMOOTHING / CLASSES as f64; CLASSES];
        q[self.classes.class(cost)] += 1.0 - SMOOTHING;
        q
    }

    /// Mean per-node divergence of predicted from measured class distributions.
    pub fn loss(&self, samples: &[SampleTree]) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for s in samples {
            for (node, (p, _)) in s.nodes.iter().zip(self.forward(s)) {
                total += kl_categorical(&p, &self.target(node.cost));
                n += 1;
            }
        }
        total / n.max(1) as f64
    }

    /// Mini-batch gradient descent on the divergence loss; children's predictions are
    /// treated as fixed inputs within each pass over a tree. Returns the final loss.
    pub fn train(&mut self, samples: &[SampleTree], epochs: usize, lr: f64) -> f64 {
        let classes: Vec<usize> = samples
            .iter()
            .flat_map(|s| s.nodes.iter().map(|n| self.classes.class(n.cost)))
            .collect();
        if classes.windows(2).all(|w| w[0] == w[1]) {
            return 0.0;
        }
        for _ in 0..epochs {
            for s in samples {
                let feats: Vec<Vec<(usize, f64)>> = self.forward(s).into_iter().map(|(_, f)| f).collect();
                for (nodes, fs) in s.nodes.chunks(BATCH).zip(feats.chunks(BATCH)) {
                    let mut grad: Vec<(usize, f64)> = Vec::new();
                    for (node, f) in nodes.iter().zip(fs) {
                        let p = softmax(&self.logits(f));
                        let q = self.target(node.cost);
                        let kl = kl_categorical(&p, &q);
                        for c in 0..CLASSES {
                            let g = p[c] * ((p[c] / q[c]).ln() - kl);
                            if g.abs() < 1e-12 {
                                continue;
                            }
                            grad.extend(f.iter().map(|&(i, x)| (c * FEATURES + i, g * x)));
                        }
                    }
                    let scale = lr / nodes.len() as f64;
                    for (i, g) in grad {
                        self.weights[i] -= scale * g;
                    }
                }
            }
        }
        self.loss(samples)
    }

    /// Fraction of nodes whose most likely class equals the measured one.
    pub fn accuracy(&self, samples: &[SampleTree]) -> f64 {
        let mut hit = 0usize;
        let mut n = 0usize;
        for s in samples {
            for (node, c) in s.nodes.iter().zip(self.predict_classes(s)) {
                hit += (c == self.classes.class(node.cost)) as usize;
                n += 1;
            }
        }
        hit as f64 / n.max(1) as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = self.classes.edges.clone();
        w.extend_from_slice(&self.weights);
        envelope(PREDICTOR_MAGIC, FEATURES, &w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (width, mut w) = open_envelope(PREDICTOR_MAGIC, bytes)?;
        let edges = CLASSES - 2;
        if width != FEATURES || w.len() != edges + CLASSES * FEATURES {
            return Err(Error::Malformed(format!(
                "predictor checkpoint has width {width} and {} values",
                w.len()
            )));
        }
        let weights = w.split_off(edges);
        Ok(CostPredictor {
            classes: ClassMap { edges: w },
            weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Sorted keys touched by `ops`; ranges count at their lower bound.
pub fn query_keys(ops: &[WorkloadOp]) -> Vec<Key> {
    let mut keys: Vec<Key> = ops.iter().map(|op| op.key).collect();
    keys.sort_unstable();
    keys
}

/// Annotates a whole index with measured costs.
pub fn sample_of(tree: &Tree, query_keys: &[Key], report: &CostReport) -> SampleTree {
    SampleTree::from_tree(tree, ROOT, query_keys, Some(report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distributions_have_zero_loss() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_categorical(&p, &p), 0.0);
        let want = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_categorical(&[0.5, 0.5], &[0.9, 0.1]) - want).abs() < 1e-12);
        assert!((want - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = CostPredictor::new(ClassMap::log_spaced(1.0, 1000.0));
        p.weights[17] = 0.25;
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..8], b"NISPRD01");
        assert_eq!(CostPredictor::from_bytes(&bytes).unwrap(), p);
        assert!(CostPredictor::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn untrained_prediction_sums_to_one() {
        use crate::shapes::btree_config;
        use crate::stats::DatasetStats;
        use crate::tree::BuildOptions;
        use crate::PhysicalIndex;
        let keys: Vec<u64> = (0..2000).map(|i| i * 7919).collect();
        let opts = BuildOptions { m: 16, ..BuildOptions::default() };
        let idx = PhysicalIndex::from_keys(&btree_config(16), &keys, &DatasetStats::from_keys(&keys), &opts).unwrap();
        let s = SampleTree::from_tree(&idx, ROOT, &keys, None);
        assert_eq!(s.nodes.len(), idx.block_count());
        let p = CostPredictor::new(ClassMap::log_spaced(1.0, 100.0));
        for d in p.predict(&s) {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
