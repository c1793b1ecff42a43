//! Multi-episode replay: one initial search, then each mode adapts the index between episodes.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::search::{parallel_map, search_with, Evaluate, Evaluation, Evaluator};
use crate::controller::{Layout, Model, TrainConfig};
use crate::error::{Error, Result};
use crate::index::{LogicalIndex, PhysicalIndex};
use crate::key::Key;
use crate::registry::Registry;
use crate::stats::DatasetStats;
use crate::tree::{Tree, ROOT};
use crate::workload::{run_workload, CostReport, KeyDistribution, LogNormal, WorkloadOp};
use crate::ParameterIndex;

use super::classes::ClassMap;
use super::outliers::{detect_outliers, OutlierConfig, PerfRecords};
use super::predictor::{query_keys, CostPredictor, SampleTree};
use super::retune::retune;

#[derive(Clone, Debug)]
pub struct EpisodeConfig {
    /// Initial search, and the full re-searches of the trained mode.
    pub search: TrainConfig,
    /// Scoped searches run by the incremental mode.
    pub retune: TrainConfig,
    pub outliers: OutlierConfig,
    pub predictor_epochs: usize,
    pub predictor_lr: f64,
    /// Cap on predictor training samples kept from the initial search.
    pub max_samples: usize,
    /// Cap on the blocks summed over those samples.
    pub max_nodes: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            search: TrainConfig {
                epochs: 10,
                batch: 8,
                rho: 1.0,
                ..TrainConfig::default()
            },
            retune: TrainConfig {
                epochs: 4,
                batch: 8,
                rho: 1.0,
                ..TrainConfig::default()
            },
            outliers: OutlierConfig::default(),
            predictor_epochs: 15,
            predictor_lr: 0.5,
            max_samples: 48,
            max_nodes: 300_000,
        }
    }
}

/// State shared by every mode: the starting config, the controller and the cost predictor.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub keys: Vec<Key>,
    pub config: ParameterIndex,
    pub model: Model,
    pub predictor: CostPredictor,
    pub samples: Vec<SampleTree>,
    /// Class agreement of the predictor on its own training samples.
    pub predictor_accuracy: f64,
}

/// Benchmarks like [`Evaluator`] and keeps an annotated copy of every built index.
struct Recording<'a> {
    inner: Evaluator<'a>,
    query_keys: Vec<Key>,
    samples: Vec<SampleTree>,
}

impl Evaluate for Recording<'_> {
    fn stats(&self) -> &DatasetStats {
        &self.inner.stats
    }

    fn evaluate(&mut self, config: &ParameterIndex) -> Result<Evaluation> {
        let (e, built) = self.inner.evaluate_full(config)?;
        if let Some((index, report)) = built {
            self.samples
                .push(SampleTree::from_tree(&index, ROOT, &self.query_keys, Some(&report)));
        }
        Ok(e)
    }

    fn evaluate_batch(&mut self, configs: &[&ParameterIndex], workers: usize) -> Result<Vec<Evaluation>> {
        let inner = &self.inner;
        let qk = &self.query_keys;
        let done = parallel_map(configs, workers, |c| {
            inner.evaluate_full(c).map(|(e, built)| {
                let sample = built.map(|(index, report)| SampleTree::from_tree(&index, ROOT, qk, Some(&report)));
                (e, sample)
            })
        });
        let mut out = Vec::with_capacity(done.len());
        for r in done {
            let (e, sample) = r?;
            self.samples.extend(sample);
            out.push(e);
        }
        Ok(out)
    }
}

/// Runs the initial search on `ops` and trains the predictor on the indexes it benchmarked.
pub fn prepare(keys: &[Key], ops: &[WorkloadOp], cfg: &EpisodeConfig) -> Result<Prepared> {
    let mut eval = Recording {
        inner: Evaluator::new(keys, ops, &cfg.search),
        query_keys: query_keys(ops),
        samples: Vec::new(),
    };
    let model = Model::new(Layout::new(cfg.search.values.clone()), cfg.search.hidden, cfg.search.seed);
    let found = search_with(&mut eval, &cfg.search, model)?;
    let mut samples = eval.samples;
    if samples.len() > cfg.max_samples && cfg.max_samples > 0 {
        let stride = samples.len() as f64 / cfg.max_samples as f64;
        samples = (0..cfg.max_samples)
            .map(|i| samples[(i as f64 * stride) as usize].clone())
            .collect();
    }
    let mut total = 0;
    samples.retain(|s| {
        total += s.nodes.len();
        total <= cfg.max_nodes
    });
    let costs: Vec<f64> = samples.iter().flat_map(|s| s.nodes.iter().map(|n| n.cost)).collect();
    let mut predictor = CostPredictor::new(ClassMap::fit(&costs));
    predictor.train(&samples, cfg.predictor_epochs, cfg.predictor_lr);
    Ok(Prepared {
        keys: keys.to_vec(),
        config: found.best,
        model: found.model,
        predictor_accuracy: predictor.accuracy(&samples),
        predictor,
        samples,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Adaptation {
    pub outliers: usize,
    pub retuned: usize,
}

/// What a mode does to the index between two episodes.
pub trait EpisodeMode {
    fn name(&self) -> &'static str;
    /// `done` and `report` describe the finished episode, `next` is the coming one.
    fn adapt(
        &mut self,
        prepared: &Prepared,
        cfg: &EpisodeConfig,
        index: &mut PhysicalIndex,
        done: &[WorkloadOp],
        report: &CostReport,
        next: &[WorkloadOp],
        episode: usize,
    ) -> Result<Adaptation>;
}

/// Never retunes; the index only changes through its own splits and merges.
pub struct Untuned;

impl EpisodeMode for Untuned {
    fn name(&self) -> &'static str {
        "default"
    }

    fn adapt(
        &mut self,
        _: &Prepared,
        _: &EpisodeConfig,
        _: &mut PhysicalIndex,
        _: &[WorkloadOp],
        _: &CostReport,
        _: &[WorkloadOp],
        _: usize,
    ) -> Result<Adaptation> {
        Ok(Adaptation::default())
    }
}

/// Records per-block costs, flags outliers and re-searches only their groups.
#[derive(Default)]
pub struct Incremental {
    pub records: PerfRecords,
}

impl EpisodeMode for Incremental {
    fn name(&self) -> &'static str {
        "inc"
    }

    fn adapt(
        &mut self,
        prepared: &Prepared,
        cfg: &EpisodeConfig,
        index: &mut PhysicalIndex,
        done: &[WorkloadOp],
        report: &CostReport,
        _: &[WorkloadOp],
        episode: usize,
    ) -> Result<Adaptation> {
        let g = &prepared.predictor;
        let sample = SampleTree::from_tree(index, ROOT, &query_keys(done), None);
        let predicted = sample
            .nodes
            .iter()
            .zip(g.predict_classes(&sample))
            .map(|(n, c)| (n.block_id, c))
            .collect();
        self.records.record_epoch(index, report, &predicted);
        let outliers = detect_outliers(index, &self.records, &g.classes, &cfg.outliers);
        if outliers.is_empty() {
            return Ok(Adaptation::default());
        }
        let retune_cfg = TrainConfig {
            seed: cfg.retune.seed.wrapping_add(episode as u64),
            ..cfg.retune.clone()
        };
        let outcomes = retune(index, &outliers, g, &prepared.model, done, &retune_cfg)?;
        Ok(Adaptation {
            outliers: outliers.len(),
            retuned: outcomes.iter().filter(|o| o.replaced).count(),
        })
    }
}

/// Re-runs the full search against the coming episode's workload; the ideal reference.
pub struct Trained;

impl EpisodeMode for Trained {
    fn name(&self) -> &'static str {
        "trained"
    }

    fn adapt(
        &mut self,
        prepared: &Prepared,
        cfg: &EpisodeConfig,
        index: &mut PhysicalIndex,
        _: &[WorkloadOp],
        _: &CostReport,
        next: &[WorkloadOp],
        episode: usize,
    ) -> Result<Adaptation> {
        let mut pairs = Vec::new();
        index.subtree_pairs(ROOT, &mut pairs);
        pairs.sort_unstable();
        let mut keys: Vec<Key> = pairs.iter().map(|p| p.0).collect();
        keys.dedup();
        let search_cfg = TrainConfig {
            seed: cfg.search.seed.wrapping_add(episode as u64),
            ..cfg.search.clone()
        };
        let mut eval = Evaluator::new(&keys, next, &search_cfg);
        let found = search_with(&mut eval, &search_cfg, prepared.model.clone())?;
        let cost = |idx: &PhysicalIndex| run_workload(&mut idx.clone(), next, search_cfg.mode).c_t;
        let mut best: Option<(f64, PhysicalIndex)> = None;
        // The searched config competes with a fresh bulk load of the starting config.
        for config in [&found.best, &prepared.config] {
            let tree = Tree::build(config, &eval.stats, &search_cfg.build_options())?;
            let mut logical = LogicalIndex::from_tree(tree);
            logical.materialize_pairs(&pairs);
            let candidate = logical.finalize();
            let c = cost(&candidate);
            if best.as_ref().is_none_or(|(b, _)| c < *b) {
                best = Some((c, candidate));
            }
        }
        match best {
            Some((c, candidate)) if c < cost(index) => {
                *index = candidate;
                Ok(Adaptation { outliers: 0, retuned: 1 })
            }
            _ => Ok(Adaptation::default()),
        }
    }
}

pub fn modes() -> Registry<dyn EpisodeMode> {
    Registry::<dyn EpisodeMode>::new("episode mode")
        .register("default", || Box::new(Untuned))
        .register("inc", || Box::new(Incremental::default()))
        .register("trained", || Box::new(Trained))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub c_t: f64,
    /// Outlier blocks found after this episode.
    pub outliers: usize,
    /// Subtrees replaced after this episode.
    pub retuned: usize,
}

/// Plays every episode's workload against one index, adapting between episodes.
pub fn run_episodes(
    prepared: &Prepared,
    episodes: &[Vec<WorkloadOp>],
    mode: &mut dyn EpisodeMode,
    cfg: &EpisodeConfig,
) -> Result<Vec<EpisodeRow>> {
    let stats = DatasetStats::from_keys(&prepared.keys);
    let mut index = PhysicalIndex::from_keys(&prepared.config, &prepared.keys, &stats, &cfg.search.build_options())?;
    let mut rows = Vec::with_capacity(episodes.len());
    for (e, ops) in episodes.iter().enumerate() {
        let report = run_workload(&mut index, ops, cfg.search.mode);
        let mut row = EpisodeRow {
            episode: e,
            c_t: report.c_t,
            outliers: 0,
            retuned: 0,
        };
        if let Some(next) = episodes.get(e + 1) {
            let a = mode.adapt(prepared, cfg, &mut index, ops, &report, next, e)?;
            row.outliers = a.outliers;
            row.retuned = a.retuned;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// `episode,c_t,outliers,retuned`.
pub fn write_episode_csv(rows: &[EpisodeRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(["episode", "c_t", "outliers", "retuned"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.c_t.to_string(),
            r.outliers.to_string(),
            r.retuned.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Malformed(e.to_string()))
}

/// Episodes whose inserts all follow one log-normal distribution, so the data
/// density (and with it the lookups, drawn from the data) drifts toward it.
pub fn drifting_workloads(
    keys: &[Key],
    episodes: usize,
    inserts: usize,
    lookups: usize,
    seed: u64,
) -> Vec<Vec<WorkloadOp>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = keys.to_vec();
    let shape = LogNormal::default();
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let fresh = shape.sample(inserts, &mut rng);
        data.extend_from_slice(&fresh);
        let mut ops: Vec<WorkloadOp> = fresh.iter().map(|&k| WorkloadOp::insert(k)).collect();
        if !data.is_empty() {
            for _ in 0..lookups {
                ops.push(WorkloadOp::lookup(data[rng.random_range(0..data.len())]));
            }
        }
        ops.shuffle(&mut rng);
        out.push(ops);
    }
    out
}
