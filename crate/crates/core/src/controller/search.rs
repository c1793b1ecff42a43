//! The outer loop: sample configs, build and benchmark them, reward, update.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::index::PhysicalIndex;
use crate::key::Key;
use crate::params::ValueSets;
use crate::stats::DatasetStats;
use crate::tree::BuildOptions;
use crate::workload::{measure_baseline, run_workload, CostMode, CostReport, WorkloadOp};
use crate::ParameterIndex;

use super::features::Layout;
use super::model::{Model, HIDDEN};
use super::policy::{greedy, sample, SampleOptions};
use super::reward::{compute_reward, Baseline, BUDGET_VIOLATION_REWARD};
use super::updater::{updaters, Rollout, UpdateParams};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub rho: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub batch: usize,
    pub epochs: usize,
    pub mu: f64,
    pub phi: f64,
    /// Ascent steps per batch for the off-policy updater.
    pub reuse: usize,
    pub updater: String,
    pub budget_bytes: Option<u64>,
    pub seed: u64,
    pub m: usize,
    pub hidden: usize,
    pub max_levels: usize,
    pub chunks: usize,
    pub mode: CostMode,
    pub values: ValueSets,
    /// Threads used to benchmark one batch of candidates.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 0.5,
            sigma: 1e-3,
            epsilon: 0.05,
            batch: 16,
            epochs: 100,
            mu: 0.8,
            phi: 0.5,
            reuse: 4,
            updater: "reinforce".into(),
            budget_bytes: Some(64 << 20),
            seed: 1,
            m: crate::params::DEFAULT_CAPACITY,
            hidden: HIDDEN,
            max_levels: 4,
            chunks: 4,
            mode: CostMode::VisitCount,
            values: ValueSets::default(),
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Exploration probability: linear from 1 to 0 over the first half of the epochs.
    pub fn lambda(&self, epoch: usize) -> f64 {
        let half = self.epochs as f64 / 2.0;
        if half <= 0.0 {
            0.0
        } else {
            (1.0 - epoch as f64 / half).max(0.0)
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            m: self.m,
            budget_bytes: self.budget_bytes,
            seed: self.seed,
            ..BuildOptions::default()
        }
    }

    fn sample_options(&self, lambda: f64) -> SampleOptions {
        SampleOptions {
            lambda,
            greedy: false,
            max_levels: self.max_levels,
            chunks: self.chunks,
            m: self.m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub reward: f64,
    pub c_t: f64,
    pub c_s: f64,
    pub depth: usize,
    pub groups: usize,
    pub bytes: u64,
    pub over_budget: bool,
}

/// Scores candidate configs for the search loop.
pub trait Evaluate {
    /// Statistics the controller conditions on.
    fn stats(&self) -> &DatasetStats;
    fn evaluate(&mut self, config: &ParameterIndex) -> Result<Evaluation>;

    /// Scores a batch; results come back in input order.
    fn evaluate_batch(&mut self, configs: &[&ParameterIndex], _workers: usize) -> Result<Vec<Evaluation>> {
        configs.iter().map(|c| self.evaluate(c)).collect()
    }
}

/// Applies `f` to every item on up to `workers` scoped threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    })
}

/// Builds a config over a dataset and scores it on a workload.
pub struct Evaluator<'a> {
    pub keys: &'a [Key],
    pub stats: DatasetStats,
    pub ops: &'a [WorkloadOp],
    pub c_b: f64,
    pub mode: CostMode,
    pub rho: f64,
    pub build: BuildOptions,
}

impl<'a> Evaluator<'a> {
    pub fn new(keys: &'a [Key], ops: &'a [WorkloadOp], cfg: &TrainConfig) -> Self {
        Evaluator {
            keys,
            stats: DatasetStats::from_keys(keys),
            ops,
            c_b: measure_baseline(keys, ops, cfg.mode).max(f64::MIN_POSITIVE),
            mode: cfg.mode,
            rho: cfg.rho,
            build: cfg.build_options(),
        }
    }

    pub fn evaluate(&self, config: &ParameterIndex) -> Result<Evaluation> {
        self.evaluate_full(config).map(|(e, _)| e)
    }

    /// Like [`Evaluator::evaluate`], also handing back the benchmarked index and its report.
    pub fn evaluate_full(
        &self,
        config: &ParameterIndex,
    ) -> Result<(Evaluation, Option<(PhysicalIndex, CostReport)>)> {
        let over = |bytes| Evaluation {
            reward: BUDGET_VIOLATION_REWARD,
            c_t: f64::INFINITY,
            c_s: 0.0,
            depth: 0,
            groups: 0,
            bytes,
            over_budget: true,
        };
        let mut index = match PhysicalIndex::from_keys(config, self.keys, &self.stats, &self.build) {
            Ok(i) => i,
            Err(Error::BudgetExceeded { bytes, .. }) => return Ok((over(bytes), None)),
            Err(e) => return Err(e),
        };
        let bytes = index.size_bytes();
        if self.build.budget_bytes.is_some_and(|b| bytes > b) {
            return Ok((over(bytes), None));
        }
        let report = run_workload(&mut index, self.ops, self.mode);
        let e = Evaluation {
            reward: compute_reward(self.c_b, report.c_t, report.c_s, self.rho),
            c_t: report.c_t,
            c_s: report.c_s,
            depth: index.depth(),
            groups: index.group_count(),
            bytes: report.bytes,
            over_budget: false,
        };
        Ok((e, Some((index, report))))
    }
}

impl Evaluate for Evaluator<'_> {
    fn stats(&self) -> &DatasetStats {
        &self.stats
    }

    fn evaluate(&mut self, config: &ParameterIndex) -> Result<Evaluation> {
        Evaluator::evaluate(self, config)
    }

    fn evaluate_batch(&mut self, configs: &[&ParameterIndex], workers: usize) -> Result<Vec<Evaluation>> {
        let this = &*self;
        parallel_map(configs, workers, |c| this.evaluate(c)).into_iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateRow {
    pub epoch: usize,
    pub candidate: usize,
    pub eval: Evaluation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub best_reward: f64,
    pub running_best: f64,
    pub mean_reward: f64,
    /// Set when the update was skipped because of a non-finite gradient.
    pub aborted: bool,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: ParameterIndex,
    pub best_eval: Evaluation,
    pub epochs: Vec<EpochRecord>,
    pub candidates: Vec<CandidateRow>,
    pub model: Model,
}

/// Runs the controller search and returns the highest-reward config seen.
pub fn search(keys: &[Key], ops: &[WorkloadOp], cfg: &TrainConfig) -> Result<SearchResult> {
    let mut eval = Evaluator::new(keys, ops, cfg);
    search_with(&mut eval, cfg, Model::new(Layout::new(cfg.values.clone()), cfg.hidden, cfg.seed))
}

/// Like [`search`] with a prepared evaluator and starting model.
pub fn search_with<E: Evaluate + ?Sized>(
    eval: &mut E,
    cfg: &TrainConfig,
    mut model: Model,
) -> Result<SearchResult> {
    let mut updater = updaters().get(&cfg.updater)?;
    let hp = UpdateParams {
        sigma: cfg.sigma,
        epsilon: cfg.epsilon,
        phi: cfg.phi,
        reuse: cfg.reuse,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00c0_ffee);
    let mut baseline = Baseline::new(cfg.mu);
    let mut candidates = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(ParameterIndex, Evaluation)> = None;
    let consider = |config: &ParameterIndex, e: Evaluation, best: &mut Option<(ParameterIndex, Evaluation)>| {
        if best.as_ref().is_none_or(|(_, b)| e.reward > b.reward) {
            *best = Some((config.clone(), e));
        }
    };

    if cfg.epochs == 0 {
        let trace = greedy(&model, eval.stats(), &cfg.sample_options(0.0));
        let e = eval.evaluate(&trace.config)?;
        candidates.push(CandidateRow { epoch: 0, candidate: 0, eval: e });
        consider(&trace.config, e, &mut best);
    }

    let mut running = f64::NEG_INFINITY;
    for epoch in 0..cfg.epochs {
        let lambda = cfg.lambda(epoch);
        updater.begin_round(&model);
        let opts = cfg.sample_options(lambda);
        let mut rollouts = Vec::with_capacity(cfg.batch);
        let mut aborted = false;
        for attempt in 0..3 {
            rollouts.clear();
            let traces: Vec<_> = (0..cfg.batch)
                .map(|_| sample(updater.sampler(&model), eval.stats(), &opts, &mut rng))
                .collect();
            let configs: Vec<&ParameterIndex> = traces.iter().map(|t| &t.config).collect();
            let evals = eval.evaluate_batch(&configs, cfg.workers)?;
            for (c, (trace, e)) in traces.into_iter().zip(evals).enumerate() {
                if attempt == 0 {
                    candidates.push(CandidateRow { epoch, candidate: c, eval: e });
                }
                consider(&trace.config, e, &mut best);
                let b = baseline.update(e.reward);
                rollouts.push(Rollout {
                    trace,
                    reward: e.reward,
                    advantage: e.reward - b,
                });
            }
            match updater.update(&mut model, &rollouts, &hp) {
                Ok(out) if out.resample => continue,
                Ok(_) => break,
                Err(Error::NonFiniteGradient) => {
                    aborted = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let epoch_best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        running = running.max(epoch_best);
        epochs.push(EpochRecord {
            epoch,
            lambda,
            best_reward: epoch_best,
            running_best: running,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len().max(1) as f64,
            aborted,
        });
    }
    let (best, best_eval) = best.expect("at least one candidate evaluated");
    Ok(SearchResult {
        best,
        best_eval,
        epochs,
        candidates,
        model,
    })
}

/// `epoch,candidate,reward,c_t,c_s,depth,groups`, one row per evaluated candidate.
pub fn write_trace_csv(rows: &[CandidateRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(["epoch", "candidate", "reward", "c_t", "c_s", "depth", "groups"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.candidate.to_string(),
            r.eval.reward.to_string(),
            r.eval.c_t.to_string(),
            r.eval.c_s.to_string(),
            r.eval.depth.to_string(),
            r.eval.groups.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{gen_keys, Generator, LogNormal, WorkloadSpec};

    fn small() -> (Vec<Key>, Vec<WorkloadOp>, TrainConfig) {
        let keys = gen_keys(&LogNormal::default(), 3000, 1);
        let ops = Generator { scale: 20_000, ..Generator::default() }.generate(WorkloadSpec::W1, &keys, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch: 4,
            m: 32,
            hidden: 16,
            max_levels: 3,
            ..TrainConfig::default()
        };
        (keys, ops, cfg)
    }

    #[test]
    fn lambda_schedule() {
        let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
        assert_eq!(cfg.lambda(0), 1.0);
        assert!((cfg.lambda(2) - 0.6).abs() < 1e-12);
        assert_eq!(cfg.lambda(5), 0.0);
        assert_eq!(cfg.lambda(9), 0.0);
    }

    #[test]
    fn zero_epochs_is_one_greedy_decode() {
        let (keys, ops, cfg) = small();
        let cfg = TrainConfig { epochs: 0, ..cfg };
        let r = search(&keys, &ops, &cfg).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert!(r.epochs.is_empty());
        let model = Model::new(Layout::default(), cfg.hidden, cfg.seed);
        let g = greedy(&model, &DatasetStats::from_keys(&keys), &cfg.sample_options(0.0));
        assert_eq!(r.best.to_text(), g.config.to_text());
    }

    #[test]
    fn reruns_are_identical() {
        let (keys, ops, cfg) = small();
        for updater in ["reinforce", "ppo"] {
            let cfg = TrainConfig { updater: updater.into(), ..cfg.clone() };
            let a = search(&keys, &ops, &cfg).unwrap();
            let b = search(&keys, &ops, &cfg).unwrap();
            assert_eq!(a.candidates, b.candidates);
            assert_eq!(a.model, b.model);
            let mut csv = Vec::new();
            write_trace_csv(&a.candidates, &mut csv).unwrap();
            assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 13);
        }
    }

    #[test]
    fn tiny_budget_gets_violation_reward() {
        let (keys, ops, cfg) = small();
        let cfg = TrainConfig { budget_bytes: Some(100), epochs: 1, ..cfg };
        let r = search(&keys, &ops, &cfg).unwrap();
        assert!(r.candidates.iter().all(|c| c.eval.over_budget && c.eval.reward == -1.0));
    }
}
