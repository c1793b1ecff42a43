//! Sampling hyper-parameter sequences from the policy and decoding them into configs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::param_index::{PathPattern, Segment};
use crate::params::{link_levels, BlockKind, HyperParams};
use crate::stats::DatasetStats;
use crate::ParameterIndex;

use super::features::{encode_root, Decision, MAX_CHUNKS};
use super::model::{head_probs, Model, StepCache};

/// What a step emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Choice(usize),
    /// Link draws for the first `levels` distances, bit `k` for distance `2^(k+1)`.
    Bits { bits: u32, levels: usize },
}

#[derive(Clone, Debug)]
pub struct Step {
    pub decision: Decision,
    pub input: Vec<u32>,
    /// Step whose hidden state this one continues from.
    pub prev: Option<usize>,
    pub action: Action,
}

/// One sampled action sequence and the config it decodes to.
#[derive(Clone, Debug)]
pub struct Trace {
    pub steps: Vec<Step>,
    pub config: ParameterIndex,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn forward(&self, model: &Model) -> Vec<StepCache> {
        let zero = vec![0.0; model.hidden];
        let mut caches: Vec<StepCache> = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            let h_prev = s.prev.map_or(&zero[..], |p| &caches[p].h[..]);
            let c = model.step(&s.input, h_prev, s.decision);
            caches.push(c);
        }
        caches
    }

    /// Log-probability of each step's action under `model`.
    pub fn log_probs(&self, model: &Model) -> Vec<f64> {
        self.forward(model)
            .iter()
            .zip(&self.steps)
            .map(|(c, s)| action_log_prob(s, &head_probs(s.decision, &c.logits)))
            .collect()
    }

    pub fn backward_view(&self) -> Vec<(&[u32], Decision, Option<usize>)> {
        self.steps
            .iter()
            .map(|s| (&s.input[..], s.decision, s.prev))
            .collect()
    }
}

pub fn action_log_prob(step: &Step, probs: &[f64]) -> f64 {
    match step.action {
        Action::Choice(i) => probs[i].ln(),
        Action::Bits { bits, levels } => (0..levels)
            .map(|k| {
                if bits >> k & 1 == 1 {
                    probs[k].ln()
                } else {
                    (1.0 - probs[k]).ln()
                }
            })
            .sum(),
    }
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    /// Probability of replacing a decision with a uniform draw.
    pub lambda: f64,
    /// Take the most likely action everywhere, ignoring `lambda`.
    pub greedy: bool,
    /// Group levels the decoder may describe; the last one is forced to stop.
    pub max_levels: usize,
    /// Child-index chunks per continuing group, each sharing one prediction.
    pub chunks: usize,
    pub m: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            lambda: 0.0,
            greedy: false,
            max_levels: 4,
            chunks: MAX_CHUNKS,
            m: crate::params::DEFAULT_CAPACITY,
        }
    }
}

struct Decoder<'a> {
    model: &'a Model,
    opts: &'a SampleOptions,
    rng: &'a mut ChaCha8Rng,
    steps: Vec<Step>,
    caches: Vec<StepCache>,
    config: ParameterIndex,
}

impl Decoder<'_> {
    fn emit(&mut self, decision: Decision, mut input: Vec<u32>, prev: Option<usize>, levels: usize) -> Action {
        let layout = &self.model.layout;
        input.push(layout.kind_bit(decision));
        input.sort_unstable();
        input.dedup();
        let zero = vec![0.0; self.model.hidden];
        let h_prev = prev.map_or(&zero[..], |p| &self.caches[p].h[..]);
        let cache = self.model.step(&input, h_prev, decision);
        let probs = head_probs(decision, &cache.logits);
        let action = match decision {
            Decision::Gamma => {
                let mut bits = 0u32;
                for (k, &p) in probs.iter().enumerate() {
                    let explore: f64 = self.rng.random();
                    let coin: f64 = self.rng.random();
                    let on = if self.opts.greedy {
                        p > 0.5
                    } else if explore < self.opts.lambda {
                        coin < 0.5
                    } else {
                        coin < p
                    };
                    if on && k < levels {
                        bits |= 1 << k;
                    }
                }
                Action::Bits { bits, levels }
            }
            _ => {
                let explore: f64 = self.rng.random();
                let uniform = self.rng.random_range(0..probs.len());
                let u: f64 = self.rng.random();
                let choice = if self.opts.greedy {
                    argmax(&probs)
                } else if explore < self.opts.lambda {
                    uniform
                } else {
                    sample_categorical(&probs, u)
                };
                Action::Choice(choice)
            }
        };
        self.caches.push(cache);
        self.steps.push(Step {
            decision,
            input,
            prev,
            action: action.clone(),
        });
        action
    }

    fn prev_bits(&self, t: usize) -> Vec<u32> {
        let layout = &self.model.layout;
        let s = &self.steps[t];
        match s.action {
            Action::Choice(i) => vec![layout.prev_bit(s.decision, i)],
            Action::Bits { bits, levels } => (0..levels)
                .filter(|k| bits >> k & 1 == 1)
                .map(|k| layout.prev_bit(Decision::Gamma, k))
                .collect(),
        }
    }

    fn choice(a: Action) -> usize {
        match a {
            Action::Choice(i) => i,
            Action::Bits { .. } => unreachable!("categorical head produced bits"),
        }
    }

    /// Emits one group's decisions and recurses into its child chunks.
    fn node(&mut self, pattern: PathPattern, level: usize, first_input: Vec<u32>, ctx: Option<usize>) {
        let layout = self.model.layout.clone();
        let depth_bit = layout.depth_bit(level);
        let mut prev = ctx;
        let next_input = |dec: &Self, prev: Option<usize>| {
            let mut v = vec![depth_bit];
            if let Some(p) = prev {
                v.extend(dec.prev_bits(p));
            }
            v
        };
        let mut input = next_input(self, prev);
        input.extend(first_input);
        let kind = Self::choice(self.emit(Decision::Kind, input, prev, 0));
        prev = Some(self.steps.len() - 1);
        let x_i = Self::choice(self.emit(Decision::X, next_input(self, prev), prev, 0));
        prev = Some(self.steps.len() - 1);
        let y_i = Self::choice(self.emit(Decision::Y, next_input(self, prev), prev, 0));
        prev = Some(self.steps.len() - 1);
        let a_i = Self::choice(self.emit(Decision::Alpha, next_input(self, prev), prev, 0));
        prev = Some(self.steps.len() - 1);
        let b_i = Self::choice(self.emit(Decision::Beta, next_input(self, prev), prev, 0));
        prev = Some(self.steps.len() - 1);
        let y = layout.values.y[y_i];
        let levels = link_levels(y).min(layout.heads[Decision::Gamma.index()]);
        let bits = match self.emit(Decision::Gamma, next_input(self, prev), prev, levels) {
            Action::Bits { bits, .. } => bits,
            Action::Choice(_) => unreachable!(),
        };
        prev = Some(self.steps.len() - 1);
        let x = layout.values.x_values(self.opts.m)[x_i];
        let mut gamma: Vec<f64> = (0..levels).map(|k| (bits >> k & 1) as f64).collect();
        gamma.resize(link_levels(y), 0.0);
        self.config.insert(
            pattern.clone(),
            HyperParams {
                kind: BlockKind::ALL[kind],
                x,
                y,
                alpha: layout.values.alpha[a_i],
                beta: layout.values.beta[b_i],
                gamma,
            },
        );
        if level + 1 >= self.opts.max_levels {
            return;
        }
        let stop = Self::choice(self.emit(Decision::Stop, next_input(self, prev), prev, 0));
        if stop == 1 {
            return;
        }
        let ctx = Some(self.steps.len() - 1);
        let n = x * y;
        let chunks = self.opts.chunks.clamp(1, MAX_CHUNKS).min(n);
        for c in 0..chunks {
            let lo = (c * n / chunks) as u32;
            let hi = ((c + 1) * n / chunks - 1) as u32;
            let seg = if lo == hi {
                Segment::Exact(lo)
            } else {
                Segment::Range(lo, hi)
            };
            self.node(pattern.child(seg), level + 1, vec![layout.chunk_bit(c)], ctx);
        }
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

fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Samples one action sequence for a dataset and decodes it into a config.
pub fn sample(model: &Model, stats: &DatasetStats, opts: &SampleOptions, rng: &mut ChaCha8Rng) -> Trace {
    let mut dec = Decoder {
        model,
        opts,
        rng,
        steps: Vec::new(),
        caches: Vec::new(),
        config: ParameterIndex::new(),
    };
    dec.node(PathPattern::exact(&[0]), 0, encode_root(stats), None);
    let mut config = dec.config;
    config.root_stats = Some(stats.clone());
    Trace {
        steps: dec.steps,
        config,
    }
}

/// The most likely config under `model`.
pub fn greedy(model: &Model, stats: &DatasetStats, opts: &SampleOptions) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opts = SampleOptions {
        greedy: true,
        ..opts.clone()
    };
    sample(model, stats, &opts, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::features::Layout;
    use crate::params::ValueSets;

    fn stats() -> DatasetStats {
        let keys: Vec<u64> = (0..10_000u64).map(|i| i * i).collect();
        DatasetStats::from_keys(&keys)
    }

    #[test]
    fn every_emitted_value_is_admissible() {
        let model = Model::new(Layout::default(), 16, 1);
        let vs = ValueSets::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for lambda in [0.0, 0.5, 1.0] {
            for _ in 0..20 {
                let opts = SampleOptions { lambda, ..SampleOptions::default() };
                let t = sample(&model, &stats(), &opts, &mut rng);
                assert!(t.log_probs(&model).iter().all(|l| l.is_finite()));
                for (_, p) in &t.config.entries {
                    assert!(vs.x_values(256).contains(&p.x));
                    assert!(vs.y.contains(&p.y));
                    assert!(vs.alpha.contains(&p.alpha));
                    assert!(vs.beta.contains(&p.beta));
                    assert_eq!(p.gamma.len(), link_levels(p.y));
                    p.validate(256).unwrap();
                }
            }
        }
    }

    #[test]
    fn lambda_one_ignores_weights() {
        let a = Model::new(Layout::default(), 16, 1);
        let b = Model::new(Layout::default(), 16, 99);
        let opts = SampleOptions { lambda: 1.0, ..SampleOptions::default() };
        let ta = sample(&a, &stats(), &opts, &mut ChaCha8Rng::seed_from_u64(5));
        let tb = sample(&b, &stats(), &opts, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(ta.config.to_text(), tb.config.to_text());
    }

    #[test]
    fn one_hot_softmax_picks_argmax() {
        let mut model = Model::new(Layout::default(), 16, 1);
        model.head_bias_mut(Decision::Alpha)[2] = 1e3;
        let opts = SampleOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let t = sample(&model, &stats(), &opts, &mut rng);
            assert!(t.config.entries.iter().all(|(_, p)| p.alpha == 0.7));
        }
    }

    #[test]
    fn decoded_config_builds() {
        use crate::tree::{BuildOptions, Tree};
        let model = Model::new(Layout::default(), 16, 4);
        let opts = SampleOptions { lambda: 1.0, ..SampleOptions::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let t = sample(&model, &stats(), &opts, &mut rng);
            let bo = BuildOptions { budget_bytes: Some(64 << 20), ..BuildOptions::default() };
            match Tree::build(&t.config, &stats(), &bo) {
                Ok(_) | Err(crate::Error::BudgetExceeded { .. }) => {}
                Err(e) => panic!("{e}\n{}", t.config.to_text()),
            }
        }
    }
}
