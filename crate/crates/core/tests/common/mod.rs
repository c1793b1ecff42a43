#![allow(dead_code)]

use blockindex::controller::features::Decision;
use blockindex::controller::policy::{Action, Step, Trace};
use blockindex::controller::updater::{kl_categorical, reinforce_gradient};
use blockindex::controller::{Layout, Model, Rollout};
use blockindex::ParameterIndex;

/// Kind -> X -> Gamma, each step continuing the previous hidden state.
pub fn toy_trace(layout: &Layout) -> Trace {
    let steps = vec![
        Step {
            decision: Decision::Kind,
            input: vec![3, 70, layout.kind_bit(Decision::Kind), layout.depth_bit(0)],
            prev: None,
            action: Action::Choice(1),
        },
        Step {
            decision: Decision::X,
            input: vec![layout.kind_bit(Decision::X), layout.prev_bit(Decision::Kind, 1), layout.depth_bit(0)],
            prev: Some(0),
            action: Action::Choice(2),
        },
        Step {
            decision: Decision::Gamma,
            input: vec![layout.kind_bit(Decision::Gamma), layout.prev_bit(Decision::X, 2), layout.depth_bit(0)],
            prev: Some(1),
            action: Action::Bits { bits: 0b101, levels: 3 },
        },
    ];
    Trace { steps, config: ParameterIndex::new() }
}

pub fn toy_batch(layout: &Layout) -> Vec<Rollout> {
    vec![
        Rollout { trace: toy_trace(layout), reward: 0.9, advantage: 0.7 },
        Rollout { trace: toy_trace(layout), reward: 0.1, advantage: -0.3 },
    ]
}

/// `(1/N) sum_n A_n sum_t log p(a_t)`, the surrogate whose gradient REINFORCE follows.
pub fn surrogate(model: &Model, batch: &[Rollout]) -> f64 {
    batch
        .iter()
        .map(|r| r.advantage * r.trace.log_probs(model).iter().sum::<f64>())
        .sum::<f64>()
        / batch.len() as f64
}

/// Largest relative error between the analytic gradient and central differences
/// (step `h`) over the coordinates the toy actually touches.
pub fn gradient_check(h: f64) -> f64 {
    let layout = Layout::default();
    let mut model = Model::new(layout.clone(), 8, 17);
    let batch = toy_batch(&layout);
    let grad = reinforce_gradient(&model, &batch, 0.0);
    let mut idx: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-7).collect();
    idx.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    idx.truncate(400);
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for i in idx {
        let keep = model.params[i];
        model.params[i] = keep + h;
        let up = surrogate(&model, &batch);
        model.params[i] = keep - h;
        let down = surrogate(&model, &batch);
        model.params[i] = keep;
        let fd = (up - down) / (2.0 * h);
        num += (fd - grad[i]).powi(2);
        den += grad[i].powi(2).max(fd * fd);
    }
    (num / den).sqrt()
}

pub fn direct_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            s += p[i] * (p[i].ln() - q[i].ln());
        }
    }
    s
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    kl_categorical(p, q)
}

pub fn closed_form_baseline(mu: f64, rewards: &[f64]) -> f64 {
    let n = rewards.len();
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| (1.0 - mu) * mu.powi((n - 1 - i) as i32) * r)
        .sum()
}

/// Draws a normalized categorical from raw weights.
pub fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}
