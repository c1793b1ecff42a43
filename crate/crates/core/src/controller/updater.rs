//! Policy-gradient updates: plain REINFORCE with a baseline, and the KL-penalised off-policy variant.

use crate::error::{Error, Result};
use crate::registry::Registry;

use super::features::Decision;
use super::model::{head_probs, Model};
use super::policy::{action_log_prob, Action, Step, Trace};

/// A sampled sequence with its reward and advantage `R - b`.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub trace: Trace,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateParams {
    pub sigma: f64,
    pub epsilon: f64,
    pub phi: f64,
    /// Ascent steps per rollout batch for the off-policy updater.
    pub reuse: usize,
}

impl Default for UpdateParams {
    fn default() -> Self {
        UpdateParams {
            sigma: 1e-3,
            epsilon: 0.05,
            phi: 0.5,
            reuse: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateOutcome {
    pub grad_norm: f64,
    pub kl: f64,
    /// The sampler was refreshed because the penalty diverged; the batch should be redrawn.
    pub resample: bool,
}

pub trait PolicyUpdater {
    fn name(&self) -> &'static str;
    /// Called before each round of sampling.
    fn begin_round(&mut self, model: &Model);
    /// The model rollouts are drawn from.
    fn sampler<'a>(&'a self, model: &'a Model) -> &'a Model;
    fn update(&mut self, model: &mut Model, batch: &[Rollout], hp: &UpdateParams) -> Result<UpdateOutcome>;
}

pub fn updaters() -> Registry<dyn PolicyUpdater> {
    Registry::<dyn PolicyUpdater>::new("policy updater")
        .register("reinforce", || Box::new(Reinforce))
        .register("ppo", || Box::new(Ppo::default()))
}

/// `coef * d log p(action) / d logits`, zero where the realized probability leaves `[eps, 1 - eps]`.
pub fn log_prob_dlogits(step: &Step, probs: &[f64], coef: f64, eps: f64) -> Vec<f64> {
    let mut d = vec![0.0; probs.len()];
    let inside = |q: f64| q >= eps && q <= 1.0 - eps;
    match step.action {
        Action::Choice(i) => {
            if inside(probs[i]) {
                for (j, (dj, &p)) in d.iter_mut().zip(probs).enumerate() {
                    *dj = coef * (if i == j { 1.0 } else { 0.0 } - p);
                }
            }
        }
        Action::Bits { bits, levels } => {
            for k in 0..levels {
                let on = bits >> k & 1 == 1;
                let q = if on { probs[k] } else { 1.0 - probs[k] };
                if inside(q) {
                    d[k] = coef * (if on { 1.0 } else { 0.0 } - probs[k]);
                }
            }
        }
    }
    d
}

pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    kl_categorical(&[p, 1.0 - p], &[q, 1.0 - q])
}

/// Divergence of one step's action distribution and its gradient wrt the logits of `p`.
fn step_kl(decision: Decision, action: &Action, p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    match (decision, action) {
        (Decision::Gamma, Action::Bits { levels, .. }) => {
            let mut d = vec![0.0; p.len()];
            let mut kl = 0.0;
            for k in 0..*levels {
                kl += kl_bernoulli(p[k], q[k]);
                d[k] = p[k] * (1.0 - p[k]) * ((p[k] / q[k]).ln() - ((1.0 - p[k]) / (1.0 - q[k])).ln());
            }
            (kl, d)
        }
        _ => {
            let kl = kl_categorical(p, q);
            let d = p
                .iter()
                .zip(q)
                .map(|(&a, &b)| a * ((a / b).ln() - kl))
                .collect();
            (kl, d)
        }
    }
}

/// `(1/N) sum_n (R_n - b_n) sum_t grad log p(a_t)`, with clipped steps contributing nothing.
pub fn reinforce_gradient(model: &Model, batch: &[Rollout], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0; model.param_count()];
    let scale = 1.0 / batch.len() as f64;
    for r in batch {
        if r.advantage == 0.0 {
            continue;
        }
        let caches = r.trace.forward(model);
        let dl: Vec<Vec<f64>> = r
            .trace
            .steps
            .iter()
            .zip(&caches)
            .map(|(s, c)| log_prob_dlogits(s, &head_probs(s.decision, &c.logits), r.advantage * scale, eps))
            .collect();
        model.backward(&r.trace.backward_view(), &caches, &dl, &mut grad);
    }
    grad
}

/// Importance-weighted gradient with ratio `p_sampler(a) / p_model(a)` per step, minus
/// `phi` times the gradient of the step-averaged divergence from the sampler.
/// Returns the gradient and the averaged divergence.
pub fn ppo_gradient(model: &Model, sampler: &Model, batch: &[Rollout], eps: f64, phi: f64) -> (Vec<f64>, f64) {
    let mut grad = vec![0.0; model.param_count()];
    let scale = 1.0 / batch.len() as f64;
    let total_steps: usize = batch.iter().map(|r| r.trace.len()).sum::<usize>().max(1);
    let mut kl_sum = 0.0;
    for r in batch {
        let caches = r.trace.forward(model);
        let old = r.trace.forward(sampler);
        let mut dl = Vec::with_capacity(caches.len());
        for ((s, c), o) in r.trace.steps.iter().zip(&caches).zip(&old) {
            let p = head_probs(s.decision, &c.logits);
            let q = head_probs(s.decision, &o.logits);
            let ratio = (action_log_prob(s, &q) - action_log_prob(s, &p)).exp();
            let mut d = log_prob_dlogits(s, &p, ratio * r.advantage * scale, eps);
            let (kl, dkl) = step_kl(s.decision, &s.action, &p, &q);
            kl_sum += kl;
            for (a, b) in d.iter_mut().zip(dkl) {
                *a -= phi * b / total_steps as f64;
            }
            dl.push(d);
        }
        model.backward(&r.trace.backward_view(), &caches, &dl, &mut grad);
    }
    (grad, kl_sum / total_steps as f64)
}

fn ascend(model: &mut Model, grad: &[f64], sigma: f64) -> Result<f64> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    for (p, g) in model.params.iter_mut().zip(grad) {
        *p += sigma * g;
    }
    Ok(grad.iter().map(|g| g * g).sum::<f64>().sqrt())
}

pub struct Reinforce;

impl PolicyUpdater for Reinforce {
    fn name(&self) -> &'static str {
        "reinforce"
    }

    fn begin_round(&mut self, _model: &Model) {}

    fn sampler<'a>(&'a self, model: &'a Model) -> &'a Model {
        model
    }

    fn update(&mut self, model: &mut Model, batch: &[Rollout], hp: &UpdateParams) -> Result<UpdateOutcome> {
        let grad = reinforce_gradient(model, batch, hp.epsilon);
        Ok(UpdateOutcome {
            grad_norm: ascend(model, &grad, hp.sigma)?,
            ..UpdateOutcome::default()
        })
    }
}

/// Off-policy updater holding the sampling copy of the parameters.
#[derive(Default)]
pub struct Ppo {
    sampler: Option<Model>,
}

impl PolicyUpdater for Ppo {
    fn name(&self) -> &'static str {
        "ppo"
    }

    fn begin_round(&mut self, model: &Model) {
        self.sampler = Some(model.clone());
    }

    fn sampler<'a>(&'a self, model: &'a Model) -> &'a Model {
        self.sampler.as_ref().unwrap_or(model)
    }

    fn update(&mut self, model: &mut Model, batch: &[Rollout], hp: &UpdateParams) -> Result<UpdateOutcome> {
        let sampler = self.sampler.get_or_insert_with(|| model.clone()).clone();
        let mut out = UpdateOutcome::default();
        for _ in 0..hp.reuse.max(1) {
            let (grad, kl) = ppo_gradient(model, &sampler, batch, hp.epsilon, hp.phi);
            if !kl.is_finite() {
                self.sampler = Some(model.clone());
                out.resample = true;
                return Ok(out);
            }
            out.kl = kl;
            out.grad_norm = ascend(model, &grad, hp.sigma)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_way_softmax_gradient_is_half() {
        let step = Step {
            decision: Decision::Kind,
            input: vec![],
            prev: None,
            action: Action::Choice(0),
        };
        let d = log_prob_dlogits(&step, &[0.5, 0.5], 1.0, 0.05);
        assert_eq!(d, vec![0.5, -0.5]);
    }

    #[test]
    fn clipped_actions_contribute_nothing() {
        let step = Step {
            decision: Decision::Kind,
            input: vec![],
            prev: None,
            action: Action::Choice(0),
        };
        assert_eq!(log_prob_dlogits(&step, &[0.97, 0.03], 1.0, 0.05), vec![0.0, 0.0]);
        assert_eq!(log_prob_dlogits(&step, &[0.02, 0.98], 1.0, 0.05), vec![0.0, 0.0]);
        let bits = Step {
            decision: Decision::Gamma,
            input: vec![],
            prev: None,
            action: Action::Bits { bits: 0b01, levels: 2 },
        };
        let d = log_prob_dlogits(&bits, &[0.99, 0.5, 0.5], 1.0, 0.05);
        assert_eq!(d, vec![0.0, -0.5, 0.0]);
    }

    #[test]
    fn kl_hand_computed() {
        let p = [0.5, 0.5];
        let q = [0.9, 0.1];
        let want = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_categorical(&p, &q) - want).abs() < 1e-15);
        assert_eq!(kl_categorical(&p, &p), 0.0);
    }

    #[test]
    fn kl_gradient_matches_finite_difference() {
        let logits = [0.3, -1.2, 0.7];
        let q = [0.2, 0.5, 0.3];
        let sm = |l: &[f64]| super::super::model::softmax(l);
        let (_, d) = step_kl(Decision::X, &Action::Choice(0), &sm(&logits), &q);
        for j in 0..3 {
            let mut a = logits;
            let mut b = logits;
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let fd = (kl_categorical(&sm(&a), &q) - kl_categorical(&sm(&b), &q)) / 2e-6;
            assert!((fd - d[j]).abs() < 1e-8, "{fd} vs {}", d[j]);
        }
        let s = |l: f64| 1.0 / (1.0 + (-l).exp());
        let (_, d) = step_kl(Decision::Gamma, &Action::Bits { bits: 0, levels: 1 }, &[s(0.4)], &[0.7]);
        let fd = (kl_bernoulli(s(0.4 + 1e-6), 0.7) - kl_bernoulli(s(0.4 - 1e-6), 0.7)) / 2e-6;
        assert!((fd - d[0]).abs() < 1e-8);
    }

    #[test]
    fn registry_knows_both_updaters() {
        let r = updaters();
        assert_eq!(r.names(), vec!["reinforce", "ppo"]);
        assert_eq!(r.get("ppo").unwrap().name(), "ppo");
        assert!(r.get("sgd").is_err());
    }
}
