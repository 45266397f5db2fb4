//! PPO with generalized advantage estimation.
//!
//! Each iteration runs three stages: sample a batch of episodes and score
//! them (generation), compute KL-shaped rewards, values and advantages
//! (preparation), then take several epochs of minibatch gradient ascent on
//! the clipped surrogate (learning). The task reward arrives only at the
//! terminal step; every step pays `β·(log π − log π_ref)`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Environment, TaskItem};
use crate::policy::{PolicyParams, Step};
use crate::query::TaskGrammar;
use crate::reward::{composite_reward, RewardBreakdown, RewardError, TaskRewardSpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode {episode} (item `{item}`): {source}")]
    Reward {
        episode: usize,
        item: String,
        #[source]
        source: RewardError,
    },
    #[error("non-finite {what} at iteration {iteration}: {diagnostics}")]
    NonFinite { what: &'static str, iteration: usize, diagnostics: String },
}

/// A training failure together with the last parameters that were intact.
#[derive(Debug, Error)]
#[error("training stopped at iteration {iteration}: {error}")]
pub struct TrainFailure {
    pub iteration: usize,
    pub params: Box<PolicyParams>,
    #[source]
    pub error: TrainError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self { gamma: 1.0, lambda: 0.95 }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub kl_beta: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_episodes: usize,
    pub minibatch_episodes: usize,
    pub epochs_per_batch: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            kl_beta: 0.001,
            lr_actor: 0.05,
            lr_critic: 0.1,
            batch_episodes: 64,
            minibatch_episodes: 16,
            epochs_per_batch: 4,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return fail(format!("clip_eps must be in (0, 1), got {}", self.clip_eps));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return fail(format!("kl_beta must be non-negative, got {}", self.kl_beta));
        }
        for (name, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.batch_episodes == 0 || self.minibatch_episodes == 0 {
            return fail("batch sizes must be positive".into());
        }
        if !self.batch_episodes.is_multiple_of(self.minibatch_episodes) {
            return fail(format!(
                "minibatch_episodes ({}) must divide batch_episodes ({})",
                self.minibatch_episodes, self.batch_episodes
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    /// Log-probability under the rollout policy.
    pub log_prob: f64,
    pub ref_log_prob: f64,
    /// Task reward (terminal step only) minus the KL shaping term.
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub return_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub item: String,
    pub query: String,
    pub response: String,
    pub reward: RewardBreakdown,
    pub transitions: Vec<Transition>,
}

/// Samples `n_episodes` episodes, cycling through `items` in order.
#[allow(clippy::too_many_arguments)]
pub fn rollout<E: Environment + ?Sized, R: Rng + ?Sized>(
    policy: &PolicyParams,
    reference: &PolicyParams,
    env: &E,
    spec: &TaskRewardSpec,
    items: &[TaskItem],
    n_episodes: usize,
    kl_beta: f64,
    rng: &mut R,
) -> Result<Vec<Trajectory>, TrainError> {
    if items.is_empty() {
        return Err(TrainError::Config("no training items".into()));
    }
    let mut out = Vec::with_capacity(n_episodes);
    for episode in 0..n_episodes {
        let item = &items[episode % items.len()];
        let ep = policy.sample_episode(&item.query, rng);
        let reward = composite_reward(&ep.response, env, spec, item.target.as_target())
            .map_err(|source| TrainError::Reward { episode, item: item.id.clone(), source })?;
        let last = ep.steps.len() - 1;
        let transitions = ep
            .steps
            .into_iter()
            .enumerate()
            .map(|(t, Step { features, mask, action, log_prob })| {
                let ref_log_prob = reference.distribution(&features, &mask)[action].ln();
                let task = if t == last { reward.total } else { 0.0 };
                Transition {
                    value: policy.value(&features),
                    reward: task - kl_beta * (log_prob - ref_log_prob),
                    features,
                    mask,
                    action,
                    log_prob,
                    ref_log_prob,
                    advantage: 0.0,
                    return_target: 0.0,
                }
            })
            .collect();
        out.push(Trajectory { item: item.id.clone(), query: ep.query, response: ep.response, reward, transitions });
    }
    Ok(out)
}

/// Advantages and return targets for one episode; the value after the
/// terminal step is taken as 0.
pub fn gae(rewards: &[f64], values: &[f64], cfg: &GaeConfig) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + cfg.gamma * next - values[t];
        running = delta + cfg.gamma * cfg.lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Fills `advantage` and `return_target` of every transition.
pub fn prepare_batch(batch: &mut [Trajectory], cfg: &GaeConfig, normalize: bool) {
    for traj in batch.iter_mut() {
        let rewards: Vec<f64> = traj.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = traj.transitions.iter().map(|t| t.value).collect();
        let (adv, ret) = gae(&rewards, &values, cfg);
        for ((t, a), r) in traj.transitions.iter_mut().zip(adv).zip(ret) {
            t.advantage = a;
            t.return_target = r;
        }
    }
    if normalize {
        let all: Vec<f64> = batch.iter().flat_map(|t| t.transitions.iter().map(|x| x.advantage)).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        for t in batch.iter_mut().flat_map(|t| t.transitions.iter_mut()) {
            t.advantage = (t.advantage - mean) / sd;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoLosses {
    pub clip: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `clip − c1·value_loss + c2·entropy`, the quantity being maximized.
    pub objective: f64,
    /// Gradient of `objective` with respect to the actor weights.
    pub actor_grad: Vec<f64>,
    /// Gradient of `objective` with respect to the critic weights.
    pub critic_grad: Vec<f64>,
    /// Fraction of transitions whose ratio left `[1−ε, 1+ε]`.
    pub clip_fraction: f64,
    /// Ratios after clipping, one per transition.
    pub clipped_ratios: Vec<f64>,
}

/// Clipped surrogate, value loss and entropy over `minibatch`, with exact
/// gradients. All terms are means over transitions.
pub fn ppo_losses(minibatch: &[&Transition], params: &PolicyParams, cfg: &PpoConfig) -> PpoLosses {
    let n = minibatch.len().max(1) as f64;
    let mut actor_grad = vec![0.0; params.actor.len()];
    let mut critic_grad = vec![0.0; params.critic.len()];
    let (mut clip, mut value_loss, mut entropy) = (0.0, 0.0, 0.0);
    let mut clipped_count = 0usize;
    let mut clipped_ratios = Vec::with_capacity(minibatch.len());
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);

    for t in minibatch {
        let (lp, g_lp) = params
            .log_prob_grad(&t.features, &t.mask, t.action)
            .expect("stored actions were sampled under the same mask");
        let ratio = (lp - t.log_prob).exp();
        let clipped = ratio.clamp(lo, hi);
        clipped_ratios.push(clipped);
        if clipped != ratio {
            clipped_count += 1;
        }
        let a = t.advantage;
        let unclipped_term = ratio * a;
        let clipped_term = clipped * a;
        if unclipped_term <= clipped_term {
            clip += unclipped_term;
            // d(r·A)/dθ = A·r·∇log π
            let scale = a * ratio / n;
            actor_grad.iter_mut().zip(&g_lp).for_each(|(g, d)| *g += scale * d);
        } else {
            clip += clipped_term;
        }

        let (h, g_h) = params.entropy_grad(&t.features, &t.mask);
        entropy += h;
        let scale = cfg.entropy_coef / n;
        actor_grad.iter_mut().zip(&g_h).for_each(|(g, d)| *g += scale * d);

        let v = params.value(&t.features);
        let err = v - t.return_target;
        value_loss += err * err;
        let scale = -cfg.value_coef * 2.0 * err / n;
        critic_grad.iter_mut().zip(&t.features).for_each(|(g, x)| *g += scale * x);
    }
    let (clip, value_loss, entropy) = (clip / n, value_loss / n, entropy / n);
    PpoLosses {
        clip,
        value_loss,
        entropy,
        objective: clip - cfg.value_coef * value_loss + cfg.entropy_coef * entropy,
        actor_grad,
        critic_grad,
        clip_fraction: clipped_count as f64 / n,
        clipped_ratios,
    }
}

/// Per-iteration learning-curve record, measured on the rollout batch
/// before that iteration's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mean_total_reward: f64,
    pub mean_retrieval_metric: f64,
    /// Actions in the answer query, EOS excluded.
    pub mean_answer_len: f64,
    /// Whitespace tokens in the think section.
    pub mean_think_len: f64,
    pub policy_entropy: f64,
    /// Per-step mean of `log π − log π_ref` at the sampled actions.
    pub mean_kl_to_ref: f64,
    /// Per-step mean of `|log π − log π_ref|`.
    #[serde(skip)]
    pub mean_abs_log_ratio: f64,
}

pub const CURVE_COLUMNS: [&str; 7] = [
    "iter",
    "mean_total_reward",
    "mean_retrieval_metric",
    "mean_answer_len",
    "mean_think_len",
    "policy_entropy",
    "mean_kl_to_ref",
];

fn think_len(response: &str) -> usize {
    match (response.find("<think>"), response.find("</think>")) {
        (Some(a), Some(b)) if b > a => response[a + "<think>".len()..b].split_whitespace().count(),
        _ => 0,
    }
}

pub fn summarize(iter: usize, batch: &[Trajectory], params: &PolicyParams) -> IterationRecord {
    let n = batch.len().max(1) as f64;
    let steps: Vec<&Transition> = batch.iter().flat_map(|t| &t.transitions).collect();
    let ns = steps.len().max(1) as f64;
    IterationRecord {
        iter,
        mean_total_reward: batch.iter().map(|t| t.reward.total).sum::<f64>() / n,
        mean_retrieval_metric: batch.iter().map(|t| t.reward.metric.unwrap_or(0.0)).sum::<f64>() / n,
        mean_answer_len: batch.iter().map(|t| t.transitions.len().saturating_sub(1) as f64).sum::<f64>() / n,
        mean_think_len: batch.iter().map(|t| think_len(&t.response) as f64).sum::<f64>() / n,
        policy_entropy: steps.iter().map(|t| params.entropy_grad(&t.features, &t.mask).0).sum::<f64>() / ns,
        mean_kl_to_ref: steps.iter().map(|t| t.log_prob - t.ref_log_prob).sum::<f64>() / ns,
        mean_abs_log_ratio: steps.iter().map(|t| (t.log_prob - t.ref_log_prob).abs()).sum::<f64>() / ns,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub curve: Vec<IterationRecord>,
}

fn check_finite(params: &PolicyParams, iteration: usize, losses: &PpoLosses) -> Result<(), TrainError> {
    let bad = |what| TrainError::NonFinite {
        what,
        iteration,
        diagnostics: format!(
            "clip={} value_loss={} entropy={} clip_fraction={}",
            losses.clip, losses.value_loss, losses.entropy, losses.clip_fraction
        ),
    };
    if !losses.objective.is_finite() {
        return Err(bad("loss"));
    }
    if params.actor.iter().chain(&params.critic).any(|w| !w.is_finite()) {
        return Err(bad("weight"));
    }
    Ok(())
}

/// Runs `iterations` rounds of generation, preparation and learning from
/// `init`. The reference policy is a frozen copy of `init`. `sink` sees
/// every record as soon as it is produced.
#[allow(clippy::too_many_arguments)]
pub fn train<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    spec: &TaskRewardSpec,
    items: &[TaskItem],
    init: PolicyParams,
    ppo: &PpoConfig,
    gae_cfg: &GaeConfig,
    iterations: usize,
    rng: &mut R,
    sink: &mut dyn FnMut(&IterationRecord),
) -> Result<TrainOutcome, TrainFailure> {
    let fail = |iteration, params: &PolicyParams, error| TrainFailure { iteration, params: Box::new(params.clone()), error };
    if let Err(e) = ppo.validate().and_then(|()| gae_cfg.validate()) {
        return Err(fail(0, &init, e));
    }
    if env.grammar() != TaskGrammar::BooleanSearch {
        let e = TrainError::Config("the policy emits boolean queries; the environment must use the boolean grammar".into());
        return Err(fail(0, &init, e));
    }
    let reference = init.clone();
    let mut params = init;
    let mut curve = Vec::with_capacity(iterations);

    for iter in 0..iterations {
        let mut batch = rollout(&params, &reference, env, spec, items, ppo.batch_episodes, ppo.kl_beta, rng)
            .map_err(|e| fail(iter, &params, e))?;
        prepare_batch(&mut batch, gae_cfg, ppo.normalize_advantages);
        let record = summarize(iter, &batch, &params);
        sink(&record);
        curve.push(record);

        let mut order: Vec<usize> = (0..batch.len()).collect();
        for _ in 0..ppo.epochs_per_batch {
            order.shuffle(rng);
            for chunk in order.chunks(ppo.minibatch_episodes) {
                let mb: Vec<&Transition> = chunk.iter().flat_map(|&i| &batch[i].transitions).collect();
                let losses = ppo_losses(&mb, &params, ppo);
                let last_good = params.clone();
                for (w, g) in params.actor.iter_mut().zip(&losses.actor_grad) {
                    *w += ppo.lr_actor * g;
                }
                for (w, g) in params.critic.iter_mut().zip(&losses.critic_grad) {
                    *w += ppo.lr_critic * g;
                }
                check_finite(&params, iter, &losses).map_err(|e| fail(iter, &last_good, e))?;
            }
        }
    }
    Ok(TrainOutcome { params, reference, curve })
}
