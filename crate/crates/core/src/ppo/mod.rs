//! Clipped-surrogate PPO with GAE over decision-step transitions.
//!
//! Only ticks at which an agent picks a new action produce a transition;
//! rewards collected while a macro runs are summed (undiscounted) onto the
//! transition that started it.

mod rollout;

pub use rollout::{
    collect_rollouts, play_episode, Actor, ActorRef, DiversityContext, EnvWorker, EpisodeRecord, PlayedEpisode, RolloutBatch,
    RolloutContext, Seat, Sequence, TrajediContext,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximator::{logprob_entropy, softmax, Adam, AdamConfig, BatchInput, PolicyParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub grad_clip: f64,
    pub envs_per_update: usize,
    pub ticks_per_update: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            epochs: 2,
            minibatches: 2,
            clip: 0.2,
            entropy_coef: 0.001,
            value_coef: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            grad_clip: 0.2,
            envs_per_update: 16,
            ticks_per_update: 128,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("grad_clip", self.grad_clip),
            ("value_coef", self.value_coef),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::InvalidConfig(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if self.entropy_coef < 0.0 || self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(Error::InvalidConfig("entropy_coef >= 0 and gamma, gae_lambda <= 1 required".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.envs_per_update == 0 || self.ticks_per_update == 0 {
            return Err(Error::InvalidConfig("epochs, minibatches, envs and ticks must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, max_grad_norm: Some(self.grad_clip), ..AdamConfig::default() }
    }

    pub fn ticks_per_batch(&self) -> u64 {
        (self.envs_per_update * self.ticks_per_update) as u64
    }
}

/// One decision of a learning agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub latent: Option<usize>,
    pub member: usize,
    /// Recurrent state fed to the policy when the action was chosen.
    pub hidden: Vec<f64>,
    pub action: usize,
    pub logprob_old: f64,
    pub value_old: f64,
    /// Task reward summed over every tick this decision was in force.
    pub reward: f64,
    /// Already-scaled intrinsic reward (diversity or JSD bonus).
    pub bonus: f64,
    /// The episode ended while this decision was in force.
    pub done: bool,
}

impl Transition {
    pub fn total_reward(&self) -> f64 {
        self.reward + self.bonus
    }
}

/// Generalized advantage estimation over one chronological sequence.
/// `bootstrap_value` is the value of the state following the last entry and
/// is ignored when that entry is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "compute_gae: length mismatch");
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        gae = delta + gamma * lambda * live * gae;
        adv[t] = gae;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// A transition with its advantage and return target, ready for an update.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub latent: Option<usize>,
    pub member: usize,
    pub hidden: Vec<f64>,
    pub action: usize,
    pub logprob_old: f64,
    pub value_old: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Runs GAE over every sequence and flattens the result.
pub fn build_samples<'a>(sequences: impl IntoIterator<Item = &'a Sequence>, cfg: &PpoConfig) -> Vec<Sample> {
    let mut out = Vec::new();
    for seq in sequences {
        let ts = &seq.transitions;
        let rewards: Vec<f64> = ts.iter().map(Transition::total_reward).collect();
        let values: Vec<f64> = ts.iter().map(|t| t.value_old).collect();
        let dones: Vec<bool> = ts.iter().map(|t| t.done).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, seq.bootstrap_value, cfg.gamma, cfg.gae_lambda);
        for ((t, a), r) in ts.iter().zip(adv).zip(ret) {
            out.push(Sample {
                obs: t.obs.clone(),
                latent: t.latent,
                member: t.member,
                hidden: t.hidden.clone(),
                action: t.action,
                logprob_old: t.logprob_old,
                value_old: t.value_old,
                advantage: a,
                ret: r,
            });
        }
    }
    out
}

/// Shifts and scales advantages to mean 0, standard deviation 1.
pub fn normalize_advantages(samples: &mut [Sample]) {
    if samples.is_empty() {
        return;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for s in samples {
        s.advantage = (s.advantage - mean) / (std + 1e-8);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

/// Mean minibatch loss
/// `-min(ρA, clip(ρ)A) + value_coef·(V-R)^2 - entropy_coef·H`
/// and its gradient with respect to every parameter.
pub fn ppo_loss(params: &PolicyParams, batch: &[&Sample], cfg: &PpoConfig) -> Result<(f64, Vec<f64>, LossParts)> {
    if batch.is_empty() {
        return Err(Error::Empty("ppo minibatch"));
    }
    const CHUNK: usize = 32;
    let n = batch.len() as f64;
    let partials: Vec<Result<(Vec<f64>, [f64; 4])>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; params.data.len()];
            let mut acc = [0.0; 4];
            let mut members: Vec<usize> = chunk.iter().map(|s| s.member).collect();
            members.sort_unstable();
            members.dedup();
            for m in members {
                let group: Vec<&Sample> = chunk.iter().copied().filter(|s| s.member == m).collect();
                let inputs: Vec<BatchInput> = group
                    .iter()
                    .map(|s| BatchInput { obs: &s.obs, latent: s.latent, hidden: &s.hidden })
                    .collect();
                let (out, cache) = params.forward_batch(m, &inputs)?;
                let na = params.shape.actions;
                let mut dlogits = Vec::with_capacity(group.len() * na);
                let mut dvalues = Vec::with_capacity(group.len());
                for ((s, logits), &value) in group.iter().zip(out.logits.chunks_exact(na)).zip(&out.values) {
                    let (logp, h) = logprob_entropy(logits, s.action);
                    let ratio = (logp - s.logprob_old).exp();
                    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
                    let a = s.advantage;
                    let unclipped_active = ratio * a <= clipped * a;
                    let surrogate = if unclipped_active { ratio * a } else { clipped * a };
                    let verr = value - s.ret;
                    acc[0] -= surrogate;
                    acc[1] += verr * verr;
                    acc[2] += h;
                    if (ratio - 1.0).abs() > cfg.clip {
                        acc[3] += 1.0;
                    }

                    let p = softmax(logits);
                    let dsurr = if unclipped_active { -a * ratio } else { 0.0 };
                    dlogits.extend(p.iter().enumerate().map(|(j, &pj)| {
                        let onehot = if j == s.action { 1.0 } else { 0.0 };
                        let dlogp = onehot - pj;
                        let dh = if pj > 0.0 { -pj * (pj.ln() + h) } else { 0.0 };
                        (dsurr * dlogp - cfg.entropy_coef * dh) / n
                    }));
                    dvalues.push(2.0 * cfg.value_coef * verr / n);
                }
                params.backward_batch(&cache, &dlogits, &dvalues, &mut grad);
            }
            Ok((grad, acc))
        })
        .collect();
    let mut grad = vec![0.0; params.data.len()];
    let mut acc = [0.0; 4];
    for part in partials {
        let (g, a) = part?;
        for (x, y) in grad.iter_mut().zip(&g) {
            *x += y;
        }
        for k in 0..4 {
            acc[k] += a[k];
        }
    }
    let parts = LossParts {
        policy_loss: acc[0] / n,
        value_loss: acc[1] / n,
        entropy: acc[2] / n,
        clip_frac: acc[3] / n,
    };
    let loss = parts.policy_loss + cfg.value_coef * parts.value_loss - cfg.entropy_coef * parts.entropy;
    if !loss.is_finite() {
        return Err(Error::NonFinite("ppo loss".into()));
    }
    Ok((loss, grad, parts))
}

/// Normalizes advantages, then runs `epochs × minibatches` Adam steps.
/// Returned stats are averaged over all minibatches.
pub fn ppo_update<R: Rng>(
    params: &mut PolicyParams,
    adam: &mut Adam,
    mut samples: Vec<Sample>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossParts> {
    if samples.is_empty() {
        return Err(Error::Empty("rollout batch"));
    }
    normalize_advantages(&mut samples);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = LossParts::default();
    let mut steps = 0.0;
    let mb = cfg.minibatches.min(samples.len());
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for k in 0..mb {
            let lo = k * order.len() / mb;
            let hi = (k + 1) * order.len() / mb;
            let batch: Vec<&Sample> = order[lo..hi].iter().map(|&i| &samples[i]).collect();
            let (_, mut grad, parts) = ppo_loss(params, &batch, cfg)?;
            let layers = params.layers.clone();
            adam.step(&mut params.data, &mut grad, &layers)?;
            stats.policy_loss += parts.policy_loss;
            stats.value_loss += parts.value_loss;
            stats.entropy += parts.entropy;
            stats.clip_frac += parts.clip_frac;
            steps += 1.0;
        }
    }
    stats.policy_loss /= steps;
    stats.value_loss /= steps;
    stats.entropy /= steps;
    stats.clip_frac /= steps;
    Ok(stats)
}

/// One row of the per-update training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: u64,
    pub ticks: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub div_reward_mean: f64,
}

impl UpdateStats {
    pub const CSV_HEADER: &'static str =
        "update,ticks,episodes,mean_return,success_rate,policy_loss,value_loss,entropy,clip_frac,div_reward_mean";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.update,
            self.ticks,
            self.episodes,
            self.mean_return,
            self.success_rate,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_frac,
            self.div_reward_mean
        )
    }
}

#[cfg(test)]
mod tests;
