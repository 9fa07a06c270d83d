//! Reward-driven stage: clipped policy optimization against a black-box
//! generator, with a linear critic over the policy's decoder state.
//!
//! Each iteration samples one context per example, makes exactly one
//! generator call for it, scores the answer, spreads the terminal reward over
//! the context tokens and takes one ascent step on the clipped surrogate for
//! the policy and one descent step on the value loss for the critic.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, GeneratorRequest};
use crate::optim::{clip_grad_norm, Optimizer, RmsProp};
use crate::policy::{DecodeConfig, Episode, PolicySnapshot, Trace};
use crate::reward::{reward_trace, Attribution};

/// Which probability the ratio `r_t(θ)` is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioAnchor {
    /// `π_θ_ori(a_t|s_t)`, the frozen post-extraction snapshot.
    #[default]
    Original,
    /// The probability recorded when the episode was sampled.
    Behavior,
}

/// Linear value head `V(s) = w·s + b` on the decoder state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    hidden_dim: usize,
    /// `[w_1..w_H, b]`.
    phi: Vec<f64>,
}

impl Critic {
    /// Small uniform weights in `±0.01`, zero bias.
    pub fn new(hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi: Vec<f64> = (0..hidden_dim).map(|_| rng.gen_range(-0.01..0.01)).collect();
        phi.push(0.0);
        Self { hidden_dim, phi }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.phi
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.phi
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        debug_assert_eq!(state.len(), self.hidden_dim);
        state.iter().zip(&self.phi).map(|(s, w)| s * w).sum::<f64>() + self.phi[self.hidden_dim]
    }

    /// `V(s_t)` for every step of a teacher-forced trace.
    pub fn values(&self, trace: &Trace) -> Vec<f64> {
        trace.steps.iter().map(|s| self.value(&s.state)).collect()
    }

    /// Accumulate `Σ_t coeffs[t] · ∂V(s_t)/∂φ`.
    fn accumulate_grad(&self, trace: &Trace, coeffs: &[f64], grad: &mut [f64]) {
        for (step, &c) in trace.steps.iter().zip(coeffs) {
            for (g, s) in grad.iter_mut().zip(&step.state) {
                *g += c * s;
            }
            grad[self.hidden_dim] += c;
        }
    }
}

/// `δ_t = R_t + γ V(s_{t+1}) − V(s_t)`, with `V(s_{K+1}) = 0`.
pub fn compute_deltas(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch {
            what: "critic values",
            expected: rewards.len(),
            got: values.len(),
        });
    }
    Ok((0..rewards.len())
        .map(|t| {
            let next = values.get(t + 1).copied().unwrap_or(0.0);
            rewards[t] + gamma * next - values[t]
        })
        .collect())
}

/// `A_t = Σ_l (γλ)^l δ_{t+l}`, by the recursion `A_t = δ_t + γλ A_{t+1}`.
pub fn gae(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let decay = gamma * lambda;
    let mut out = vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for t in (0..deltas.len()).rev() {
        acc = deltas[t] + decay * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTrace {
    pub deltas: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
}

impl AdvantageTrace {
    pub fn new(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Self> {
        let deltas = compute_deltas(rewards, values, gamma)?;
        Ok(Self {
            advantages: gae(&deltas, gamma, lambda),
            deltas,
            targets: rewards.to_vec(),
            gamma,
            lambda,
        })
    }
}

/// Per-episode clipped objective with its derivative in `ln π_θ(a_t|s_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoObjective {
    /// `surrogate − β_V · value_loss`.
    pub objective: f64,
    /// Mean of `min(r_t A_t, clip(r_t) A_t)`.
    pub surrogate: f64,
    /// Mean of `(V(s_t) − R_t)²`.
    pub value_loss: f64,
    pub ratios: Vec<f64>,
    /// True where the clipped branch is strictly smaller, i.e. active.
    pub clip_mask: Vec<bool>,
    /// `∂objective / ∂ ln π_θ(a_t|s_t)`: `r_t A_t / K` on unclipped tokens, 0 on clipped ones.
    pub logprob_coeffs: Vec<f64>,
}

pub fn ppo_objective(
    new_probs: &[f64],
    old_probs: &[f64],
    advantages: &[f64],
    values: &[f64],
    targets: &[f64],
    clip_eps: f64,
    value_coef: f64,
) -> Result<PpoObjective> {
    if !(clip_eps > 0.0) {
        return Err(Error::InvalidArgument(format!("clip epsilon must be positive, got {clip_eps}")));
    }
    let k = new_probs.len();
    for (what, len) in [
        ("old probabilities", old_probs.len()),
        ("advantages", advantages.len()),
        ("critic values", values.len()),
        ("value targets", targets.len()),
    ] {
        if len != k {
            return Err(Error::LengthMismatch { what, expected: k, got: len });
        }
    }
    if k == 0 {
        return Err(Error::InvalidArgument("objective over zero tokens".into()));
    }
    let inv_k = 1.0 / k as f64;
    let mut surrogate = 0.0;
    let mut value_loss = 0.0;
    let mut ratios = Vec::with_capacity(k);
    let mut clip_mask = Vec::with_capacity(k);
    let mut coeffs = Vec::with_capacity(k);
    for t in 0..k {
        let r = new_probs[t] / old_probs[t];
        let a = advantages[t];
        let plain = r * a;
        let clipped = r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
        let is_clipped = clipped < plain;
        surrogate += plain.min(clipped);
        value_loss += (values[t] - targets[t]).powi(2);
        ratios.push(r);
        clip_mask.push(is_clipped);
        coeffs.push(if is_clipped { 0.0 } else { plain * inv_k });
    }
    surrogate *= inv_k;
    value_loss *= inv_k;
    Ok(PpoObjective {
        objective: surrogate - value_coef * value_loss,
        surrogate,
        value_loss,
        ratios,
        clip_mask,
        logprob_coeffs: coeffs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub critic_learning_rate: f64,
    pub batch_size: usize,
    /// Passes over the training examples.
    pub epochs: usize,
    pub attribution: Attribution,
    pub ratio_anchor: RatioAnchor,
    pub decode: DecodeConfig,
    /// Global L2 clip on the policy gradient; 0 disables it.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 1.0,
            lambda: 0.95,
            value_coef: 0.5,
            kl_coef: 0.1,
            learning_rate: 5e-5,
            critic_learning_rate: 5e-5,
            batch_size: 1,
            epochs: 1,
            attribution: Attribution::Paper,
            ratio_anchor: RatioAnchor::Original,
            decode: DecodeConfig::sampling(1.0, 0, 1.0),
            max_grad_norm: 0.0,
            seed: 0,
        }
    }
}

/// A training example with its retrieval already done.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutExample {
    pub input: Vec<u32>,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoUpdateReport {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_objective: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
    pub mean_ratio: f64,
    pub generator_calls: u64,
    pub episodes: usize,
    pub failed_calls: usize,
    pub mean_tokens: f64,
}

#[derive(Serialize)]
struct LogLine {
    iter: usize,
    mean_reward: f64,
    mean_objective: f64,
    value_loss: f64,
    clip_frac: f64,
    generator_calls: u64,
    mean_tokens: f64,
}

impl PpoUpdateReport {
    /// One line of the JSONL training log.
    pub fn write_log_line<W: Write>(&self, mut w: W) -> Result<()> {
        let line = LogLine {
            iter: self.iter,
            mean_reward: self.mean_reward,
            mean_objective: self.mean_objective,
            value_loss: self.value_loss,
            clip_frac: self.clip_frac,
            generator_calls: self.generator_calls,
            mean_tokens: self.mean_tokens,
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
        Ok(())
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination.
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct EpisodeUpdate {
    grad: Vec<f64>,
    critic_grad: Vec<f64>,
    r_eos: f64,
    surrogate_sum: f64,
    value_sq_sum: f64,
    ratio_sum: f64,
    clipped: usize,
    tokens: usize,
}

fn episode_update(
    policy: &PolicySnapshot,
    critic: &Critic,
    episode: &Episode,
    answer: &str,
    gold: &str,
    cfg: &PpoConfig,
) -> Result<EpisodeUpdate> {
    let model = policy.model();
    let trace = model.teacher_forced(&episode.input, &episode.output);
    let new_probs = trace.target_probs();
    let values = critic.values(&trace);
    let reward = reward_trace(episode, answer, gold, cfg.kl_coef, cfg.attribution)?;
    let adv = AdvantageTrace::new(&reward.rewards, &values, cfg.gamma, cfg.lambda)?;
    let old = match cfg.ratio_anchor {
        RatioAnchor::Original => &episode.ref_probs,
        RatioAnchor::Behavior => &episode.probs,
    };
    let obj = ppo_objective(&new_probs, old, &adv.advantages, &values, &adv.targets, cfg.clip_eps, cfg.value_coef)?;
    let k = episode.len() as f64;
    // Undo the per-episode mean; the caller divides by the batch token count.
    let coeffs: Vec<f64> = obj.logprob_coeffs.iter().map(|c| c * k).collect();
    let mut grad = vec![0.0; policy.params().len()];
    if coeffs.iter().any(|&c| c != 0.0) {
        model.backward(&trace, &coeffs, &mut grad);
    }
    let value_coeffs: Vec<f64> = values
        .iter()
        .zip(&adv.targets)
        .map(|(v, r)| 2.0 * cfg.value_coef * (v - r))
        .collect();
    let mut critic_grad = vec![0.0; critic.params().len()];
    critic.accumulate_grad(&trace, &value_coeffs, &mut critic_grad);
    Ok(EpisodeUpdate {
        grad,
        critic_grad,
        r_eos: reward.r_eos,
        surrogate_sum: obj.surrogate * k,
        value_sq_sum: obj.value_loss * k,
        ratio_sum: obj.ratios.iter().sum(),
        clipped: obj.clip_mask.iter().filter(|&&c| c).count(),
        tokens: episode.len(),
    })
}

/// Run the reward-driven stage. `on_report` sees each iteration's report as
/// soon as it is produced.
pub fn ppo_train(
    policy: &mut PolicySnapshot,
    critic: &mut Critic,
    examples: &[RolloutExample],
    gateway: &Gateway,
    cfg: &PpoConfig,
    mut on_report: impl FnMut(&PpoUpdateReport) -> Result<()>,
) -> Result<Vec<PpoUpdateReport>> {
    if critic.hidden_dim() != policy.arch().hidden_dim {
        return Err(Error::LayoutMismatch);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if cfg.epochs > 0 && examples.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }
    let mut opt = RmsProp::new(cfg.learning_rate, policy.params().len());
    let mut critic_opt = RmsProp::new(cfg.critic_learning_rate, critic.params().len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5348_5546, 0));
    let mut reports = Vec::new();
    let mut iter = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            iter += 1;
            let calls_before = gateway.calls();
            let snapshot: &PolicySnapshot = policy;
            let critic_view: &Critic = critic;
            let outcomes: Vec<Result<Option<EpisodeUpdate>>> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &idx)| {
                    let ex = &examples[idx];
                    let episode = snapshot.sample_sequence(&ex.input, &cfg.decode, mix(cfg.seed, iter as u64, slot as u64))?;
                    let request = GeneratorRequest::new(ex.question.clone(), episode.context.clone());
                    match gateway.generate(&request) {
                        Ok(resp) => episode_update(snapshot, critic_view, &episode, &resp.answer, &ex.answer, cfg).map(Some),
                        Err(_) => Ok(None),
                    }
                })
                .collect();
            let mut done = Vec::with_capacity(outcomes.len());
            let mut failed = 0usize;
            for o in outcomes {
                match o? {
                    Some(u) => done.push(u),
                    None => failed += 1,
                }
            }
            if done.is_empty() {
                return Err(Error::Training(format!(
                    "iteration {iter}: every generator call failed"
                )));
            }
            let tokens: usize = done.iter().map(|u| u.tokens).sum();
            let inv_n = 1.0 / tokens as f64;
            let mut grad = vec![0.0; policy.params().len()];
            let mut critic_grad = vec![0.0; critic.params().len()];
            for u in &done {
                grad.iter_mut().zip(&u.grad).for_each(|(a, b)| *a += b);
                critic_grad.iter_mut().zip(&u.critic_grad).for_each(|(a, b)| *a += b);
            }
            // Ascent on the objective is descent on its negation.
            grad.iter_mut().for_each(|g| *g *= -inv_n);
            critic_grad.iter_mut().for_each(|g| *g *= inv_n);
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            opt.step(policy.params_mut(), &grad);
            critic_opt.step(critic.params_mut(), &critic_grad);

            let surrogate: f64 = done.iter().map(|u| u.surrogate_sum).sum::<f64>() * inv_n;
            let value_loss: f64 = done.iter().map(|u| u.value_sq_sum).sum::<f64>() * inv_n;
            let report = PpoUpdateReport {
                iter,
                mean_reward: done.iter().map(|u| u.r_eos).sum::<f64>() / done.len() as f64,
                mean_objective: surrogate - cfg.value_coef * value_loss,
                value_loss,
                clip_frac: done.iter().map(|u| u.clipped).sum::<usize>() as f64 * inv_n,
                mean_ratio: done.iter().map(|u| u.ratio_sum).sum::<f64>() * inv_n,
                generator_calls: gateway.calls() - calls_before,
                episodes: done.len(),
                failed_calls: failed,
                mean_tokens: tokens as f64 / done.len() as f64,
            };
            on_report(&report)?;
            reports.push(report);
        }
    }
    Ok(reports)
}
