//! Terminal reward and its redistribution over generated tokens.
//!
//! The generator is queried once per context. Its answer is scored against
//! the gold answer with ROUGE-L, a KL penalty towards the reference policy is
//! subtracted, and the resulting `R_EOS` is split over the `K` generated tokens
//! with weights `exp(π_t) / Σ_j exp(π_j)`, where `π_t` is the probability the
//! policy gave to its own token `a_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rouge_l_text;
use crate::policy::{kl_divergence, Episode};

/// How `R_EOS` is split across tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attribution {
    /// Softmax over the token probabilities themselves: `w_t ∝ exp(π_t)`.
    #[default]
    Paper,
    /// Softmax over log-probabilities, i.e. `w_t ∝ π_t`.
    LogitSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub r_eos: f64,
    pub rewards: Vec<f64>,
    pub rouge_component: f64,
    pub kl_component: f64,
    pub kl_coef: f64,
}

/// `ROUGE-L(O, O*) − β_KL · kl`.
pub fn terminal_reward(answer: &str, gold: &str, kl: f64, kl_coef: f64) -> f64 {
    debug_assert!(kl_coef >= 0.0 && kl >= 0.0);
    rouge_l_text(answer, gold).value - kl_coef * kl
}

/// Normalized per-token weights; they sum to one.
pub fn attribution_weights(probs: &[f64], attribution: Attribution) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot distribute a reward over zero tokens".into(),
        ));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite token probability {bad}"
        )));
    }
    let raw: Vec<f64> = match attribution {
        Attribution::Paper => probs.iter().map(|p| p.exp()).collect(),
        Attribution::LogitSoftmax => probs.to_vec(),
    };
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "token probabilities sum to zero".into(),
        ));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `R_t = R_EOS · w_t`.
pub fn distribute_rewards(probs: &[f64], r_eos: f64, attribution: Attribution) -> Result<Vec<f64>> {
    Ok(attribution_weights(probs, attribution)?
        .into_iter()
        .map(|w| r_eos * w)
        .collect())
}

/// Score one episode end to end: ROUGE-L of the generator's answer, the
/// episode's KL to the reference policy, and the per-token split.
pub fn reward_trace(
    episode: &Episode,
    answer: &str,
    gold: &str,
    kl_coef: f64,
    attribution: Attribution,
) -> Result<RewardTrace> {
    let rouge = rouge_l_text(answer, gold).value;
    let kl = kl_divergence(episode)?;
    let r_eos = rouge - kl_coef * kl;
    Ok(RewardTrace {
        rewards: distribute_rewards(&episode.probs, r_eos, attribution)?,
        r_eos,
        rouge_component: rouge,
        kl_component: kl,
        kl_coef,
    })
}
