//! Autoregressive decoding: ancestral sampling, greedy and beam search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Encoding, Model};
use super::vocab::{BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeStrategy {
    Sample,
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub num_beams: usize,
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub top_p: f64,
    pub early_stopping: bool,
}

impl DecodeConfig {
    pub fn sampling(temperature: f64, top_k: usize, top_p: f64) -> Self {
        Self {
            strategy: DecodeStrategy::Sample,
            num_beams: 1,
            temperature,
            top_k,
            top_p,
            early_stopping: true,
        }
    }

    pub fn greedy() -> Self {
        Self {
            strategy: DecodeStrategy::Greedy,
            ..Self::sampling(1.0, 0, 1.0)
        }
    }

    pub fn beam(num_beams: usize, early_stopping: bool) -> Self {
        Self {
            strategy: DecodeStrategy::Beam,
            num_beams,
            early_stopping,
            ..Self::sampling(1.0, 0, 1.0)
        }
    }
}

fn argmax(p: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best as u32
}

/// Draw a token from `probs` after temperature, top-k and nucleus filtering.
pub fn sample_token<R: Rng>(probs: &[f64], cfg: &DecodeConfig, rng: &mut R) -> u32 {
    let unfiltered = cfg.temperature == 1.0 && cfg.top_k == 0 && cfg.top_p >= 1.0;
    if unfiltered {
        return draw(probs.iter().copied().enumerate(), 1.0, rng);
    }
    let inv_t = 1.0 / cfg.temperature.max(1e-8);
    let mut cand: Vec<(usize, f64)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, p.max(f64::MIN_POSITIVE).ln() * inv_t))
        .collect();
    let max = cand.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for c in cand.iter_mut() {
        c.1 = (c.1 - max).exp();
        total += c.1;
    }
    for c in cand.iter_mut() {
        c.1 /= total;
    }
    if cfg.top_k > 0 || cfg.top_p < 1.0 {
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if cfg.top_k > 0 {
            cand.truncate(cfg.top_k);
        }
        if cfg.top_p < 1.0 {
            let mut cum = 0.0;
            let mut keep = cand.len();
            for (n, c) in cand.iter().enumerate() {
                cum += c.1;
                if cum >= cfg.top_p {
                    keep = n + 1;
                    break;
                }
            }
            cand.truncate(keep);
        }
    }
    let mass: f64 = cand.iter().map(|c| c.1).sum();
    draw(cand.into_iter(), mass, rng)
}

fn draw<R: Rng>(items: impl Iterator<Item = (usize, f64)>, mass: f64, rng: &mut R) -> u32 {
    let u: f64 = rng.gen::<f64>() * mass;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, p) in items {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i as u32;
        }
    }
    last as u32
}

/// Ancestral (or greedy) decoding. The output always ends in EOS; when the
/// length limit is reached the last slot is forced to EOS.
pub fn sample<R: Rng>(
    model: &Model<'_>,
    enc: &Encoding,
    cfg: &DecodeConfig,
    max_len: usize,
    rng: &mut R,
) -> Vec<u32> {
    let mut out = Vec::new();
    let mut s = enc.initial_state();
    let mut prev = BOS;
    while out.len() < max_len {
        let st = model.step(enc, prev, &s);
        let tok = if out.len() + 1 == max_len {
            EOS
        } else {
            match cfg.strategy {
                DecodeStrategy::Greedy => argmax(&st.probs),
                _ => sample_token(&st.probs, cfg, rng),
            }
        };
        out.push(tok);
        if tok == EOS {
            break;
        }
        s = st.state;
        prev = tok;
    }
    out
}

struct Hyp {
    tokens: Vec<u32>,
    logp: f64,
    state: Vec<f64>,
}

/// Beam search scored by length-normalized log-likelihood. With early stopping,
/// search ends as soon as `num_beams` hypotheses have emitted EOS; without it,
/// search runs until every beam has finished or hit the length limit.
pub fn beam_search(
    model: &Model<'_>,
    enc: &Encoding,
    cfg: &DecodeConfig,
    max_len: usize,
) -> Vec<u32> {
    let beams_n = cfg.num_beams.max(1);
    let inv_t = 1.0 / cfg.temperature.max(1e-8);
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
        state: enc.initial_state(),
    }];
    let mut done: Vec<(Vec<u32>, f64)> = Vec::new();
    let norm = |tokens: &[u32], logp: f64| logp / tokens.len() as f64;

    while !live.is_empty() {
        let mut cand: Vec<(usize, u32, f64)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (bi, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let st = model.step(enc, prev, &h.state);
            let last_slot = h.tokens.len() + 1 == max_len;
            let mut logp: Vec<(u32, f64)> = if inv_t == 1.0 {
                st.probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i as u32, p.max(f64::MIN_POSITIVE).ln()))
                    .collect()
            } else {
                let mut scaled: Vec<f64> = st
                    .probs
                    .iter()
                    .map(|p| p.max(f64::MIN_POSITIVE).ln() * inv_t)
                    .collect();
                let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + scaled.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                scaled.iter_mut().for_each(|v| *v -= lse);
                scaled.into_iter().enumerate().map(|(i, v)| (i as u32, v)).collect()
            };
            if last_slot {
                logp.retain(|(t, _)| *t == EOS);
            }
            logp.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(tok, lp) in logp.iter().take(2 * beams_n) {
                cand.push((bi, tok, h.logp + lp));
            }
            states.push(st.state);
        }
        cand.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next = Vec::with_capacity(beams_n);
        for (rank, (bi, tok, score)) in cand.into_iter().enumerate() {
            let mut tokens = live[bi].tokens.clone();
            tokens.push(tok);
            if tok == EOS {
                if rank < beams_n {
                    let s = norm(&tokens, score);
                    done.push((tokens, s));
                }
            } else {
                next.push(Hyp {
                    tokens,
                    logp: score,
                    state: states[bi].clone(),
                });
            }
            if next.len() == beams_n {
                break;
            }
        }
        if cfg.early_stopping && done.len() >= beams_n {
            break;
        }
        live = next;
    }
    done.sort_by(|a, b| b.1.total_cmp(&a.1));
    done.into_iter()
        .next()
        .map(|d| d.0)
        .unwrap_or_else(|| vec![EOS])
}
