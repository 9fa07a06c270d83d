//! The trainable adapter policy.
//!
//! A [`PolicySnapshot`] holds the current parameters `θ` and a frozen reference
//! copy `θ_ori` over the same [`Architecture`]. It samples distilled contexts,
//! reports exact per-token probabilities under both parameter sets, and
//! provides analytic gradients for the supervised and policy-gradient losses.

mod decode;
mod model;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use decode::{sample_token, DecodeConfig, DecodeStrategy};
pub use model::{Architecture, Encoding, Layout, Model, Step, Trace};
pub use vocab::{Vocabulary, BOS, DOC, EOS, PAD, SEP, UNK};

use crate::error::{Error, Result};

/// Magic first line of a policy checkpoint.
pub const POLICY_MAGIC: &str = "PRCA-POL-1";

/// Build the adapter input: `query [SEP] [DOC] doc1 [DOC] doc2 ...`, cut to `max_len`.
/// Truncation removes trailing document tokens first.
pub fn build_input(vocab: &Vocabulary, query: &str, docs: &[&str], max_len: usize) -> Vec<u32> {
    let mut ids = vocab.encode(query);
    ids.push(SEP);
    for doc in docs {
        if ids.len() >= max_len {
            break;
        }
        ids.push(DOC);
        ids.extend(vocab.encode(doc));
    }
    ids.truncate(max_len);
    ids
}

/// One generated context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub input: Vec<u32>,
    /// `a_1..a_K`, ending in EOS.
    pub output: Vec<u32>,
    /// `π_θ(a_t | s_t)` at generation time.
    pub probs: Vec<f64>,
    /// `π_θ_ori(a_t | s_t)`.
    pub ref_probs: Vec<f64>,
    /// Full-distribution `KL(π_θ(·|s_t) ‖ π_θ_ori(·|s_t))` per visited state.
    pub step_kl: Vec<f64>,
    /// The distilled context as text.
    pub context: String,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }
}

/// Mean over visited states of the full-distribution KL recorded in `episode`.
pub fn kl_divergence(episode: &Episode) -> Result<f64> {
    if episode.step_kl.len() != episode.output.len() {
        return Err(Error::LengthMismatch {
            what: "per-step KL entries",
            expected: episode.output.len(),
            got: episode.step_kl.len(),
        });
    }
    if episode.step_kl.is_empty() {
        return Ok(0.0);
    }
    Ok(episode.step_kl.iter().sum::<f64>() / episode.step_kl.len() as f64)
}

fn distribution_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    arch: Architecture,
    layout: Layout,
    vocab: Vocabulary,
    theta: Vec<f64>,
    theta_ori: Vec<f64>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    arch: Architecture,
    seed: u64,
    vocab: Vocabulary,
    theta: Vec<f64>,
    theta_ori: Vec<f64>,
}

impl PolicySnapshot {
    /// Fresh randomly initialized policy with `θ_ori = θ`.
    pub fn new(vocab: Vocabulary, mut arch: Architecture, seed: u64) -> Self {
        arch.vocab_size = vocab.len();
        let layout = arch.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; layout.total];
        let fan = |r: &std::ops::Range<usize>, fan_in: usize| (r.clone(), 1.0 / (fan_in as f64).sqrt());
        let h = arch.hidden_dim;
        let scaled = [
            (layout.embedding.clone(), 0.1),
            fan(&layout.enc_w, h),
            fan(&layout.enc_u, h),
            fan(&layout.dec_w, h),
            fan(&layout.dec_u, h),
            fan(&layout.att_mem, arch.memory_dim()),
            fan(&layout.att_query, h),
            fan(&layout.att_v, arch.attn_dim),
            fan(&layout.out_w, h + arch.memory_dim()),
        ];
        for (range, scale) in scaled {
            for w in &mut theta[range] {
                *w = rng.gen_range(-scale..scale);
            }
        }
        for range in layout.zero_init_blocks() {
            theta[range].iter_mut().for_each(|w| *w = 0.0);
        }
        Self {
            theta_ori: theta.clone(),
            arch,
            layout,
            vocab,
            theta,
            seed,
        }
    }

    pub fn from_parts(
        vocab: Vocabulary,
        arch: Architecture,
        theta: Vec<f64>,
        theta_ori: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if arch.vocab_size != vocab.len() {
            return Err(Error::LengthMismatch {
                what: "vocabulary size",
                expected: arch.vocab_size,
                got: vocab.len(),
            });
        }
        let layout = arch.layout();
        if theta.len() != layout.total || theta_ori.len() != layout.total {
            return Err(Error::LayoutMismatch);
        }
        Ok(Self {
            arch,
            layout,
            vocab,
            theta,
            theta_ori,
            seed,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn reference_params(&self) -> &[f64] {
        &self.theta_ori
    }

    /// Copy `θ` into `θ_ori`. Called once, when the supervised stage ends.
    pub fn freeze_reference(&mut self) {
        self.theta_ori.clone_from(&self.theta);
    }

    pub fn model(&self) -> Model<'_> {
        Model::new(&self.arch, &self.layout, &self.theta)
    }

    pub fn reference_model(&self) -> Model<'_> {
        Model::new(&self.arch, &self.layout, &self.theta_ori)
    }

    pub fn build_input(&self, query: &str, docs: &[&str]) -> Vec<u32> {
        build_input(&self.vocab, query, docs, self.arch.max_input_len)
    }

    fn check_input(&self, input: &[u32]) -> Result<()> {
        if input.is_empty() {
            return Err(Error::InvalidArgument("policy input is empty".into()));
        }
        if input.len() > self.arch.max_input_len {
            return Err(Error::SequenceTooLong {
                len: input.len(),
                max: self.arch.max_input_len,
            });
        }
        if let Some(&bad) = input.iter().find(|&&t| t as usize >= self.arch.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} out of vocabulary")));
        }
        Ok(())
    }

    fn check_output(&self, output: &[u32]) -> Result<()> {
        if output.len() > self.arch.max_output_len {
            return Err(Error::SequenceTooLong {
                len: output.len(),
                max: self.arch.max_output_len,
            });
        }
        if let Some(&bad) = output.iter().find(|&&t| t as usize >= self.arch.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} out of vocabulary")));
        }
        Ok(())
    }

    /// `π_θ(· | input, prefix)`: the next-token distribution after `prefix`.
    pub fn forward_step(&self, input: &[u32], prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        self.check_output(prefix)?;
        let model = self.model();
        let enc = model.encode(input);
        let mut s = enc.initial_state();
        let mut prev = BOS;
        for &tok in prefix {
            s = model.step(&enc, prev, &s).state;
            prev = tok;
        }
        Ok(model.step(&enc, prev, &s).probs)
    }

    /// Decode a context for `input`. Sampling uses `rng_seed`; greedy and beam
    /// decoding ignore it. Probabilities under `θ` and `θ_ori` are recorded for
    /// every emitted token.
    pub fn sample_sequence(&self, input: &[u32], decode: &DecodeConfig, rng_seed: u64) -> Result<Episode> {
        self.check_input(input)?;
        let model = self.model();
        let enc = model.encode(input);
        let max_len = self.arch.max_output_len.max(1);
        let output = match decode.strategy {
            DecodeStrategy::Beam => decode::beam_search(&model, &enc, decode, max_len),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                decode::sample(&model, &enc, decode, max_len, &mut rng)
            }
        };
        Ok(self.score_output(input, output, Some(enc)))
    }

    /// Replay `output` under both parameter sets.
    fn score_output(&self, input: &[u32], output: Vec<u32>, enc: Option<Encoding>) -> Episode {
        let model = self.model();
        let enc = enc.unwrap_or_else(|| model.encode(input));
        let reference = self.reference_model();
        let enc_ref = reference.encode(input);
        let mut s = enc.initial_state();
        let mut s_ref = enc_ref.initial_state();
        let mut prev = BOS;
        let mut probs = Vec::with_capacity(output.len());
        let mut ref_probs = Vec::with_capacity(output.len());
        let mut step_kl = Vec::with_capacity(output.len());
        for &tok in &output {
            let st = model.step(&enc, prev, &s);
            let sr = reference.step(&enc_ref, prev, &s_ref);
            probs.push(st.probs[tok as usize]);
            ref_probs.push(sr.probs[tok as usize]);
            step_kl.push(distribution_kl(&st.probs, &sr.probs));
            s = st.state;
            s_ref = sr.state;
            prev = tok;
        }
        Episode {
            input: input.to_vec(),
            context: self.vocab.decode(&output),
            output,
            probs,
            ref_probs,
            step_kl,
        }
    }

    /// Rebuild an episode for a given output sequence (used for replays and tests).
    pub fn episode_for(&self, input: &[u32], output: &[u32]) -> Result<Episode> {
        self.check_input(input)?;
        self.check_output(output)?;
        Ok(self.score_output(input, output.to_vec(), None))
    }

    /// KL between `θ` and `θ_ori` recomputed from scratch along the episode's states.
    pub fn kl_divergence(&self, episode: &Episode) -> Result<f64> {
        if self.theta.len() != self.theta_ori.len() {
            return Err(Error::LayoutMismatch);
        }
        kl_divergence(&self.episode_for(&episode.input, &episode.output)?)
    }

    /// Token-level cross-entropy `−(1/N) Σ_i Σ_t ln π_θ(y_t | prefix)` over a batch of
    /// `(input, target)` pairs, with its exact gradient. Targets should end in EOS.
    pub fn supervised_loss_and_grad(&self, batch: &[(Vec<u32>, Vec<u32>)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for (input, target) in batch {
            self.check_input(input)?;
            self.check_output(target)?;
        }
        let scale = 1.0 / batch.len() as f64;
        let model = self.model();
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|(input, target)| {
                let trace = model.teacher_forced(input, target);
                let nll: f64 = -trace.target_probs().iter().map(|p| p.ln()).sum::<f64>();
                let mut grad = vec![0.0; self.layout.total];
                model.backward(&trace, &vec![-scale; target.len()], &mut grad);
                (nll, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.layout.total];
        for (nll, g) in parts {
            loss += nll * scale;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }

    /// Gradient of `Σ_t coeffs[t] · ln π_θ(a_t | s_t)` along `episode`.
    pub fn policy_grad_logprob(&self, episode: &Episode, coeffs: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.layout.total];
        self.accumulate_policy_grad(episode, coeffs, &mut grad)?;
        Ok(grad)
    }

    /// As [`Self::policy_grad_logprob`], accumulating into `grad`, and returning the
    /// teacher-forced trace (whose decoder states feed the critic).
    pub fn accumulate_policy_grad(&self, episode: &Episode, coeffs: &[f64], grad: &mut [f64]) -> Result<Trace> {
        if coeffs.len() != episode.output.len() {
            return Err(Error::LengthMismatch {
                what: "per-token coefficients",
                expected: episode.output.len(),
                got: coeffs.len(),
            });
        }
        if grad.len() != self.layout.total {
            return Err(Error::LayoutMismatch);
        }
        self.check_input(&episode.input)?;
        self.check_output(&episode.output)?;
        let model = self.model();
        let trace = model.teacher_forced(&episode.input, &episode.output);
        if coeffs.iter().any(|&c| c != 0.0) {
            model.backward(&trace, coeffs, grad);
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{POLICY_MAGIC}")?;
        let body = CheckpointBody {
            arch: self.arch,
            seed: self.seed,
            vocab: self.vocab.clone(),
            theta: self.theta.clone(),
            theta_ori: self.theta_ori.clone(),
        };
        serde_json::to_writer(&mut w, &body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        if header.trim_end() != POLICY_MAGIC {
            return Err(Error::Format(format!(
                "{}: expected header {POLICY_MAGIC}",
                path.display()
            )));
        }
        let mut raw = String::new();
        reader.read_to_string(&mut raw)?;
        let body: CheckpointBody = serde_json::from_str(&raw)?;
        Self::from_parts(body.vocab, body.arch, body.theta, body.theta_ori, body.seed)
    }
}
