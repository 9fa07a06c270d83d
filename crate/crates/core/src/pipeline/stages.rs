use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::optim::{Adam, Optimizer};
use crate::policy::{PolicySnapshot, Vocabulary, EOS};
use crate::ppo::{ppo_train, Critic, PpoUpdateReport, RolloutExample};
use crate::retrieval::{Corpus, InvertedIndex};

use super::config::TrainingConfig;
use super::dataset::QAInstance;

/// A corpus with its BM25 index.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub corpus: Corpus,
    pub index: InvertedIndex,
}

/// Top-K documents for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub ids: Vec<String>,
    pub texts: Vec<String>,
}

impl Retrieved {
    /// The documents joined by single spaces, best first.
    pub fn concatenated(&self) -> String {
        self.texts.join(" ")
    }
}

impl KnowledgeBase {
    pub fn new(corpus: Corpus) -> Result<Self> {
        let index = InvertedIndex::build(&corpus)?;
        Ok(Self { corpus, index })
    }

    /// Pair a corpus with a previously built index; the two must cover the same ids.
    pub fn with_index(corpus: Corpus, index: InvertedIndex) -> Result<Self> {
        if index.doc_count() != corpus.len() {
            return Err(Error::Format(format!(
                "index covers {} documents but the corpus has {}",
                index.doc_count(),
                corpus.len()
            )));
        }
        if let Some(id) = index.doc_ids().iter().find(|id| !corpus.contains(id)) {
            return Err(Error::UnknownDocId(id.clone()));
        }
        Ok(Self { corpus, index })
    }

    pub fn retrieve(&self, question: &str, k: usize) -> Result<Retrieved> {
        let res = self.index.retrieve_topk(question, k)?;
        let mut ids = Vec::with_capacity(res.ranked.len());
        let mut texts = Vec::with_capacity(res.ranked.len());
        for (id, _) in res.ranked {
            let doc = self.corpus.get(&id).ok_or_else(|| Error::UnknownDocId(id.clone()))?;
            texts.push(doc.text.clone());
            ids.push(id);
        }
        Ok(Retrieved { ids, texts })
    }

    /// Adapter input for `question` over its Top-K documents.
    pub fn policy_input(&self, policy: &PolicySnapshot, question: &str, k: usize) -> Result<(Retrieved, Vec<u32>)> {
        let r = self.retrieve(question, k)?;
        let docs: Vec<&str> = r.texts.iter().map(String::as_str).collect();
        let input = policy.build_input(question, &docs);
        Ok((r, input))
    }
}

/// Vocabulary over the corpus plus the training questions, answers and gold contexts.
pub fn build_vocabulary(cfg: &TrainingConfig, corpus: &Corpus, train: &[QAInstance]) -> Vocabulary {
    let texts = corpus.iter().map(|d| d.text.as_str()).chain(train.iter().flat_map(|qa| {
        [Some(qa.question.as_str()), Some(qa.answer.as_str()), qa.gold_context.as_deref()]
            .into_iter()
            .flatten()
    }));
    Vocabulary::build(texts, cfg.vocab_cap)
}

/// Gold context as token ids, cut to leave room for the closing EOS.
pub fn extraction_target(vocab: &Vocabulary, gold: &str, max_output_len: usize) -> Vec<u32> {
    let mut ids = vocab.encode(gold);
    ids.truncate(max_output_len.saturating_sub(1));
    ids.push(EOS);
    ids
}

#[derive(Debug, Clone)]
pub struct ExtractOutcome {
    /// Trained policy with `θ_ori` frozen to the result.
    pub policy: PolicySnapshot,
    /// Mean token cross-entropy of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Supervised extraction: teach the adapter to reproduce each instance's gold
/// context from its question and Top-K documents.
pub fn run_contextual_stage(cfg: &TrainingConfig, kb: &KnowledgeBase, train: &[QAInstance]) -> Result<ExtractOutcome> {
    cfg.validate()?;
    if let Some(i) = train.iter().position(|qa| qa.gold_context.is_none()) {
        return Err(Error::Training(format!(
            "training instance {} has no gold_context",
            i + 1
        )));
    }
    let vocab = build_vocabulary(cfg, &kb.corpus, train);
    let arch = cfg.architecture(vocab.len());
    let mut policy = PolicySnapshot::new(vocab, arch, cfg.seed);
    let mut pairs = Vec::with_capacity(train.len());
    for qa in train {
        let (_, input) = kb.policy_input(&policy, &qa.question, cfg.retrieval_k)?;
        let gold = qa.gold_context.as_deref().unwrap_or_default();
        let target = extraction_target(policy.vocab(), gold, cfg.max_output_len);
        pairs.push((input, target));
    }
    let mut opt = Adam::new(cfg.extract_learning_rate, policy.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4558_5452);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step_losses = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.extract_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i].clone()));
            let (loss, grad) = policy.supervised_loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite extraction loss at step {}",
                    step_losses.len() + 1
                )));
            }
            opt.step(policy.params_mut(), &grad);
            step_losses.push(loss);
        }
    }
    policy.freeze_reference();
    Ok(ExtractOutcome { policy, step_losses })
}

/// Rollout examples (question, answer, adapter input) for the reward stage.
pub fn rollout_examples(
    cfg: &TrainingConfig,
    kb: &KnowledgeBase,
    policy: &PolicySnapshot,
    train: &[QAInstance],
) -> Result<Vec<RolloutExample>> {
    train
        .iter()
        .map(|qa| {
            let (_, input) = kb.policy_input(policy, &qa.question, cfg.retrieval_k)?;
            Ok(RolloutExample {
                input,
                question: qa.question.clone(),
                answer: qa.answer.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RewardOutcome {
    pub policy: PolicySnapshot,
    pub critic: Critic,
    pub reports: Vec<PpoUpdateReport>,
}

/// Reward-driven refinement of an extraction checkpoint. When `log` is given,
/// one JSONL record per iteration is written to it.
pub fn run_reward_stage(
    cfg: &TrainingConfig,
    kb: &KnowledgeBase,
    train: &[QAInstance],
    mut policy: PolicySnapshot,
    gateway: &Gateway,
    mut log: Option<&mut dyn Write>,
) -> Result<RewardOutcome> {
    cfg.validate()?;
    let examples = rollout_examples(cfg, kb, &policy, train)?;
    let mut critic = Critic::new(policy.arch().hidden_dim, cfg.seed ^ 0x4352_4954);
    let reports = ppo_train(&mut policy, &mut critic, &examples, gateway, &cfg.ppo(), |r| {
        if let Some(w) = log.as_mut() {
            r.write_log_line(&mut **w)?;
        }
        Ok(())
    })?;
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    Ok(RewardOutcome {
        policy,
        critic,
        reports,
    })
}
