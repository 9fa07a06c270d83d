use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{judge, Gateway, GeneratorRequest, JudgeBackend, Verdict};
use crate::policy::PolicySnapshot;
use crate::retrieval::tokenize;

use super::config::TrainingConfig;
use super::dataset::QAInstance;
use super::stages::KnowledgeBase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    pub gold_answer: String,
    pub retrieved_ids: Vec<String>,
    pub context: String,
    pub context_tokens: usize,
    pub answer: Option<String>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

/// Outcome of one evaluation pass. Contains nothing time-dependent, so equal
/// inputs serialize to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub with_adapter: bool,
    pub k: usize,
    /// `yes_count / instance_count`.
    pub accuracy: f64,
    pub yes_count: usize,
    /// Instances with a verdict; errored ones are excluded.
    pub instance_count: usize,
    pub errored: usize,
    pub mean_context_tokens: f64,
    pub generator_calls: u64,
    pub config_fingerprint: String,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything an evaluation pass needs besides the test set and the adapter.
#[derive(Clone, Copy)]
pub struct EvalSetup<'a> {
    pub cfg: &'a TrainingConfig,
    pub kb: &'a KnowledgeBase,
    pub gateway: &'a Gateway,
    pub judge: &'a JudgeBackend<'a>,
    /// Skip failed instances instead of aborting the run.
    pub lenient: bool,
}

struct Outcome {
    record: EvalRecord,
    called: bool,
}

fn evaluate_one(setup: &EvalSetup<'_>, qa: &QAInstance, policy: Option<&PolicySnapshot>, k: usize) -> Result<Outcome> {
    let EvalSetup { cfg, kb, gateway, judge: judge_backend, .. } = *setup;
    let (retrieved, context) = match policy {
        Some(p) => {
            let (r, input) = kb.policy_input(p, &qa.question, k)?;
            let ep = p.sample_sequence(&input, &cfg.eval_decode(), cfg.seed)?;
            (r, ep.context)
        }
        None => {
            let r = kb.retrieve(&qa.question, k)?;
            let c = r.concatenated();
            (r, c)
        }
    };
    let mut record = EvalRecord {
        question: qa.question.clone(),
        gold_answer: qa.answer.clone(),
        retrieved_ids: retrieved.ids,
        context_tokens: tokenize(&context).len(),
        context,
        answer: None,
        verdict: None,
        error: None,
    };
    let resp = match gateway.generate(&GeneratorRequest::new(qa.question.clone(), record.context.clone())) {
        Ok(r) => r,
        Err(e) => {
            record.error = Some(e.to_string());
            return Ok(Outcome { record, called: false });
        }
    };
    match judge(&qa.question, &qa.answer, &resp.answer, judge_backend) {
        Ok(v) => record.verdict = Some(v.verdict),
        Err(e) => record.error = Some(e.to_string()),
    }
    record.answer = Some(resp.answer);
    Ok(Outcome { record, called: true })
}

/// Answer every test question once, with the adapter's distilled context when
/// `policy` is given and the raw Top-K concatenation otherwise, and judge it.
pub fn evaluate(setup: &EvalSetup<'_>, test: &[QAInstance], policy: Option<&PolicySnapshot>, k: usize) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty test set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let outcomes: Vec<Result<Outcome>> = test
        .par_iter()
        .map(|qa| evaluate_one(setup, qa, policy, k))
        .collect();
    let mut records = Vec::with_capacity(test.len());
    let mut calls = 0u64;
    for o in outcomes {
        let o = o?;
        if let (Some(err), false) = (&o.record.error, setup.lenient) {
            return Err(Error::Generator(format!("{:?}: {err}", o.record.question)));
        }
        calls += o.called as u64;
        records.push(o.record);
    }
    let scored: Vec<&EvalRecord> = records.iter().filter(|r| r.verdict.is_some()).collect();
    if scored.is_empty() {
        return Err(Error::Generator("every evaluation instance failed".into()));
    }
    let yes = scored.iter().filter(|r| r.verdict == Some(Verdict::Yes)).count();
    let tokens: usize = records.iter().map(|r| r.context_tokens).sum();
    Ok(EvalReport {
        with_adapter: policy.is_some(),
        k,
        accuracy: yes as f64 / scored.len() as f64,
        yes_count: yes,
        instance_count: scored.len(),
        errored: records.len() - scored.len(),
        mean_context_tokens: tokens as f64 / records.len() as f64,
        generator_calls: calls,
        config_fingerprint: setup.cfg.fingerprint(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub with_adapter: EvalReport,
    pub without_adapter: EvalReport,
}

/// Evaluate with and without the adapter at every `k`.
pub fn sweep_topk(setup: &EvalSetup<'_>, test: &[QAInstance], policy: &PolicySnapshot, ks: &[usize]) -> Result<Vec<SweepRow>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no k values to sweep".into()));
    }
    if ks.contains(&0) {
        return Err(Error::InvalidArgument("k values must be at least 1".into()));
    }
    ks.iter()
        .map(|&k| {
            Ok(SweepRow {
                k,
                with_adapter: evaluate(setup, test, Some(policy), k)?,
                without_adapter: evaluate(setup, test, None, k)?,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "k,acc_with,acc_without,tokens_with,tokens_without";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.k,
            r.with_adapter.accuracy,
            r.without_adapter.accuracy,
            r.with_adapter.mean_context_tokens,
            r.without_adapter.mean_context_tokens
        )?;
    }
    Ok(())
}
