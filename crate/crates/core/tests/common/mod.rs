//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use prca_core::policy::{Architecture, PolicySnapshot, Vocabulary};
use prca_core::retrieval::Corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Longest common subsequence by trying every subsequence of the shorter side.
pub fn brute_lcs(x: &[u8], y: &[u8]) -> usize {
    let (short, long) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let is_subseq = |s: &[u8]| {
        let mut it = long.iter();
        s.iter().all(|c| it.any(|d| d == c))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let picked: Vec<u8> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| short[i]).collect();
        if picked.len() > best && is_subseq(&picked) {
            best = picked.len();
        }
    }
    best
}

/// Generalized advantages written as the explicit double sum.
pub fn gae_double_sum(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let k = deltas.len();
    (0..k)
        .map(|t| (0..k - t).map(|l| (gamma * lambda).powi(l as i32) * deltas[t + l]).sum())
        .collect()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Okapi BM25 (k1 = 1.2, b = 0.75) scored for every document from raw text,
/// then fully sorted by descending score with ascending id on ties.
pub fn brute_bm25(corpus: &Corpus, query: &str) -> Vec<(String, f64)> {
    let (k1, b) = (1.2, 0.75);
    let docs: Vec<(String, Vec<String>)> = corpus.iter().map(|d| (d.id.clone(), words(&d.text))).collect();
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let avg = total as f64 / n;
    let q = words(query);
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, toks)| {
            let mut score = 0.0;
            for term in &q {
                let tf = toks.iter().filter(|t| *t == term).count();
                if tf == 0 {
                    continue;
                }
                let df = docs.iter().filter(|(_, t)| t.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = if avg > 0.0 { 1.0 - b + b * toks.len() as f64 / avg } else { 1.0 };
                let tf = tf as f64;
                score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
            (id.clone(), score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

/// A random corpus over a small vocabulary so that shared terms and tied
/// scores are common.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_docs: usize) -> (Corpus, String) {
    const WORDS: [&str; 10] = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen", "ibis", "jay"];
    let n = rng.gen_range(1..=max_docs);
    let mut ids: Vec<usize> = (0..n * 3).collect();
    let mut corpus = Corpus::new();
    for _ in 0..n {
        // Ids drawn out of order so insertion order differs from id order.
        let id = ids.swap_remove(rng.gen_range(0..ids.len()));
        let len = rng.gen_range(0..8);
        let text: Vec<&str> = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        corpus
            .push(prca_core::retrieval::Document::new(format!("d{id}"), text.join(" ")))
            .unwrap();
    }
    let qlen = rng.gen_range(0..5);
    let query: Vec<&str> = (0..qlen).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    (corpus, query.join(", "))
}

pub fn numeric_grad(params: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error, with a floor on the denominator so
/// that pairs of near-zero entries do not dominate.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// A policy of a few hundred parameters with every weight perturbed away
/// from its initialization, and a reference snapshot that differs from it.
pub fn small_policy(seed: u64) -> PolicySnapshot {
    let vocab = Vocabulary::build(["paris is the capital of france", "berlin germany rome"], 64);
    let arch = Architecture {
        vocab_size: 0,
        embed_dim: 3,
        hidden_dim: 4,
        attn_dim: 3,
        max_input_len: 16,
        max_output_len: 6,
    };
    let mut p = PolicySnapshot::new(vocab, arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for w in p.params_mut() {
        *w += rng.gen_range(-0.5..0.5);
    }
    p.freeze_reference();
    for w in p.params_mut() {
        *w += rng.gen_range(-0.1..0.1);
    }
    p
}

pub fn with_params(p: &PolicySnapshot, theta: &[f64]) -> PolicySnapshot {
    let mut q = p.clone();
    q.params_mut().copy_from_slice(theta);
    q
}
