use std::collections::HashSet;

use crate::error::Result;
use crate::retrieval::tokenize;

use super::{Generator, GeneratorRequest};

/// Deterministic extractive stand-in for an LLM.
///
/// It picks the context sentence sharing the most distinct tokens with the
/// question (earliest wins ties), strips question tokens from both ends of
/// that sentence and returns what remains. Distractor sentences that echo the
/// question therefore fool it, which is what gives an adapter something to
/// learn.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

impl Generator for MockGenerator {
    fn generate(&self, request: &GeneratorRequest) -> Result<String> {
        Ok(mock_answer(&request.question, &request.context))
    }
}

/// Split on `.`, `!` or `?` followed by whitespace. The terminator stays with
/// its sentence; empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(j, next)) = chars.peek() {
                if next.is_whitespace() {
                    push_trimmed(&mut out, &text[start..i + c.len_utf8()]);
                    start = j;
                }
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

pub fn mock_answer(question: &str, context: &str) -> String {
    let q: HashSet<String> = tokenize(question).into_iter().collect();
    let mut best: Option<(usize, Vec<String>)> = None;
    for sentence in split_sentences(context) {
        let toks = tokenize(sentence);
        if toks.is_empty() {
            continue;
        }
        let distinct: HashSet<&String> = toks.iter().collect();
        let overlap = distinct.iter().filter(|t| q.contains(t.as_str())).count();
        if best.as_ref().is_none_or(|(b, _)| overlap > *b) {
            best = Some((overlap, toks));
        }
    }
    let Some((_, toks)) = best else {
        return String::new();
    };
    let lo = toks.iter().position(|t| !q.contains(t));
    let hi = toks.iter().rposition(|t| !q.contains(t));
    match (lo, hi) {
        (Some(lo), Some(hi)) => toks[lo..=hi].join(" "),
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("A b. C d! E? f"), vec!["A b.", "C d!", "E?", "f"]);
        assert_eq!(split_sentences("3.14 is pi."), vec!["3.14 is pi."]);
        assert!(split_sentences("  ").is_empty());
    }

    #[test]
    fn single_candidate_sentence() {
        let a = mock_answer("What is the capital of Zorbia?", "The capital of Zorbia is Veltro.");
        assert_eq!(a, "veltro");
        let a = mock_answer("What is the capital of Zorbia?", "Veltro is the capital of Zorbia.");
        assert_eq!(a, "veltro");
    }

    #[test]
    fn empty_context_gives_empty_answer() {
        assert_eq!(mock_answer("What?", ""), "");
    }

    #[test]
    fn highest_overlap_wins() {
        let ctx = "The river runs south. The capital of Zorbia is Veltro.";
        assert_eq!(mock_answer("What is the capital of Zorbia?", ctx), "veltro");
    }

    #[test]
    fn echoing_distractor_fools_it() {
        let ctx = "Many people ask what the capital of Zorbia is. The capital of Zorbia is Veltro.";
        assert_eq!(mock_answer("What is the capital of Zorbia?", ctx), "many people ask");
    }

    #[test]
    fn overlap_matches_brute_force_count() {
        let q = "alpha beta gamma delta";
        let sentences = ["alpha x y.", "beta gamma delta z.", "alpha beta q."];
        let ctx = sentences.join(" ");
        let counts: Vec<usize> = sentences
            .iter()
            .map(|s| {
                let st = tokenize(s);
                tokenize(q).iter().filter(|t| st.contains(t)).count()
            })
            .collect();
        assert_eq!(counts, vec![1, 3, 2]);
        assert_eq!(mock_answer(q, &ctx), "z");
    }

    #[test]
    fn is_pure() {
        let ctx = "a b c. d e f. a d q.";
        assert_eq!(mock_answer("a d", ctx), mock_answer("a d", ctx));
    }
}
