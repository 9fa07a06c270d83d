//! Token-level text metrics used for rewards and evaluation.

use serde::{Deserialize, Serialize};

use crate::retrieval::tokenize;

/// A score in `[0, 1]` together with the lengths it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub x_len: usize,
    pub y_len: usize,
}

/// Length of the longest common subsequence, O(|x|·|y|) time and O(|y|) space.
pub fn lcs_length<T: PartialEq>(x: &[T], y: &[T]) -> usize {
    if x.is_empty() || y.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; y.len() + 1];
    for xi in x {
        let mut diag = 0;
        for (j, yj) in y.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if xi == yj {
                diag + 1
            } else {
                above.max(row[j])
            };
            diag = above;
        }
    }
    row[y.len()]
}

/// LCS divided by the longer of the two lengths.
///
/// This is not the usual ROUGE-L F-measure. Two empty sequences score 1.
pub fn rouge_l<T: PartialEq>(x: &[T], y: &[T]) -> MetricValue {
    let denom = x.len().max(y.len());
    let value = if denom == 0 {
        1.0
    } else {
        lcs_length(x, y) as f64 / denom as f64
    };
    MetricValue {
        value,
        x_len: x.len(),
        y_len: y.len(),
    }
}

/// ROUGE-L over the shared tokenizer.
pub fn rouge_l_text(x: &str, y: &str) -> MetricValue {
    rouge_l(&tokenize(x), &tokenize(y))
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// True when either tokenized answer appears as a contiguous run inside the other.
/// An empty gold answer never matches.
pub fn normalized_match(predicted: &str, gold: &str) -> bool {
    let p = tokenize(predicted);
    let g = tokenize(gold);
    if g.is_empty() || p.is_empty() {
        return false;
    }
    contains_run(&p, &g) || contains_run(&g, &p)
}
