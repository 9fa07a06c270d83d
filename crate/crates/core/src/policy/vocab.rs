use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::retrieval::tokenize;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;
pub const DOC: u32 = 5;

const SPECIALS: [&str; 6] = ["<pad>", "<s>", "</s>", "<unk>", "[SEP]", "[DOC]"];

/// Word-level id ↔ token bijection. Ids 0..6 are the special markers above;
/// the tokenizer can never produce them because it strips punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Count tokens across `texts` and keep the most frequent ones, ties broken
    /// alphabetically, so that the total size is at most `cap`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, cap: usize) -> Self {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in texts {
            for t in tokenize(text) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = cap.saturating_sub(SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(room).map(|(t, _)| t))
            .collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// Join the word tokens of `ids` with single spaces, dropping special markers.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
