//! Corpus handling and sparse retrieval.
//!
//! Documents are tokenized once on insertion, indexed into an inverted index
//! and ranked with Okapi BM25. Ranking is deterministic: score descending,
//! then document id ascending.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic first line of a persisted index.
pub const INDEX_MAGIC: &str = "PRCA-IDX-1";

/// Lowercase `text` and split it on every character that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    tokens: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self {
            id: id.into(),
            text,
            tokens,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text: String,
}

/// The retrieval pool. Ids are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut corpus = Self::new();
        for doc in docs {
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, doc: Document) -> Result<()> {
        if self.by_id.contains_key(&doc.id) {
            return Err(Error::DuplicateDocId(doc.id));
        }
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    /// Read a JSONL file of `{"id": .., "text": ..}` objects.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut corpus = Self::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            corpus.push(Document::new(rec.id, rec.text))?;
        }
        Ok(corpus)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for doc in &self.docs {
            let rec = DocumentRecord {
                id: doc.id.clone(),
                text: doc.text.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position of the document in insertion order.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

/// Ranked output of a retriever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|(id, _)| id.as_str())
    }
}

/// Anything that can rank corpus documents against a free-text query.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalResult>;
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Result<Self> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut lookup = HashMap::with_capacity(corpus.len());
        for (i, doc) in corpus.iter().enumerate() {
            let idx = i as u32;
            if lookup.insert(doc.id.clone(), idx).is_some() {
                return Err(Error::DuplicateDocId(doc.id.clone()));
            }
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in doc.tokens() {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push(Posting { doc: idx, tf: count });
            }
            doc_ids.push(doc.id.clone());
            doc_lengths.push(doc.tokens().len() as u32);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Ok(Self {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
            lookup,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).map(|&i| self.doc_lengths[i as usize])
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - b + b * doc_len as f64 / self.avg_doc_length
        } else {
            1.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of a single document. Repeated query terms count once per occurrence.
    pub fn bm25_score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64> {
        let idx = *self
            .lookup
            .get(doc_id)
            .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))?;
        let len = self.doc_lengths[idx as usize];
        let mut score = 0.0;
        for term in query_tokens {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            if let Ok(pos) = list.binary_search_by_key(&idx, |p| p.doc) {
                score += self.term_weight(self.idf(list.len()), list[pos].tf, len);
            }
        }
        Ok(score)
    }

    /// Top-`k` documents for `query`, term-at-a-time over the postings.
    pub fn retrieve_topk(&self, query: &str, k: usize) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut scores = vec![0.0f64; self.doc_count()];
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                scores[p.doc as usize] +=
                    self.term_weight(idf, p.tf, self.doc_lengths[p.doc as usize]);
            }
        }
        let mut order: Vec<u32> = (0..self.doc_count() as u32).collect();
        let cmp = |a: &u32, b: &u32| {
            scores[*b as usize]
                .partial_cmp(&scores[*a as usize])
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.doc_ids[*a as usize].cmp(&self.doc_ids[*b as usize]))
        };
        let take = k.min(order.len());
        if take < order.len() {
            order.select_nth_unstable_by(take - 1, cmp);
            order.truncate(take);
        }
        order.sort_by(cmp);
        Ok(RetrievalResult {
            ranked: order
                .into_iter()
                .map(|i| (self.doc_ids[i as usize].clone(), scores[i as usize]))
                .collect(),
            k,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{INDEX_MAGIC}")?;
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        if header.trim_end() != INDEX_MAGIC {
            return Err(Error::Format(format!(
                "{}: expected header {INDEX_MAGIC}",
                path.display()
            )));
        }
        let mut body = String::new();
        reader.read_to_string(&mut body)?;
        let mut index: Self = serde_json::from_str(&body)?;
        index.lookup = index
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(index)
    }
}

impl Retriever for InvertedIndex {
    fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalResult> {
        self.retrieve_topk(query, k)
    }
}
