use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::Corpus;

/// One question with its gold answer, optional extraction target and
/// optional provenance ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_ids: Option<Vec<String>>,
}

impl QAInstance {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
            gold_context: None,
            doc_ids: None,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.answer.trim().is_empty() {
            return Err("empty answer".into());
        }
        if matches!(&self.gold_context, Some(c) if c.trim().is_empty()) {
            return Err("empty gold_context".into());
        }
        Ok(())
    }
}

pub fn read_qa_jsonl(path: &Path) -> Result<Vec<QAInstance>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let qa: QAInstance = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        qa.check().map_err(parse_err)?;
        out.push(qa);
    }
    Ok(out)
}

pub fn write_qa_jsonl(path: &Path, instances: &[QAInstance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for qa in instances {
        serde_json::to_writer(&mut w, qa)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// A corpus together with QA instances whose `doc_ids` all resolve.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub corpus: Corpus,
    pub instances: Vec<QAInstance>,
}

impl Dataset {
    pub fn new(corpus: Corpus, instances: Vec<QAInstance>) -> Result<Self> {
        for qa in &instances {
            for id in qa.doc_ids.iter().flatten() {
                if !corpus.contains(id) {
                    return Err(Error::UnknownDocId(id.clone()));
                }
            }
        }
        Ok(Self { corpus, instances })
    }

    /// `(document count, instance count)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.corpus.len(), self.instances.len())
    }
}

/// Load a corpus JSONL and a QA JSONL and check referential integrity.
pub fn ingest(corpus_path: &Path, qa_path: &Path) -> Result<Dataset> {
    Dataset::new(Corpus::read_jsonl(corpus_path)?, read_qa_jsonl(qa_path)?)
}
