use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::normalized_match;
use crate::retrieval::tokenize;

use super::HttpClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub verdict: Verdict,
    pub raw_reply: String,
}

impl JudgeVerdict {
    pub fn is_yes(&self) -> bool {
        self.verdict == Verdict::Yes
    }
}

pub enum JudgeBackend<'a> {
    /// Token-span containment between gold and predicted answers.
    Mock,
    Api(&'a HttpClient),
}

pub fn judge_prompt(question: &str, gold: &str, predicted: &str) -> String {
    format!(
        "Prompt: You are now an intelligent assessment assistant. Based on the question and the golden answer, judge whether the predicted answer correctly answers the question and give only a Yes or No.\n\
         Question: {question}\n\
         Golden Answer: {gold}\n\
         Predicted Answer: {predicted}"
    )
}

/// The first `yes` or `no` token of `reply`, case-insensitively.
pub fn parse_verdict(reply: &str) -> Result<Verdict> {
    for tok in tokenize(reply) {
        match tok.as_str() {
            "yes" => return Ok(Verdict::Yes),
            "no" => return Ok(Verdict::No),
            _ => {}
        }
    }
    Err(Error::JudgeReply(reply.to_string()))
}

pub fn judge(question: &str, gold: &str, predicted: &str, backend: &JudgeBackend<'_>) -> Result<JudgeVerdict> {
    match backend {
        JudgeBackend::Mock => {
            let ok = normalized_match(predicted, gold);
            let verdict = if ok { Verdict::Yes } else { Verdict::No };
            Ok(JudgeVerdict {
                verdict,
                raw_reply: if ok { "Yes".into() } else { "No".into() },
            })
        }
        JudgeBackend::Api(client) => {
            let reply = client.complete(&judge_prompt(question, gold, predicted))?;
            Ok(JudgeVerdict {
                verdict: parse_verdict(&reply)?,
                raw_reply: reply,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_backend() {
        let v = judge("Who?", "Ann Lee", "Ann Lee", &JudgeBackend::Mock).unwrap();
        assert!(v.is_yes());
        let v = judge("Who?", "Ann Lee", "it was ann lee of course", &JudgeBackend::Mock).unwrap();
        assert!(v.is_yes());
        let v = judge("Who?", "Ann Lee", "Bob", &JudgeBackend::Mock).unwrap();
        assert_eq!(v.verdict, Verdict::No);
        let v = judge("Who?", "Ann Lee", "", &JudgeBackend::Mock).unwrap();
        assert_eq!(v.verdict, Verdict::No);
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_verdict("Yes.").unwrap(), Verdict::Yes);
        assert_eq!(parse_verdict("NO").unwrap(), Verdict::No);
        assert_eq!(parse_verdict("Answer: no, because yes").unwrap(), Verdict::No);
        assert!(parse_verdict("Yesterday maybe").is_err());
        assert!(parse_verdict("").is_err());
    }

    #[test]
    fn prompt_carries_all_fields() {
        let p = judge_prompt("Q1", "G1", "P1");
        assert!(p.starts_with("Prompt: You are now an intelligent assessment assistant."));
        assert!(p.ends_with("Question: Q1\nGolden Answer: G1\nPredicted Answer: P1"));
    }
}
