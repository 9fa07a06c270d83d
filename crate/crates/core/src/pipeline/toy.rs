//! Seeded synthetic QA benchmark with distractor documents.
//!
//! Invented entities each have one fact document per relation ("The capital
//! of Vorlen is Tamusk."). Every question asks for one (entity, relation)
//! pair and brings `distractors` extra documents about the same entity:
//!
//! * echo documents: long sentences that repeat the question verbatim
//!   ("... many visitors ask what the capital of Vorlen is ..."). They share
//!   more words with the question than the fact does, so an overlap-based
//!   reader picks them, yet their length keeps them below the fact in BM25.
//! * near misses: the right entity and relation with a stale answer
//!   ("The former capital of Vorlen was Ketob.").
//! * negations: "The capital of Vorlen is not Ketob."
//! * filler sentences naming the entity.
//!
//! Multi-hop mode asks about the birthplace of an invented person, so two
//! facts are needed: "Dalor was born in Vorlen." and the relation fact.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{Corpus, Document};

use super::dataset::{write_qa_jsonl, QAInstance};

const RELATIONS: [&str; 6] = ["capital", "currency", "founder", "river", "mascot", "language"];

const LEADS: [&str; 8] = [
    "According to several travel guides",
    "During the long winter festivals",
    "Whenever new maps get printed",
    "In crowded harbour markets",
    "Among curious students abroad",
    "On quiet mountain roads",
    "At busy railway stations",
    "Across many online forums",
];

const TAILS: [&str; 8] = [
    "although few local guides agree on any single reply",
    "and older almanacs give several conflicting replies",
    "yet most textbooks quietly skip that topic entirely",
    "while tour operators usually change their story",
    "because rumours spread faster than careful records",
    "so arguments often continue late into evenings",
    "though archived letters tell another story",
    "since nobody trusts those faded printed brochures",
];

const FILLER_NOUNS: [&str; 16] = [
    "markets", "bridges", "festivals", "gardens", "harbours", "museums", "orchards", "temples",
    "vineyards", "libraries", "lighthouses", "bakeries", "castles", "meadows", "canals", "theatres",
];

const FILLER_TEMPLATES: [&str; 4] = [
    "Travel guides about {ent} mention {n1} and {n2}.",
    "{ent} became famous for its {n1} and old {n2}.",
    "Visitors to {ent} often praise local {n1}.",
    "Photographers in {ent} love {n1} near {n2}.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub train: usize,
    pub test: usize,
    /// Extra documents per question.
    pub distractors: usize,
    pub multi_hop: bool,
    /// Answer tokens available per relation.
    pub answer_pool: usize,
    /// Probability of 0, 1 and 2 echo documents per question.
    pub echo_weights: [f64; 3],
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            train: 500,
            test: 200,
            distractors: 8,
            multi_hop: false,
            answer_pool: 24,
            echo_weights: [0.45, 0.35, 0.20],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBenchmark {
    pub corpus: Corpus,
    pub train: Vec<QAInstance>,
    pub test: Vec<QAInstance>,
}

impl ToyBenchmark {
    /// Write `corpus.jsonl`, `train.jsonl` and `test.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.corpus.write_jsonl(&dir.join("corpus.jsonl"))?;
        write_qa_jsonl(&dir.join("train.jsonl"), &self.train)?;
        write_qa_jsonl(&dir.join("test.jsonl"), &self.test)?;
        Ok(())
    }
}

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    fn new(seed: u64) -> Self {
        let mut used = HashSet::new();
        for phrase in LEADS.iter().chain(&TAILS).chain(&FILLER_TEMPLATES).chain(&RELATIONS) {
            for w in crate::retrieval::tokenize(phrase) {
                used.insert(w);
            }
        }
        for w in FILLER_NOUNS {
            used.insert(w.to_string());
        }
        for w in [
            "what", "is", "the", "of", "was", "former", "not", "many", "visitors", "ask", "most", "historians",
            "agree", "that", "by", "all", "accounts", "today",
            "born", "in", "birthplace", "once", "lived",
        ] {
            used.insert(w.to_string());
        }
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used,
        }
    }

    /// A fresh capitalized pseudo-word.
    fn fresh(&mut self) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(C[self.rng.gen_range(0..C.len())] as char);
                w.push(V[self.rng.gen_range(0..V.len())] as char);
            }
            if self.rng.gen_bool(0.5) {
                w.push(C[self.rng.gen_range(0..C.len())] as char);
            }
            if self.used.insert(w.clone()) {
                let mut cs = w.chars();
                let first = cs.next().map(|c| c.to_ascii_uppercase()).unwrap_or('X');
                return std::iter::once(first).chain(cs).collect();
            }
        }
    }
}

fn fact_sentence(rng: &mut ChaCha8Rng, rel: &str, ent: &str, ans: &str) -> String {
    match rng.gen_range(0..4) {
        0 => format!("The {rel} of {ent} is {ans}."),
        1 => format!("{ans} is the {rel} of {ent}."),
        2 => format!("Most historians agree that the {rel} of {ent} is {ans}."),
        _ => format!("{ans} is, by all accounts, the {rel} of {ent} today."),
    }
}

fn echo_sentence(rng: &mut ChaCha8Rng, asked: &str) -> String {
    let lead = LEADS.choose(rng).copied().unwrap_or(LEADS[0]);
    format!("{lead}, many visitors ask what {asked} is.")
}

fn filler_sentence(rng: &mut ChaCha8Rng, ent: &str) -> String {
    let t = FILLER_TEMPLATES.choose(rng).copied().unwrap_or(FILLER_TEMPLATES[0]);
    let picks: Vec<&str> = FILLER_NOUNS.choose_multiple(rng, 2).copied().collect();
    t.replace("{ent}", ent).replace("{n1}", picks[0]).replace("{n2}", picks[1])
}

fn draw_echo_count(rng: &mut ChaCha8Rng, w: &[f64; 3]) -> usize {
    let total: f64 = w.iter().sum();
    let u = rng.gen::<f64>() * total;
    if u < w[0] {
        0
    } else if u < w[0] + w[1] {
        1
    } else {
        2
    }
}

pub fn build_toy(cfg: &ToyConfig) -> Result<ToyBenchmark> {
    let total = cfg.train + cfg.test;
    if total == 0 {
        return Err(Error::InvalidArgument("toy benchmark needs at least one question".into()));
    }
    if cfg.answer_pool < 3 {
        return Err(Error::InvalidArgument("answer_pool must be at least 3".into()));
    }
    let mut words = Words::new(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9));

    let pools: Vec<Vec<String>> = RELATIONS
        .iter()
        .map(|_| (0..cfg.answer_pool).map(|_| words.fresh()).collect())
        .collect();
    // Enough entities that a fifth of all (entity, relation) pairs stay unasked.
    let n_entities = (total * 5).div_ceil(RELATIONS.len() * 4).max(1);
    let entities: Vec<String> = (0..n_entities).map(|_| words.fresh()).collect();
    let answers: Vec<Vec<usize>> = (0..n_entities)
        .map(|_| (0..RELATIONS.len()).map(|r| rng.gen_range(0..pools[r].len())).collect())
        .collect();

    let mut corpus = Corpus::new();
    let mut fact_text = vec![vec![String::new(); RELATIONS.len()]; n_entities];
    for (e, ent) in entities.iter().enumerate() {
        for (r, rel) in RELATIONS.iter().enumerate() {
            let text = fact_sentence(&mut rng, rel, ent, &pools[r][answers[e][r]]);
            corpus.push(Document::new(format!("fact-{e}-{r}"), text.clone()))?;
            fact_text[e][r] = text;
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..n_entities)
        .flat_map(|e| (0..RELATIONS.len()).map(move |r| (e, r)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(total);

    let mut instances = Vec::with_capacity(total);
    for (qi, &(e, r)) in pairs.iter().enumerate() {
        let ent = &entities[e];
        let rel = RELATIONS[r];
        let answer = pools[r][answers[e][r]].clone();
        let wrong = |rng: &mut ChaCha8Rng| loop {
            let w = &pools[r][rng.gen_range(0..pools[r].len())];
            if *w != answer {
                return w.clone();
            }
        };
        let mut doc_ids = vec![format!("fact-{e}-{r}")];
        let (question, gold_context, subject) = if cfg.multi_hop {
            let person = words.fresh();
            let bio = format!("{person} was born in {ent}.");
            let bio_id = format!("bio-{qi}");
            corpus.push(Document::new(bio_id.clone(), bio.clone()))?;
            doc_ids.insert(0, bio_id);
            (
                format!("What is the {rel} of the birthplace of {person}?"),
                format!("{bio} {}", fact_text[e][r]),
                (format!("the {rel} of the birthplace of {person}"), person),
            )
        } else {
            (
                format!("What is the {rel} of {ent}?"),
                fact_text[e][r].clone(),
                (format!("the {rel} of {ent}"), ent.clone()),
            )
        };
        let (asked, named) = subject;

        let echoes = draw_echo_count(&mut rng, &cfg.echo_weights).min(cfg.distractors);
        let mut texts = Vec::with_capacity(cfg.distractors);
        for _ in 0..echoes {
            texts.push(echo_sentence(&mut rng, &asked));
        }
        let near = if cfg.distractors > texts.len() { rng.gen_range(1..=2usize) } else { 0 };
        for _ in 0..near.min(cfg.distractors - texts.len()) {
            let w = wrong(&mut rng);
            texts.push(if cfg.multi_hop {
                format!("{named} once lived in {}.", entities[rng.gen_range(0..n_entities)])
            } else if rng.gen_bool(0.5) {
                format!("The former {rel} of {ent} was {w}.")
            } else {
                format!("{w} was once the {rel} of {ent}.")
            });
        }
        if texts.len() < cfg.distractors && rng.gen_bool(0.5) {
            let w = wrong(&mut rng);
            texts.push(format!("The {rel} of {named} is not {w}."));
        }
        while texts.len() < cfg.distractors {
            texts.push(filler_sentence(&mut rng, &named));
        }
        texts.shuffle(&mut rng);
        for (j, text) in texts.into_iter().enumerate() {
            let id = format!("q{qi}-d{j}");
            corpus.push(Document::new(id.clone(), text))?;
            doc_ids.push(id);
        }
        instances.push(QAInstance {
            question,
            answer,
            gold_context: Some(gold_context),
            doc_ids: Some(doc_ids),
        });
    }
    let test = instances.split_off(cfg.train);
    Ok(ToyBenchmark {
        corpus,
        train: instances,
        test,
    })
}
