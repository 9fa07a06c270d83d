//! Flat key-value run configuration.
//!
//! One TOML table holds both the training hyperparameters ([`TrainingConfig`])
//! and the run settings ([`RunSettings`]: file paths and backends). Only the
//! former enters the config fingerprint, so moving files around does not
//! change it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::{Architecture, DecodeConfig};
use crate::ppo::{PpoConfig, RatioAnchor};
use crate::reward::Attribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Reward-stage policy learning rate.
    pub learning_rate: f64,
    /// Extraction-stage learning rate.
    pub extract_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub batch_size: usize,
    /// Permit batch sizes other than 1, 2 or 4.
    pub allow_any_batch_size: bool,
    pub num_beams: usize,
    pub temperature: f64,
    pub early_stopping: bool,
    pub top_k: usize,
    pub top_p: f64,
    pub retrieval_k: usize,
    pub clip_eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub kl_coef: f64,
    pub value_coef: f64,
    pub attribution: Attribution,
    pub ratio_anchor: RatioAnchor,
    pub max_grad_norm: f64,
    pub max_input_len: usize,
    pub max_output_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub vocab_cap: usize,
    pub extract_epochs: usize,
    pub reward_epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            extract_learning_rate: 5e-5,
            critic_learning_rate: 5e-5,
            batch_size: 1,
            allow_any_batch_size: false,
            num_beams: 3,
            temperature: 1.0,
            early_stopping: true,
            top_k: 0,
            top_p: 1.0,
            retrieval_k: 5,
            clip_eps: 0.2,
            gamma: 1.0,
            lambda: 0.95,
            kl_coef: 0.1,
            value_coef: 0.5,
            attribution: Attribution::Paper,
            ratio_anchor: RatioAnchor::Original,
            max_grad_norm: 0.0,
            max_input_len: 512,
            max_output_len: 64,
            embed_dim: 32,
            hidden_dim: 64,
            attn_dim: 64,
            vocab_cap: 8192,
            extract_epochs: 10,
            reward_epochs: 1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("extract_learning_rate", self.extract_learning_rate),
            ("critic_learning_rate", self.critic_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.batch_size == 0 || (!self.allow_any_batch_size && ![1, 2, 4].contains(&self.batch_size)) {
            return bad(format!(
                "batch_size must be 1, 2 or 4 (set allow_any_batch_size to override), got {}",
                self.batch_size
            ));
        }
        if self.retrieval_k == 0 {
            return bad("retrieval_k must be at least 1".into());
        }
        if self.num_beams == 0 {
            return bad("num_beams must be at least 1".into());
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if self.kl_coef < 0.0 || self.value_coef < 0.0 {
            return bad("kl_coef and value_coef must be non-negative".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.max_input_len == 0 || self.max_output_len < 2 {
            return bad("max_input_len must be positive and max_output_len at least 2".into());
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.attn_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn architecture(&self, vocab_size: usize) -> Architecture {
        Architecture {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            attn_dim: self.attn_dim,
            max_input_len: self.max_input_len,
            max_output_len: self.max_output_len,
        }
    }

    /// Beam decoding used at evaluation time.
    pub fn eval_decode(&self) -> DecodeConfig {
        DecodeConfig {
            temperature: self.temperature,
            ..DecodeConfig::beam(self.num_beams, self.early_stopping)
        }
    }

    /// Ancestral sampling used for reward-stage rollouts.
    pub fn rollout_decode(&self) -> DecodeConfig {
        DecodeConfig::sampling(self.temperature, self.top_k, self.top_p)
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip_eps: self.clip_eps,
            gamma: self.gamma,
            lambda: self.lambda,
            value_coef: self.value_coef,
            kl_coef: self.kl_coef,
            learning_rate: self.learning_rate,
            critic_learning_rate: self.critic_learning_rate,
            batch_size: self.batch_size,
            epochs: self.reward_epochs,
            attribution: self.attribution,
            ratio_anchor: self.ratio_anchor,
            decode: self.rollout_decode(),
            max_grad_norm: self.max_grad_norm,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// Paths and backend settings; not part of the fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub corpus: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub index: PathBuf,
    pub output_dir: PathBuf,
    pub generator: BackendKind,
    pub judge: BackendKind,
    pub endpoint_url: String,
    pub endpoint_model: String,
    pub endpoint_temperature: f64,
    pub endpoint_max_tokens: u32,
    pub endpoint_timeout_secs: f64,
    /// Optional QA prompt template file.
    pub prompt_template: Option<PathBuf>,
    pub max_in_flight: usize,
    /// Skip failed instances during evaluation instead of aborting.
    pub lenient: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            corpus: "data/corpus.jsonl".into(),
            train: "data/train.jsonl".into(),
            test: "data/test.jsonl".into(),
            index: "out/index.bm25".into(),
            output_dir: "out".into(),
            generator: BackendKind::Mock,
            judge: BackendKind::Mock,
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            endpoint_model: "gpt-3.5-turbo".into(),
            endpoint_temperature: 0.0,
            endpoint_max_tokens: 64,
            endpoint_timeout_secs: 60.0,
            prompt_template: None,
            max_in_flight: 4,
            lenient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub run: RunSettings,
}

fn keys_of<T: Serialize + Default>() -> BTreeSet<String> {
    match toml::Value::try_from(T::default()) {
        Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// Parse the right-hand side of `key=value`: a TOML literal if it is one,
/// otherwise a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parse config text and apply `key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            table.insert(k.trim().to_string(), parse_override_value(v.trim()));
        }
        let training_keys = keys_of::<TrainingConfig>();
        let run_keys = keys_of::<RunSettings>();
        let mut training = toml::Table::new();
        let mut run = toml::Table::new();
        for (k, v) in table {
            if training_keys.contains(&k) {
                training.insert(k, v);
            } else if run_keys.contains(&k) || k == "prompt_template" {
                run.insert(k, v);
            } else {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
        }
        let training: TrainingConfig = toml::Value::Table(training)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let run: RunSettings = toml::Value::Table(run)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        training.validate()?;
        Ok(Self { training, run })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Render back to flat TOML.
    pub fn to_toml(&self) -> Result<String> {
        let mut table = toml::Table::new();
        for part in [
            toml::Value::try_from(&self.training),
            toml::Value::try_from(&self.run),
        ] {
            if let toml::Value::Table(t) = part.map_err(|e| Error::Config(e.to_string()))? {
                table.extend(t);
            }
        }
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }
}
