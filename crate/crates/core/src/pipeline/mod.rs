//! Dataset handling, the two training stages, evaluation and Top-K sweeps.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod stages;
pub mod toy;

pub use config::{BackendKind, RunConfig, RunSettings, TrainingConfig};
pub use dataset::{ingest, read_qa_jsonl, write_qa_jsonl, Dataset, QAInstance};
pub use eval::{evaluate, sweep_topk, write_sweep_csv, EvalRecord, EvalReport, EvalSetup, SweepRow, SWEEP_CSV_HEADER};
pub use stages::{
    build_vocabulary, extraction_target, rollout_examples, run_contextual_stage, run_reward_stage, ExtractOutcome,
    KnowledgeBase, RewardOutcome, Retrieved,
};
pub use toy::{build_toy, ToyBenchmark, ToyConfig};
