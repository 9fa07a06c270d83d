//! Retrieval question answering with a trainable contextual adapter.
//!
//! A frozen retriever ([`retrieval`]) ranks documents; a small policy
//! ([`policy`]) distills the question and Top-K documents into a short context;
//! a frozen black-box generator ([`gateway`]) answers from that context. The
//! policy is trained by supervised extraction and then by clipped policy
//! optimization ([`ppo`]) on a terminal reward redistributed over the
//! generated tokens ([`reward`]). [`pipeline`] wires the stages together.

pub mod error;
pub mod gateway;
mod linalg;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod ppo;
pub mod retrieval;
pub mod reward;

pub use error::{Error, Result};
