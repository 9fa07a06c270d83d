//! Black-box answer generators and the yes/no judge.
//!
//! Every backend is text-in/text-out. [`Gateway`] wraps a backend with exact
//! call accounting: successful calls receive consecutive ids starting at 1,
//! failures are counted separately.

mod http;
mod judge;
mod mock;
mod template;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use http::{EndpointConfig, HttpClient, RetryPolicy, API_KEY_ENV};
pub use judge::{judge, judge_prompt, parse_verdict, JudgeBackend, JudgeVerdict, Verdict};
pub use mock::{mock_answer, split_sentences, MockGenerator};
pub use template::{PromptTemplate, DEFAULT_QA_TEMPLATE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorRequest {
    pub question: String,
    pub context: String,
}

impl GeneratorRequest {
    pub fn new(question: impl Into<String>, context: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            context: context.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorResponse {
    pub answer: String,
    pub latency: Duration,
    pub call_id: u64,
}

/// A frozen answer model.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GeneratorRequest) -> Result<String>;
}

/// Counting wrapper around a [`Generator`] with an in-flight cap.
pub struct Gateway {
    backend: Box<dyn Generator>,
    successes: AtomicU64,
    failures: AtomicU64,
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

impl Gateway {
    pub fn new(backend: impl Generator + 'static) -> Self {
        Self::with_limit(backend, 4)
    }

    pub fn with_limit(backend: impl Generator + 'static, max_in_flight: usize) -> Self {
        Self {
            backend: Box::new(backend),
            successes: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            slot_free: Condvar::new(),
        }
    }

    pub fn mock() -> Self {
        Self::new(MockGenerator)
    }

    pub fn generate(&self, request: &GeneratorRequest) -> Result<GeneratorResponse> {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_in_flight {
                n = self.slot_free.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let start = Instant::now();
        let out = self.backend.generate(request);
        let latency = start.elapsed();
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            *n -= 1;
            self.slot_free.notify_one();
        }
        match out {
            Ok(answer) => Ok(GeneratorResponse {
                answer,
                latency,
                call_id: self.successes.fetch_add(1, Ordering::SeqCst) + 1,
            }),
            Err(e) => {
                self.failures.fetch_add(1, Ordering::SeqCst);
                Err(e)
            }
        }
    }

    /// Successful calls so far.
    pub fn calls(&self) -> u64 {
        self.successes.load(Ordering::SeqCst)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::SeqCst)
    }

    pub fn attempts(&self) -> u64 {
        self.calls() + self.failures()
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("calls", &self.calls())
            .field("failures", &self.failures())
            .finish()
    }
}
