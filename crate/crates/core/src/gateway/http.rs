use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

use super::{Generator, GeneratorRequest, PromptTemplate};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "PRCA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Blocking chat-completion client.
///
/// Sends `{"model", "temperature", "max_tokens", "messages": [{"role": "user",
/// "content": prompt}]}` and reads `choices[0].message.content`. 429, 5xx and
/// transport errors are retried with exponential backoff; any other non-2xx
/// status fails at once.
#[derive(Debug, Clone)]
pub struct HttpClient {
    endpoint: EndpointConfig,
    api_key: String,
    retry: RetryPolicy,
    template: PromptTemplate,
    client: reqwest::blocking::Client,
}

impl HttpClient {
    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(endpoint: EndpointConfig) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Config(format!("environment variable {API_KEY_ENV} is not set")))?;
        Self::new(endpoint, key)
    }

    pub fn new(endpoint: EndpointConfig, api_key: impl Into<String>) -> Result<Self> {
        if endpoint.url.is_empty() {
            return Err(Error::Config("endpoint url is empty".into()));
        }
        if !(endpoint.timeout_secs > 0.0) {
            return Err(Error::Config("endpoint timeout must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .build()
            .map_err(|e| Error::Generator(e.to_string()))?;
        Ok(Self {
            endpoint,
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            template: PromptTemplate::default(),
            client,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.endpoint.model,
            "temperature": self.endpoint.temperature,
            "max_tokens": self.endpoint.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        })
    }

    /// Send one raw prompt and return the assistant text.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let body = self.request_body(prompt);
        let mut attempt = 0;
        loop {
            let outcome = self
                .client
                .post(&self.endpoint.url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            let retryable = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let v: Value = resp.json().map_err(|e| Error::Generator(e.to_string()))?;
                        return extract_content(&v);
                    }
                    let text = resp.text().unwrap_or_default();
                    let err = Error::HttpStatus {
                        status: status.as_u16(),
                        body: text,
                    };
                    if status.as_u16() == 429 || status.is_server_error() {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(e) => Error::Generator(e.to_string()),
            };
            if attempt >= self.retry.max_retries {
                return Err(retryable);
            }
            thread::sleep(self.retry.base_delay * 2u32.pow(attempt));
            attempt += 1;
        }
    }
}

impl Generator for HttpClient {
    fn generate(&self, request: &GeneratorRequest) -> Result<String> {
        self.complete(&self.template.render(request))
    }
}

fn extract_content(v: &Value) -> Result<String> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Generator("response has no choices[0].message.content".into()))
}
