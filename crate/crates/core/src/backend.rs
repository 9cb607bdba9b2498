//! Completion requests, completions, and the backend abstraction every
//! prompting step runs through.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_TOKENS: u32 = 120;
pub const DEFAULT_TEMPERATURE: f64 = 1.2;
pub const MAX_TOP_LOGPROBS: u8 = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend lacks a required capability: {0}")]
    Capability(String),
    #[error("no scripted response for prompt {prompt:?}")]
    NoScript { prompt: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache failure: {0}")]
    Cache(String),
}

impl BackendError {
    /// Only transport failures and rate limits are worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Alternatives requested per position, `0..=5`.
    pub top_logprobs: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            top_logprobs: 0,
            seed: None,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(alloc::format!(
                "temperature {} must be a non-negative number",
                self.temperature
            )));
        }
        if self.top_logprobs > MAX_TOP_LOGPROBS {
            return Err(BackendError::InvalidRequest(alloc::format!(
                "top_logprobs {} exceeds {MAX_TOP_LOGPROBS}",
                self.top_logprobs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens: Vec<String>,
    /// Natural-log probabilities of the chosen tokens.
    pub token_logprobs: Vec<f64>,
    /// Per position, the top alternatives (always including the chosen token).
    pub top_logprobs: Vec<BTreeMap<String, f64>>,
    pub finish_reason: FinishReason,
}

impl Completion {
    /// Builds a completion from tokens and their log-probabilities. Each
    /// position's alternatives start out as just the chosen token.
    pub fn from_tokens(tokens: Vec<String>, token_logprobs: Vec<f64>, finish_reason: FinishReason) -> Self {
        let top_logprobs = tokens
            .iter()
            .zip(&token_logprobs)
            .map(|(t, &lp)| {
                let mut m = BTreeMap::new();
                m.insert(t.clone(), lp);
                m
            })
            .collect();
        Self {
            text: tokens.concat(),
            tokens,
            token_logprobs,
            top_logprobs,
            finish_reason,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let n = self.tokens.len();
        if self.token_logprobs.len() != n || self.top_logprobs.len() != n {
            return Err(BackendError::Malformed(alloc::format!(
                "{} tokens, {} logprobs, {} top-logprob maps",
                n,
                self.token_logprobs.len(),
                self.top_logprobs.len()
            )));
        }
        if let Some(lp) = self.token_logprobs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
            return Err(BackendError::Malformed(alloc::format!(
                "log-probability {lp} is not <= 0"
            )));
        }
        for (token, alternatives) in self.tokens.iter().zip(&self.top_logprobs) {
            if !alternatives.contains_key(token) {
                return Err(BackendError::Malformed(alloc::format!(
                    "alternatives do not contain chosen token {token:?}"
                )));
            }
        }
        if self.tokens.concat() != self.text {
            return Err(BackendError::Malformed("tokens do not concatenate to text".into()));
        }
        Ok(())
    }

    /// Cuts the completion at the earliest stop sequence, then at
    /// `max_tokens`, the way a server would have stopped generating.
    pub fn truncate(mut self, max_tokens: u32, stop: Option<&[String]>) -> Self {
        let cut = stop
            .unwrap_or(&[])
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| self.text.find(s.as_str()))
            .min();
        if let Some(cut) = cut {
            let mut offset = 0;
            let mut keep = 0;
            for token in &mut self.tokens {
                if offset >= cut {
                    break;
                }
                let end = offset + token.len();
                if end > cut {
                    token.truncate(cut - offset);
                }
                offset = end;
                keep += 1;
            }
            self.tokens.truncate(keep);
            self.token_logprobs.truncate(keep);
            self.top_logprobs.truncate(keep);
            for (token, (alternatives, lp)) in self
                .tokens
                .iter()
                .zip(self.top_logprobs.iter_mut().zip(&self.token_logprobs))
            {
                alternatives.entry(token.clone()).or_insert(*lp);
            }
            self.text = self.tokens.concat();
            self.finish_reason = FinishReason::Stop;
        }
        let max = max_tokens as usize;
        if self.tokens.len() > max {
            self.tokens.truncate(max);
            self.token_logprobs.truncate(max);
            self.top_logprobs.truncate(max);
            self.text = self.tokens.concat();
            self.finish_reason = FinishReason::Length;
        }
        self
    }
}

/// Splits text into whitespace-led word tokens, the way BPE tokenizers
/// attach a leading space: `" English and"` → `[" English", " and"]`.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut seen_word = false;
    for ch in text.chars() {
        if ch.is_whitespace() && seen_word {
            tokens.push(core::mem::take(&mut current));
            seen_word = false;
        }
        if !ch.is_whitespace() {
            seen_word = true;
        }
        current.push(ch);
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A completion source. Implementations must be shareable across workers.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;

    /// Short identifier recorded in reports.
    fn name(&self) -> String {
        "backend".to_string()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn word_tokens_concatenate_back() {
        let text = "Jamaican people speak English and Creole.\n";
        let t = word_tokens(text);
        assert_eq!(t[..2], toks(&["Jamaican", " people"]));
        assert_eq!(t.concat(), text);
        assert_eq!(word_tokens(" True"), toks(&[" True"]));
        assert!(word_tokens("").is_empty());
    }

    #[test]
    fn request_defaults_and_validation() {
        let r = CompletionRequest::new("Q");
        assert_eq!(r.max_tokens, 120);
        assert_eq!(r.temperature, 1.2);
        assert!(r.validate().is_ok());
        let mut bad = r.clone();
        bad.max_tokens = 0;
        assert!(bad.validate().is_err());
        let mut bad = r.clone();
        bad.top_logprobs = 6;
        assert!(bad.validate().is_err());
        let mut bad = r;
        bad.temperature = -0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn truncate_at_stop_and_length() {
        let c = Completion::from_tokens(
            toks(&["A", " b", "\n\n", "C"]),
            vec![-0.1, -0.2, -0.3, -0.4],
            FinishReason::Length,
        );
        let stopped = c.clone().truncate(10, Some(&[String::from("\n\n")]));
        assert_eq!(stopped.text, "A b");
        assert_eq!(stopped.tokens.len(), 2);
        assert_eq!(stopped.finish_reason, FinishReason::Stop);
        assert!(stopped.validate().is_ok());

        let straddle = c.clone().truncate(10, Some(&[String::from("b\n")]));
        assert_eq!(straddle.text, "A ");
        assert_eq!(straddle.tokens, toks(&["A", " "]));
        assert!(straddle.validate().is_ok());

        let short = c.truncate(1, None);
        assert_eq!(short.text, "A");
        assert_eq!(short.finish_reason, FinishReason::Length);
    }

    #[test]
    fn validate_catches_mismatch() {
        let mut c = Completion::from_tokens(toks(&["x"]), vec![0.0], FinishReason::Stop);
        assert!(c.validate().is_ok());
        c.token_logprobs.push(0.0);
        assert!(c.validate().is_err());
        let positive = Completion::from_tokens(toks(&["x"]), vec![0.5], FinishReason::Stop);
        assert!(positive.validate().is_err());
    }

    #[test]
    fn retry_classes() {
        assert!(BackendError::Transport("x".into()).is_retryable());
        assert!(BackendError::RateLimited("x".into()).is_retryable());
        assert!(!BackendError::Malformed("x".into()).is_retryable());
        assert!(!BackendError::Http {
            status: 500,
            body: String::new()
        }
        .is_retryable());
    }
}
