//! Deterministic scripted backend.
//!
//! Responses are looked up by prompt: an exact rule wins over a prefix rule,
//! and at most one prefix rule may apply to any prompt. When a rule lists
//! several responses, the request seed picks one (`seed % len`), so
//! repeated sampling with distinct seeds walks through them while the output
//! still depends only on the request.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{word_tokens, Backend, BackendError, Completion, CompletionRequest, FinishReason};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MockError {
    #[error("script entry {index} must set exactly one of `exact` or `prefix`")]
    MatcherShape { index: usize },
    #[error("script entry {index} has no responses")]
    NoResponses { index: usize },
    #[error("duplicate exact rule for prompt {0:?}")]
    DuplicateExact(String),
    #[error("prefix rules {first:?} and {second:?} can match the same prompt")]
    AmbiguousPrefix { first: String, second: String },
    #[error("response {text:?}: {reason}")]
    BadResponse { text: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub text: String,
    /// Explicit tokenization; defaults to whitespace-led word tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    /// Per-token log-probabilities; default all zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    /// Per-position alternatives merged with the chosen token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<Vec<BTreeMap<String, f64>>>,
}

impl ScriptedResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn with_logprobs(text: impl Into<String>, logprobs: Vec<f64>) -> Self {
        Self {
            text: text.into(),
            logprobs: Some(logprobs),
            ..Self::default()
        }
    }

    fn into_completion(self) -> Result<Completion, MockError> {
        let bad = |text: &str, reason: String| MockError::BadResponse {
            text: text.to_string(),
            reason,
        };
        let tokens = match self.tokens {
            Some(t) => t,
            None => word_tokens(&self.text),
        };
        if tokens.concat() != self.text {
            return Err(bad(&self.text, "tokens do not concatenate to text".into()));
        }
        let logprobs = self.logprobs.unwrap_or_else(|| alloc::vec![0.0; tokens.len()]);
        if logprobs.len() != tokens.len() {
            return Err(bad(
                &self.text,
                alloc::format!("{} logprobs for {} tokens", logprobs.len(), tokens.len()),
            ));
        }
        let mut completion = Completion::from_tokens(tokens, logprobs, FinishReason::Stop);
        if let Some(extra) = self.top_logprobs {
            if extra.len() != completion.tokens.len() {
                return Err(bad(&self.text, "top_logprobs length differs from tokens".into()));
            }
            for (slot, alternatives) in completion.top_logprobs.iter_mut().zip(extra) {
                for (token, lp) in alternatives {
                    slot.entry(token).or_insert(lp);
                }
            }
        }
        completion
            .validate()
            .map_err(|e| bad(&completion.text, e.to_string()))?;
        Ok(completion)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
    pub responses: Vec<ScriptedResponse>,
}

impl ScriptEntry {
    pub fn exact(prompt: impl Into<String>, responses: Vec<ScriptedResponse>) -> Self {
        Self {
            exact: Some(prompt.into()),
            prefix: None,
            responses,
        }
    }

    pub fn prefix(prefix: impl Into<String>, responses: Vec<ScriptedResponse>) -> Self {
        Self {
            exact: None,
            prefix: Some(prefix.into()),
            responses,
        }
    }
}

/// What to do with a prompt no rule matches.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    Error,
    Fixed(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub fallback: Fallback,
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    exact: BTreeMap<String, Vec<Completion>>,
    prefixes: Vec<(String, Vec<Completion>)>,
    fallback: Option<Completion>,
}

impl MockBackend {
    pub fn from_script(script: MockScript) -> Result<Self, MockError> {
        let mut exact = BTreeMap::new();
        let mut prefixes: Vec<(String, Vec<Completion>)> = Vec::new();
        for (index, entry) in script.entries.into_iter().enumerate() {
            if entry.responses.is_empty() {
                return Err(MockError::NoResponses { index });
            }
            let completions = entry
                .responses
                .into_iter()
                .map(ScriptedResponse::into_completion)
                .collect::<Result<Vec<_>, _>>()?;
            match (entry.exact, entry.prefix) {
                (Some(prompt), None) => {
                    if exact.contains_key(&prompt) {
                        return Err(MockError::DuplicateExact(prompt));
                    }
                    exact.insert(prompt, completions);
                }
                (None, Some(prefix)) => {
                    if let Some((other, _)) = prefixes
                        .iter()
                        .find(|(p, _)| p.starts_with(prefix.as_str()) || prefix.starts_with(p.as_str()))
                    {
                        return Err(MockError::AmbiguousPrefix {
                            first: other.clone(),
                            second: prefix,
                        });
                    }
                    prefixes.push((prefix, completions));
                }
                _ => return Err(MockError::MatcherShape { index }),
            }
        }
        let fallback = match script.fallback {
            Fallback::Error => None,
            Fallback::Fixed(text) => Some(ScriptedResponse::text(text).into_completion()?),
        };
        Ok(Self {
            exact,
            prefixes,
            fallback,
        })
    }

    /// Single-response exact rules, one per `(prompt, text)` pair.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, MockError> {
        Self::from_script(MockScript {
            fallback: Fallback::Error,
            entries: pairs
                .into_iter()
                .map(|(p, t)| ScriptEntry::exact(p, alloc::vec![ScriptedResponse::text(t)]))
                .collect(),
        })
    }

    fn lookup(&self, prompt: &str) -> Option<&[Completion]> {
        if let Some(c) = self.exact.get(prompt) {
            return Some(c);
        }
        self.prefixes
            .iter()
            .find(|(p, _)| prompt.starts_with(p.as_str()))
            .map(|(_, c)| c.as_slice())
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let chosen = match self.lookup(&request.prompt) {
            Some(options) => {
                let seed = request.seed.unwrap_or(0);
                options[(seed % options.len() as u64) as usize].clone()
            }
            None => self.fallback.clone().ok_or_else(|| BackendError::NoScript {
                prompt: request.prompt.clone(),
            })?,
        };
        Ok(chosen.truncate(request.max_tokens, request.stop.as_deref()))
    }

    fn name(&self) -> String {
        "mock".to_string()
    }
}
