//! Client for OpenAI-compatible `/v1/completions` endpoints.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use calibra_core::backend::{Backend, BackendError, Completion, CompletionRequest, FinishReason};
use serde::Deserialize;
use serde_json::json;

pub const API_KEY_ENV: &str = "CALIBRA_API_KEY";
pub const MAX_ATTEMPTS: u32 = 3;

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    backoff: Duration,
    min_interval: Option<Duration>,
    last_request: Mutex<Option<Instant>>,
}

impl HttpBackend {
    /// Reads the bearer token from `CALIBRA_API_KEY` when set.
    pub fn new(base_url: &str, model: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: format!("{}/v1/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            backoff: Duration::from_millis(500),
            min_interval: None,
            last_request: Mutex::new(None),
        })
    }

    /// Base delay before the first retry; doubled on each further retry.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_second: f64) -> Self {
        if requests_per_second > 0.0 {
            self.min_interval = Some(Duration::from_secs_f64(1.0 / requests_per_second));
        }
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn wire_body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if request.top_logprobs > 0 {
            body["logprobs"] = json!(request.top_logprobs);
        }
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        body
    }

    fn throttle(&self) {
        let Some(interval) = self.min_interval else { return };
        let mut last = self.last_request.lock().expect("rate limit lock");
        if let Some(prev) = *last {
            let ready = prev + interval;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        *last = Some(Instant::now());
    }

    fn attempt(&self, body: &serde_json::Value, want_logprobs: bool) -> Result<Completion, BackendError> {
        self.throttle();
        let mut call = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.as_u16() == 429 {
            return Err(BackendError::RateLimited(text));
        }
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        parse_response(&text, want_logprobs)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let body = self.wire_body(request);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(&body, request.top_logprobs > 0) {
                Err(e) if e.is_retryable() && attempt < MAX_ATTEMPTS => {
                    let delay = self.backoff * 2u32.pow(attempt - 1);
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                other => return other,
            }
        }
    }

    fn name(&self) -> String {
        self.model.clone()
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Option<Vec<Option<BTreeMap<String, f64>>>>,
}

/// Converts a completions response body into a [`Completion`].
pub fn parse_response(body: &str, want_logprobs: bool) -> Result<Completion, BackendError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Malformed("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    };
    let Some(logprobs) = choice.logprobs else {
        if want_logprobs {
            return Err(BackendError::Capability(
                "endpoint returned no logprobs; token probabilities are unavailable".into(),
            ));
        }
        let mut completion = Completion::from_tokens(vec![choice.text.clone()], vec![0.0], finish_reason);
        if choice.text.is_empty() {
            completion = Completion::from_tokens(Vec::new(), Vec::new(), completion.finish_reason);
        }
        return Ok(completion);
    };
    let token_logprobs = logprobs
        .token_logprobs
        .into_iter()
        .map(|lp| lp.ok_or_else(|| BackendError::Malformed("null token logprob".into())))
        .collect::<Result<Vec<f64>, _>>()?;
    if logprobs.tokens.len() != token_logprobs.len() {
        return Err(BackendError::Malformed(
            "tokens and token_logprobs differ in length".into(),
        ));
    }
    let mut completion = Completion::from_tokens(logprobs.tokens, token_logprobs, finish_reason);
    if let Some(top) = logprobs.top_logprobs {
        if top.len() != completion.tokens.len() {
            return Err(BackendError::Malformed(
                "top_logprobs length differs from tokens".into(),
            ));
        }
        for (slot, alternatives) in completion.top_logprobs.iter_mut().zip(top) {
            for (token, lp) in alternatives.unwrap_or_default() {
                slot.entry(token).or_insert(lp);
            }
        }
    } else if want_logprobs {
        return Err(BackendError::Capability("endpoint returned no top_logprobs".into()));
    }
    if completion.text != choice.text {
        log::debug!("token concatenation differs from choice text; using tokens");
    }
    completion.validate()?;
    Ok(completion)
}
