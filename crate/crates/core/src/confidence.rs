//! Confidence scores for a generated answer.
//!
//! * token probability: `exp(mean(token_logprobs))`, the reciprocal perplexity
//!   of the answer;
//! * P(True): ask whether the answer is true and read the probability of `A`
//!   from the first generated position;
//! * verbalized: ask for a number after `Confidence (0-1):` and parse it.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, Completion, CompletionRequest};

pub const POSSIBLE_ANSWER_PREFIX: &str = "Possible answer: ";
pub const P_TRUE_QUESTION: &str = "Is the possible answer: (A) True (B) False";
pub const VERBALIZED_SUFFIX: &str = "Confidence (0-1):";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    TokenProb,
    PTrue,
    Verbalized,
}

impl ExtractionMethod {
    pub const ALL: [ExtractionMethod; 3] = [Self::TokenProb, Self::PTrue, Self::Verbalized];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TokenProb => "token_prob",
            Self::PTrue => "p_true",
            Self::Verbalized => "verbalized",
        }
    }
}

impl fmt::Display for ExtractionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtractionMethod {
    type Err = ConfidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ConfidenceError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfidenceError {
    #[error("unknown extraction method {0:?}")]
    UnknownMethod(String),
    #[error("completion has no tokens")]
    EmptyTokens,
    #[error("token {index} has log-probability {value} > 0")]
    PositiveLogprob { index: usize, value: f64 },
    #[error("neither A nor B among the top alternatives {observed:?}")]
    ExtractionFailed { observed: Vec<String> },
    #[error("no confidence number in {text:?}")]
    Unparseable { text: String },
    #[error("{method} needs {needed}")]
    Capability { method: ExtractionMethod, needed: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceResult {
    pub method: ExtractionMethod,
    pub value: f64,
    pub clamped: bool,
    pub raw_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<BTreeMap<String, f64>>,
}

impl ConfidenceResult {
    fn unclamped(method: ExtractionMethod, value: f64) -> Self {
        Self {
            method,
            value,
            clamped: false,
            raw_value: value,
            aux: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PTrueMode {
    /// Probability of `A` as generated.
    #[default]
    Raw,
    /// `p(A) / (p(A) + p(B))`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PTrueContext {
    /// Everything generated up to and including the final answer.
    #[default]
    FullTranscript,
    /// Only the question.
    QuestionOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub clamp: bool,
    pub p_true_mode: PTrueMode,
    pub p_true_context: PTrueContext,
    /// Alternatives requested for the P(True) position.
    pub p_true_top_logprobs: u8,
    /// Read verbalized values in `(1, 100]` as percentages.
    pub verbalized_percent: bool,
    pub verbalized_max_tokens: u32,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            clamp: true,
            p_true_mode: PTrueMode::Raw,
            p_true_context: PTrueContext::FullTranscript,
            p_true_top_logprobs: 5,
            verbalized_percent: false,
            verbalized_max_tokens: 8,
        }
    }
}

pub fn token_prob_confidence(completion: &Completion) -> Result<ConfidenceResult, ConfidenceError> {
    let logprobs = &completion.token_logprobs;
    if logprobs.is_empty() {
        return Err(ConfidenceError::EmptyTokens);
    }
    if let Some((index, &value)) = logprobs.iter().enumerate().find(|(_, lp)| lp.is_nan() || **lp > 0.0) {
        return Err(ConfidenceError::PositiveLogprob { index, value });
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok(ConfidenceResult::unclamped(
        ExtractionMethod::TokenProb,
        libm::exp(mean),
    ))
}

/// `exp(−mean log p)` of a completion's tokens.
pub fn perplexity(completion: &Completion) -> Option<f64> {
    let logprobs = &completion.token_logprobs;
    if logprobs.is_empty() {
        return None;
    }
    let nll = -logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Some(libm::exp(nll))
}

pub fn p_true_prompt(context: &str, possible_answer: &str) -> String {
    alloc::format!(
        "{context}\n{POSSIBLE_ANSWER_PREFIX}{}\n{P_TRUE_QUESTION}\n",
        possible_answer.trim()
    )
}

fn is_choice(token: &str, letter: &str) -> bool {
    token.trim().eq_ignore_ascii_case(letter)
}

/// Reads P(True) from the first position of a one-token completion.
pub fn p_true_from_completion(completion: &Completion, mode: PTrueMode) -> Result<ConfidenceResult, ConfidenceError> {
    let first = completion.top_logprobs.first().ok_or(ConfidenceError::Capability {
        method: ExtractionMethod::PTrue,
        needed: "per-position top log-probabilities".into(),
    })?;
    let best = |letter: &str| {
        first
            .iter()
            .filter(|(t, _)| is_choice(t, letter))
            .map(|(_, &lp)| libm::exp(lp))
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
    };
    let (p_a, p_b) = match (best("A"), best("B")) {
        (None, None) => {
            return Err(ConfidenceError::ExtractionFailed {
                observed: first.keys().cloned().collect(),
            })
        }
        (a, b) => (a.unwrap_or(0.0), b.unwrap_or(0.0)),
    };
    let normalized = p_a / (p_a + p_b);
    let value = match mode {
        PTrueMode::Raw => p_a,
        PTrueMode::Normalized => normalized,
    };
    let mut aux = BTreeMap::new();
    aux.insert("p_a".to_string(), p_a);
    aux.insert("p_b".to_string(), p_b);
    aux.insert("normalized".to_string(), normalized);
    Ok(ConfidenceResult {
        aux: Some(aux),
        ..ConfidenceResult::unclamped(ExtractionMethod::PTrue, value)
    })
}

pub fn p_true_request(
    context: &str,
    possible_answer: &str,
    temperature: f64,
    config: &ExtractionConfig,
) -> CompletionRequest {
    CompletionRequest {
        prompt: p_true_prompt(context, possible_answer),
        max_tokens: 1,
        temperature,
        top_logprobs: config.p_true_top_logprobs,
        seed: None,
        stop: None,
    }
}

pub fn p_true_confidence<B: Backend + ?Sized>(
    backend: &B,
    context: &str,
    possible_answer: &str,
    temperature: f64,
    config: &ExtractionConfig,
) -> Result<(ConfidenceResult, CompletionRequest, Completion), ConfidenceError> {
    if config.p_true_top_logprobs < 2 {
        return Err(ConfidenceError::Capability {
            method: ExtractionMethod::PTrue,
            needed: "at least 2 top log-probabilities".into(),
        });
    }
    let request = p_true_request(context, possible_answer, temperature, config);
    let completion = backend.complete(&request)?;
    let result = p_true_from_completion(&completion, config.p_true_mode)?;
    Ok((result, request, completion))
}

pub fn verbalized_prompt(context: &str) -> String {
    alloc::format!("{context}\n{VERBALIZED_SUFFIX}")
}

pub fn verbalized_confidence<B: Backend + ?Sized>(
    backend: &B,
    context: &str,
    temperature: f64,
    config: &ExtractionConfig,
) -> Result<(ConfidenceResult, CompletionRequest, Completion), ConfidenceError> {
    let request = CompletionRequest {
        prompt: verbalized_prompt(context),
        max_tokens: config.verbalized_max_tokens,
        temperature,
        top_logprobs: 0,
        seed: None,
        stop: None,
    };
    let completion = backend.complete(&request)?;
    let result = parse_verbalized(&completion.text, config)?;
    Ok((result, request, completion))
}

/// First unsigned decimal numeral in `text` (`7`, `0.85`, `.5`).
fn first_numeral(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let start = (0..bytes.len()).find(|&i| {
        bytes[i].is_ascii_digit() || (bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
    })?;
    let mut end = start;
    let mut seen_dot = false;
    while end < bytes.len() {
        match bytes[end] {
            b'0'..=b'9' => end += 1,
            b'.' if !seen_dot && bytes.get(end + 1).is_some_and(u8::is_ascii_digit) => {
                seen_dot = true;
                end += 1;
            }
            _ => break,
        }
    }
    text[start..end].parse().ok()
}

pub fn parse_verbalized(text: &str, config: &ExtractionConfig) -> Result<ConfidenceResult, ConfidenceError> {
    let mut raw = first_numeral(text).ok_or_else(|| ConfidenceError::Unparseable { text: text.to_string() })?;
    if config.verbalized_percent && raw > 1.0 && raw <= 100.0 {
        raw /= 100.0;
    }
    let value = if config.clamp { raw.clamp(0.0, 1.0) } else { raw };
    Ok(ConfidenceResult {
        method: ExtractionMethod::Verbalized,
        value,
        clamped: value != raw,
        raw_value: raw,
        aux: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::FinishReason;
    use crate::mock::{MockBackend, MockScript, ScriptEntry, ScriptedResponse};
    use alloc::vec;
    use proptest::prelude::*;

    fn completion(logprobs: &[f64]) -> Completion {
        let tokens = (0..logprobs.len()).map(|i| alloc::format!("t{i}")).collect();
        Completion::from_tokens(tokens, logprobs.to_vec(), FinishReason::Stop)
    }

    fn first_position(alternatives: &[(&str, f64)]) -> Completion {
        let chosen = alternatives[0].0.to_string();
        let mut c = Completion::from_tokens(vec![chosen], vec![alternatives[0].1], FinishReason::Length);
        for (t, lp) in alternatives {
            c.top_logprobs[0].insert(t.to_string(), *lp);
        }
        c
    }

    #[test]
    fn token_prob_examples() {
        assert_eq!(token_prob_confidence(&completion(&[0.0, 0.0])).unwrap().value, 1.0);
        let v = token_prob_confidence(&completion(&[-0.5, -1.5])).unwrap().value;
        assert!((v - 0.367879).abs() < 1e-6);
        assert!((v - libm::exp(-1.0)).abs() < 1e-15);
        assert_eq!(
            token_prob_confidence(&completion(&[])),
            Err(ConfidenceError::EmptyTokens)
        );
        assert!(matches!(
            token_prob_confidence(&completion(&[-0.1, 0.2])),
            Err(ConfidenceError::PositiveLogprob { index: 1, .. })
        ));
    }

    #[test]
    fn p_true_raw_and_normalized() {
        let c = first_position(&[("A", libm::log(0.7)), ("B", libm::log(0.2))]);
        let r = p_true_from_completion(&c, PTrueMode::Raw).unwrap();
        assert!((r.value - 0.7).abs() < 1e-12);

        let c = first_position(&[(" A", libm::log(0.2)), ("B", libm::log(0.6))]);
        let raw = p_true_from_completion(&c, PTrueMode::Raw).unwrap();
        assert!((raw.value - 0.2).abs() < 1e-12);
        let norm = p_true_from_completion(&c, PTrueMode::Normalized).unwrap();
        assert!((norm.value - 0.25).abs() < 1e-12);
        assert!(norm.value >= raw.value);

        let lower = first_position(&[("a", libm::log(0.4))]);
        assert!((p_true_from_completion(&lower, PTrueMode::Raw).unwrap().value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn p_true_without_choices_fails() {
        let c = first_position(&[("C", -0.1)]);
        assert_eq!(
            p_true_from_completion(&c, PTrueMode::Raw),
            Err(ConfidenceError::ExtractionFailed {
                observed: vec!["C".into()]
            })
        );
        let only_b = first_position(&[("B", -0.1)]);
        assert_eq!(p_true_from_completion(&only_b, PTrueMode::Raw).unwrap().value, 0.0);
    }

    #[test]
    fn p_true_through_backend() {
        let context = "Question: Is water wet?\nAnswer: True";
        let prompt = p_true_prompt(context, " True");
        assert_eq!(
            prompt,
            "Question: Is water wet?\nAnswer: True\nPossible answer: True\nIs the possible answer: (A) True (B) False\n"
        );
        let mut top = BTreeMap::new();
        top.insert("B".to_string(), libm::log(0.1));
        let mock = MockBackend::from_script(MockScript {
            fallback: Default::default(),
            entries: vec![ScriptEntry::exact(
                prompt,
                vec![ScriptedResponse {
                    text: " A".into(),
                    tokens: None,
                    logprobs: Some(vec![libm::log(0.9)]),
                    top_logprobs: Some(vec![top]),
                }],
            )],
        })
        .unwrap();
        let (r, request, _) = p_true_confidence(&mock, context, " True", 1.2, &ExtractionConfig::default()).unwrap();
        assert_eq!(request.max_tokens, 1);
        assert_eq!(request.top_logprobs, 5);
        assert!((r.value - 0.9).abs() < 1e-12);
    }

    #[test]
    fn verbalized_examples() {
        let cfg = ExtractionConfig::default();
        assert_eq!(parse_verbalized("0.85", &cfg).unwrap().value, 0.85);
        let r = parse_verbalized("1.2", &cfg).unwrap();
        assert_eq!((r.value, r.raw_value, r.clamped), (1.0, 1.2, true));
        assert_eq!(
            parse_verbalized("I am not sure.", &cfg),
            Err(ConfidenceError::Unparseable {
                text: "I am not sure.".into()
            })
        );
        assert_eq!(parse_verbalized(" .9 overall", &cfg).unwrap().value, 0.9);
        assert_eq!(parse_verbalized("about 85%", &cfg).unwrap().value, 1.0);
        let pct = ExtractionConfig {
            verbalized_percent: true,
            ..cfg.clone()
        };
        assert!((parse_verbalized("about 85%", &pct).unwrap().value - 0.85).abs() < 1e-12);
        let open = ExtractionConfig { clamp: false, ..cfg };
        let r = parse_verbalized("1.2", &open).unwrap();
        assert_eq!((r.value, r.clamped), (1.2, false));
    }

    #[test]
    fn verbalized_through_backend() {
        let mock = MockBackend::from_pairs([("ctx\nConfidence (0-1):", " 0.7")]).unwrap();
        let (r, _, _) = verbalized_confidence(&mock, "ctx", 1.2, &ExtractionConfig::default()).unwrap();
        assert_eq!(r.value, 0.7);
    }

    #[test]
    fn method_names_round_trip() {
        for m in ExtractionMethod::ALL {
            assert_eq!(m.as_str().parse::<ExtractionMethod>().unwrap(), m);
        }
        assert!("logits".parse::<ExtractionMethod>().is_err());
    }

    proptest! {
        #[test]
        fn token_prob_is_reciprocal_perplexity(lps in proptest::collection::vec(-20.0f64..=0.0, 1..40)) {
            let c = completion(&lps);
            let v = token_prob_confidence(&c).unwrap().value;
            prop_assert!(v > 0.0 && v <= 1.0);
            prop_assert!((v - 1.0 / perplexity(&c).unwrap()).abs() < 1e-9);
            let mut rev = lps.clone();
            rev.reverse();
            prop_assert!((v - token_prob_confidence(&completion(&rev)).unwrap().value).abs() < 1e-12);
        }

        #[test]
        fn normalized_p_true_dominates_raw(pa in 0.001f64..0.999, share in 0.0f64..1.0) {
            let pb = (1.0 - pa) * share;
            let mut alts = vec![("A", libm::log(pa))];
            if pb > 0.0 {
                alts.push(("B", libm::log(pb)));
            }
            let c = first_position(&alts);
            let raw = p_true_from_completion(&c, PTrueMode::Raw).unwrap().value;
            let norm = p_true_from_completion(&c, PTrueMode::Normalized).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&norm));
            prop_assert!(norm >= raw - 1e-15);
        }
    }
}
