//! Prompting strategies as declarative plans of generation steps.
//!
//! A [`StrategyPlan`] lists the steps of one strategy for one item; later
//! steps see earlier outputs through `{prior:<step>}` placeholders. Control
//! flow is linear except for self-ask (a follow-up loop guarded by a yes/no
//! step) and self-consistency (repeated sampling plus a majority vote).

mod execute;
mod render;
pub mod templates;
mod vote;

pub use execute::{execute, Execution, ExecutionConfig, StepRecord, Transcript};
pub use render::{render_step, render_template, RenderContext};
pub use vote::{majority_vote, vote_key, VoteDetail};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, CompletionRequest};
use crate::confidence::{ConfidenceError, ExtractionMethod};
use crate::qa::QAItem;
use templates::FarShape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrategyError {
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("item {item_id:?} has no gold facts for far_human_facts")]
    MissingGoldFacts { item_id: String },
    #[error("step {step:?}: cannot resolve placeholder {{{placeholder}}}")]
    Placeholder { step: String, placeholder: String },
    #[error("step {step:?}: {source}")]
    Backend { step: String, source: BackendError },
    #[error("{method} extraction: {source}")]
    Confidence {
        method: ExtractionMethod,
        source: ConfidenceError,
    },
    #[error("invalid strategy configuration: {0}")]
    InvalidConfig(String),
}

macro_rules! strategy_ids {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum StrategyId {
            $($variant),+
        }

        impl StrategyId {
            pub const ALL: &'static [StrategyId] = &[$(StrategyId::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(StrategyId::$variant => $name),+
                }
            }
        }
    };
}

strategy_ids! {
    Standard => "standard",
    Knowledge => "knowledge",
    KnowledgeExplain => "knowledge_explain",
    Cot => "cot",
    SelfAsk => "self_ask",
    SelfAskAggregate => "self_ask_aggregate",
    SelfConsistency => "self_consistency",
    PseudoTot => "pseudo_tot",
    FarFinal => "far_final",
    FarFactOnly => "far_fact_only",
    FarFactOnlyNoSource => "far_fact_only_no_source",
    FarNoSource => "far_no_source",
    FarExplain => "far_explain",
    FarFree => "far_free",
    FarHumanFacts => "far_human_facts",
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_string()))
    }
}

/// Per-step changes to the default request.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RequestOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl RequestOverrides {
    pub fn apply(&self, request: &mut CompletionRequest) {
        if let Some(m) = self.max_tokens {
            request.max_tokens = m;
        }
        if let Some(t) = self.temperature {
            request.temperature = t;
        }
        if let Some(s) = &self.stop {
            request.stop = Some(s.clone());
        }
    }

    fn line() -> Self {
        Self {
            stop: Some(alloc::vec!["\n".to_string()]),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub name: String,
    pub template: String,
    #[serde(default)]
    pub request_overrides: RequestOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Control {
    Linear,
    /// Steps are `[followup_needed, followup_question, intermediate_answer, answer]`.
    ConditionalBranch {
        max_followups: usize,
    },
    /// The single step is sampled `n` times at `temperature`.
    RepeatNVote {
        n: usize,
        temperature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyPlan {
    pub strategy_id: StrategyId,
    pub question: String,
    /// Prepended verbatim to every rendered prompt.
    pub preamble: String,
    pub steps: Vec<Step>,
    pub control: Control,
    /// Step outputs supplied up front instead of generated.
    pub givens: BTreeMap<String, String>,
    pub thought_char_budget: Option<usize>,
}

impl StrategyPlan {
    pub fn final_step(&self) -> &Step {
        self.steps.last().expect("plans have at least one step")
    }

    /// Backend calls made for generation (extraction calls excluded), or
    /// the `(min, max)` range for self-ask.
    pub fn generation_calls(&self) -> (usize, usize) {
        match self.control {
            Control::Linear => (self.steps.len(), self.steps.len()),
            Control::ConditionalBranch { max_followups } => (2, 2 + 2 * max_followups),
            Control::RepeatNVote { n, .. } => (n, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub self_ask_max_followups: usize,
    pub self_consistency_n: usize,
    pub self_consistency_temperature: f64,
    pub demonstrations: Vec<Demonstration>,
    /// Maximum characters of each generated thought injected into the
    /// final prompt.
    pub thought_char_budget: Option<usize>,
    /// Template overrides keyed `"<strategy>.<step>"`.
    pub templates: BTreeMap<String, String>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            self_ask_max_followups: 3,
            self_consistency_n: 10,
            self_consistency_temperature: 0.7,
            demonstrations: Vec::new(),
            thought_char_budget: None,
            templates: BTreeMap::new(),
        }
    }
}

impl StrategyConfig {
    pub fn preamble(&self) -> String {
        self.demonstrations
            .iter()
            .map(|d| alloc::format!("Question: {}\nAnswer: {}\n\n", d.question, d.answer))
            .collect()
    }
}

fn far_shape(id: StrategyId) -> Option<FarShape> {
    let base = FarShape {
        source: true,
        reflection: true,
        explain: false,
        single_answer: true,
    };
    Some(match id {
        StrategyId::FarFinal => base,
        StrategyId::FarFactOnly => FarShape {
            reflection: false,
            ..base
        },
        StrategyId::FarFactOnlyNoSource => FarShape {
            reflection: false,
            source: false,
            ..base
        },
        StrategyId::FarNoSource => FarShape { source: false, ..base },
        StrategyId::FarExplain => FarShape { explain: true, ..base },
        StrategyId::FarFree => FarShape {
            single_answer: false,
            ..base
        },
        StrategyId::FarHumanFacts => FarShape { source: false, ..base },
        _ => return None,
    })
}

/// Builds the plan of `id` for `item`. Pure: equal inputs give equal plans.
pub fn plan(id: StrategyId, item: &QAItem, config: &StrategyConfig) -> Result<StrategyPlan, StrategyError> {
    let step = |name: &str, template: String, overrides: RequestOverrides| {
        let key = alloc::format!("{}.{name}", id.as_str());
        Step {
            name: name.to_string(),
            template: config.templates.get(&key).cloned().unwrap_or(template),
            request_overrides: overrides,
        }
    };
    let plain = RequestOverrides::default;
    let mut givens = BTreeMap::new();
    let mut control = Control::Linear;

    let steps = match id {
        StrategyId::Standard => alloc::vec![step("answer", templates::STANDARD.into(), plain())],
        StrategyId::Knowledge | StrategyId::KnowledgeExplain => alloc::vec![
            step("knowledge", templates::knowledge_step().into(), plain()),
            step(
                "answer",
                templates::knowledge_answer(id == StrategyId::KnowledgeExplain).into(),
                plain()
            ),
        ],
        StrategyId::Cot => alloc::vec![
            step("reason", templates::COT_REASON.into(), plain()),
            step("answer", templates::COT_ANSWER.into(), plain()),
        ],
        StrategyId::SelfAsk => {
            control = Control::ConditionalBranch {
                max_followups: config.self_ask_max_followups,
            };
            alloc::vec![
                step(
                    "followup_needed",
                    templates::SELF_ASK_NEEDED.into(),
                    RequestOverrides::line()
                ),
                step(
                    "followup_question",
                    templates::SELF_ASK_FOLLOW_UP.into(),
                    RequestOverrides::line()
                ),
                step(
                    "intermediate_answer",
                    templates::SELF_ASK_INTERMEDIATE.into(),
                    RequestOverrides::line()
                ),
                step("answer", templates::SELF_ASK_FINAL.into(), plain()),
            ]
        }
        StrategyId::SelfAskAggregate => alloc::vec![
            step("followups", templates::SELF_ASK_AGG_FOLLOW_UPS.into(), plain()),
            step("intermediate_answers", templates::SELF_ASK_AGG_ANSWERS.into(), plain()),
            step("answer", templates::SELF_ASK_AGG_FINAL.into(), plain()),
        ],
        StrategyId::SelfConsistency => {
            if config.self_consistency_n == 0 {
                return Err(StrategyError::InvalidConfig(
                    "self_consistency_n must be at least 1".into(),
                ));
            }
            control = Control::RepeatNVote {
                n: config.self_consistency_n,
                temperature: config.self_consistency_temperature,
            };
            alloc::vec![step("answer", templates::STANDARD.into(), plain())]
        }
        StrategyId::PseudoTot => alloc::vec![
            step("discussion", templates::pseudo_tot_discussion(), plain()),
            step("answer", templates::pseudo_tot_answer(), plain()),
        ],
        far => {
            let shape = far_shape(far).expect("remaining ids are FaR variants");
            let mut steps = Vec::new();
            if far == StrategyId::FarHumanFacts {
                let facts = item.gold_facts.as_ref().filter(|f| !f.is_empty()).ok_or_else(|| {
                    StrategyError::MissingGoldFacts {
                        item_id: item.id.clone(),
                    }
                })?;
                let joined: String = facts.iter().map(|f| alloc::format!(" {}", f.trim())).collect();
                givens.insert("fact".to_string(), joined);
            } else {
                steps.push(step("fact", templates::far_fact(), plain()));
            }
            if shape.source {
                steps.push(step("source", templates::far_source(), plain()));
            }
            if shape.reflection {
                steps.push(step("reflection", templates::far_reflection(shape), plain()));
            }
            steps.push(step("answer", templates::far_answer(shape), plain()));
            steps
        }
    };

    Ok(StrategyPlan {
        strategy_id: id,
        question: item.question.clone(),
        preamble: config.preamble(),
        steps,
        control,
        givens,
        thought_char_budget: config.thought_char_budget,
    })
}
