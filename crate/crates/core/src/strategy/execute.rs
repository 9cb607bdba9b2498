use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::render::{render_step, RenderContext};
use super::templates::SELF_ASK_DONE_MARKER;
use super::vote::{majority_vote, VoteDetail};
use super::{Control, Step, StrategyError, StrategyId, StrategyPlan};
use crate::backend::{Backend, Completion, CompletionRequest, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::confidence::{
    p_true_confidence, token_prob_confidence, verbalized_confidence, ConfidenceError, ConfidenceResult,
    ExtractionConfig, ExtractionMethod, PTrueContext,
};
use crate::qa::{extract_boolean, BoolAnswer, ExtractedAnswer, QAItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutionConfig {
    pub max_tokens: u32,
    pub temperature: f64,
    /// Alternatives requested on generation steps.
    pub top_logprobs: u8,
    pub seed: u64,
    pub methods: Vec<ExtractionMethod>,
    pub extraction: ExtractionConfig,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            top_logprobs: 1,
            seed: 0,
            methods: alloc::vec![ExtractionMethod::TokenProb],
            extraction: ExtractionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    pub prompt: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub completion: Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub item_id: String,
    pub strategy_id: StrategyId,
    /// Generation steps in execution order.
    pub step_records: Vec<StepRecord>,
    pub final_answer: ExtractedAnswer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_detail: Option<VoteDetail>,
    /// Follow-up calls made by confidence extraction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extraction_records: Vec<StepRecord>,
}

impl Transcript {
    pub fn backend_calls(&self) -> usize {
        self.step_records.len() + self.extraction_records.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub transcript: Transcript,
    pub confidences: Vec<ConfidenceResult>,
}

struct Runner<'a, B: ?Sized> {
    backend: &'a B,
    config: &'a ExecutionConfig,
    preamble: &'a str,
    records: Vec<StepRecord>,
}

impl<B: Backend + ?Sized> Runner<'_, B> {
    fn run(
        &mut self,
        step: &Step,
        ctx: &RenderContext<'_>,
        temperature: f64,
        seed: u64,
    ) -> Result<String, StrategyError> {
        let prompt = render_step(step, self.preamble, ctx)?;
        let mut request = CompletionRequest {
            prompt,
            max_tokens: self.config.max_tokens,
            temperature,
            top_logprobs: self.config.top_logprobs,
            seed: Some(seed),
            stop: None,
        };
        step.request_overrides.apply(&mut request);
        let completion = self
            .backend
            .complete(&request)
            .and_then(|c| c.validate().map(|_| c))
            .map_err(|source| StrategyError::Backend {
                step: step.name.clone(),
                source,
            })?;
        let text = completion.text.clone();
        self.records.push(StepRecord {
            name: step.name.clone(),
            prompt: request.prompt,
            temperature: request.temperature,
            seed: request.seed,
            completion,
        });
        Ok(text)
    }
}

/// Runs a plan against a backend and extracts the requested confidences
/// from the final answer.
pub fn execute<B: Backend + ?Sized>(
    plan: &StrategyPlan,
    item: &QAItem,
    backend: &B,
    config: &ExecutionConfig,
) -> Result<Execution, StrategyError> {
    if plan.steps.is_empty() {
        return Err(StrategyError::InvalidConfig("plan has no steps".into()));
    }
    let mut runner = Runner {
        backend,
        config,
        preamble: &plan.preamble,
        records: Vec::new(),
    };
    let mut ctx = RenderContext::new(&plan.question);
    ctx.priors = plan.givens.clone();
    let seed = config.seed;
    let temperature = config.temperature;
    let mut vote_detail = None;

    let final_index = match plan.control {
        Control::Linear => {
            let last = plan.steps.len() - 1;
            for (i, step) in plan.steps.iter().enumerate() {
                if i == last {
                    ctx.thought_budget = plan.thought_char_budget;
                }
                let text = runner.run(step, &ctx, temperature, seed)?;
                ctx.priors.insert(step.name.clone(), text);
            }
            runner.records.len() - 1
        }
        Control::ConditionalBranch { max_followups } => {
            let [needed, follow_up, intermediate, answer] = plan.steps.as_slice() else {
                return Err(StrategyError::InvalidConfig(
                    "self-ask plans need exactly four steps".into(),
                ));
            };
            let verdict = runner.run(needed, &ctx, temperature, seed)?;
            let go_on = extract_boolean(&verdict) != BoolAnswer::False;
            ctx.priors.insert(needed.name.clone(), verdict);
            if go_on {
                for _ in 0..max_followups {
                    let question = runner.run(follow_up, &ctx, temperature, seed)?;
                    ctx.priors.insert(follow_up.name.clone(), question.clone());
                    let reply = runner.run(intermediate, &ctx, temperature, seed)?;
                    let done = reply.to_lowercase().contains(&SELF_ASK_DONE_MARKER.to_lowercase());
                    ctx.pairs.push((question, reply));
                    if done {
                        break;
                    }
                }
            }
            ctx.thought_budget = plan.thought_char_budget;
            runner.run(answer, &ctx, temperature, seed)?;
            runner.records.len() - 1
        }
        Control::RepeatNVote { n, temperature } => {
            let step = plan.final_step();
            let mut candidates = Vec::with_capacity(n);
            for i in 0..n as u64 {
                let text = runner.run(step, &ctx, temperature, seed.wrapping_add(i))?;
                candidates.push(ExtractedAnswer::new(&text, item.answer_kind));
            }
            let detail = majority_vote(&candidates)
                .ok_or_else(|| StrategyError::InvalidConfig("vote over zero samples".into()))?;
            let index = detail.winner_index;
            vote_detail = Some(detail);
            index
        }
    };

    let final_record = &runner.records[final_index];
    let final_completion = final_record.completion.clone();
    let final_prompt = final_record.prompt.clone();
    let final_answer = ExtractedAnswer::new(&final_completion.text, item.answer_kind);
    let answer_context = alloc::format!("{final_prompt}{}", final_completion.text);

    let mut confidences = Vec::with_capacity(config.methods.len());
    let mut extraction_records = Vec::new();
    for &method in &config.methods {
        let result = match method {
            ExtractionMethod::TokenProb => token_prob_confidence(&final_completion).map_err(wrap(method))?,
            ExtractionMethod::PTrue => {
                let context = match config.extraction.p_true_context {
                    PTrueContext::FullTranscript => answer_context.clone(),
                    PTrueContext::QuestionOnly => {
                        alloc::format!("{}Question: {}", plan.preamble, plan.question)
                    }
                };
                let (result, request, completion) = p_true_confidence(
                    backend,
                    &context,
                    &final_completion.text,
                    temperature,
                    &config.extraction,
                )
                .map_err(wrap(method))?;
                extraction_records.push(extraction_record(method, request, completion));
                result
            }
            ExtractionMethod::Verbalized => {
                let (result, request, completion) =
                    verbalized_confidence(backend, &answer_context, temperature, &config.extraction)
                        .map_err(wrap(method))?;
                extraction_records.push(extraction_record(method, request, completion));
                result
            }
        };
        confidences.push(result);
    }

    Ok(Execution {
        transcript: Transcript {
            item_id: item.id.clone(),
            strategy_id: plan.strategy_id,
            step_records: runner.records,
            final_answer,
            vote_detail,
            extraction_records,
        },
        confidences,
    })
}

fn wrap(method: ExtractionMethod) -> impl Fn(ConfidenceError) -> StrategyError {
    move |source| StrategyError::Confidence { method, source }
}

fn extraction_record(method: ExtractionMethod, request: CompletionRequest, completion: Completion) -> StepRecord {
    StepRecord {
        name: method.as_str().to_string(),
        prompt: request.prompt,
        temperature: request.temperature,
        seed: request.seed,
        completion,
    }
}
