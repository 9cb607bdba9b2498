//! Default prompt wordings. Every template can be replaced through
//! `StrategyConfig::templates` using the key `"<strategy>.<step>"`.
//!
//! Placeholders: `{question}`, `{prior:<step>}` (output of an earlier
//! step), `{pairs}` / `{pair_lines}` (self-ask follow-ups so far). `{{` and
//! `}}` are literal braces.

pub const STANDARD: &str = "Question: {question}\nAnswer:";

pub const KNOWLEDGE_CUE: &str = "Generate some knowledge about the question:";
pub const EXPLAIN_CUE: &str = "Explain and Answer:";
pub const ANSWER_CUE: &str = "Answer:";
pub const COT_CUE: &str = "Let's think step by step:";
pub const FOLLOW_UP_CUE: &str = "Are follow-up questions needed?";
/// An intermediate answer containing this phrase ends the follow-up loop.
pub const SELF_ASK_DONE_MARKER: &str = "So the final answer is";

pub const FAR_FACT: &str = "List the facts you know that are relevant to the question.";
pub const FAR_SOURCE: &str = "What are the sources of the above facts?";
pub const FAR_REFLECT: &str = "Reflect on the facts above and reason about the question.";
pub const FAR_SINGLE_ANSWER: &str = "Give only one answer.";

pub const PSEUDO_TOT_FRAME: &str = "Imagine three different experts are answering this question. \
All experts will write down one step of their thinking, then share it with the group. \
Then all experts will go on to the next step. \
If any expert realises they are wrong at any point, they leave.";

pub fn knowledge_step() -> &'static str {
    "Question: {question}\nGenerate some knowledge about the question:"
}

pub fn knowledge_answer(explain: bool) -> &'static str {
    if explain {
        "Question: {question}\nKnowledge:{prior:knowledge}\nExplain and Answer:"
    } else {
        "Question: {question}\nKnowledge:{prior:knowledge}\nAnswer:"
    }
}

pub const COT_REASON: &str = "Question: {question}\nLet's think step by step:";
pub const COT_ANSWER: &str = "Question: {question}\nLet's think step by step:{prior:reason}\nAnswer:";

pub const SELF_ASK_NEEDED: &str = "Question: {question}\nAre follow-up questions needed?";
pub const SELF_ASK_FOLLOW_UP: &str =
    "Question: {question}\nAre follow-up questions needed?{prior:followup_needed}\n{pair_lines}Follow up:";
pub const SELF_ASK_INTERMEDIATE: &str = "Question: {question}\nAre follow-up questions needed?{prior:followup_needed}\n{pair_lines}Follow up:{prior:followup_question}\nIntermediate answer:";
pub const SELF_ASK_FINAL: &str = "Question:{question}; Intermediate Questions and Answers: {pairs}Answer:";

pub const SELF_ASK_AGG_FOLLOW_UPS: &str =
    "Question: {question}\nAre follow-up questions needed? List the follow-up questions:";
pub const SELF_ASK_AGG_ANSWERS: &str =
    "Question: {question}\nFollow-up questions:{prior:followups}\nAnswer all the follow-up questions together:";
pub const SELF_ASK_AGG_FINAL: &str =
    "Question:{question}; Intermediate Questions and Answers: {prior:followups}\n{prior:intermediate_answers} Answer:";

pub fn pseudo_tot_discussion() -> alloc::string::String {
    alloc::format!("{PSEUDO_TOT_FRAME}\nQuestion: {{question}}\nDiscussion:")
}

pub fn pseudo_tot_answer() -> alloc::string::String {
    alloc::format!(
        "{PSEUDO_TOT_FRAME}\nQuestion: {{question}}\nDiscussion:{{prior:discussion}}\n\
After the discussion, the experts agree on one final answer.\nAnswer:"
    )
}

/// Which FaR components a variant keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FarShape {
    pub source: bool,
    pub reflection: bool,
    pub explain: bool,
    pub single_answer: bool,
}

fn far_context(shape: FarShape, upto_reflection: bool) -> alloc::string::String {
    let mut s = alloc::string::String::from("Question: {question}\nFacts:{prior:fact}\n");
    if shape.source {
        s.push_str("Sources:{prior:source}\n");
    }
    if shape.reflection && upto_reflection {
        s.push_str("Reflection:{prior:reflection}\n");
    }
    s
}

pub fn far_fact() -> alloc::string::String {
    alloc::format!("Question: {{question}}\n{FAR_FACT}\nFacts:")
}

pub fn far_source() -> alloc::string::String {
    alloc::format!("Question: {{question}}\nFacts:{{prior:fact}}\n{FAR_SOURCE}\nSources:")
}

pub fn far_reflection(shape: FarShape) -> alloc::string::String {
    alloc::format!("{}{FAR_REFLECT}\nReflection:", far_context(shape, false))
}

pub fn far_answer(shape: FarShape) -> alloc::string::String {
    let mut s = far_context(shape, true);
    if shape.single_answer {
        s.push_str(FAR_SINGLE_ANSWER);
        s.push('\n');
    }
    s.push_str(if shape.explain { EXPLAIN_CUE } else { ANSWER_CUE });
    s
}
