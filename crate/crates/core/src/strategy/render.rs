use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Step, StrategyError};

/// Values available to a step's placeholders.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderContext<'a> {
    pub question: &'a str,
    pub priors: BTreeMap<String, String>,
    /// Self-ask `(follow-up question, intermediate answer)` pairs so far.
    pub pairs: Vec<(String, String)>,
    /// Character budget for injected thoughts; `None` leaves them whole.
    pub thought_budget: Option<usize>,
}

impl<'a> RenderContext<'a> {
    pub fn new(question: &'a str) -> Self {
        Self {
            question,
            ..Self::default()
        }
    }

    fn thought(&self, text: &str) -> String {
        match self.thought_budget {
            Some(budget) => text.chars().take(budget).collect(),
            None => text.to_string(),
        }
    }

    fn pairs_inline(&self) -> String {
        self.pairs
            .iter()
            .map(|(q, a)| alloc::format!("Follow up: {} Intermediate answer: {} ", q.trim(), a.trim()))
            .collect()
    }

    fn pair_lines(&self) -> String {
        self.pairs
            .iter()
            .map(|(q, a)| alloc::format!("Follow up:{q}\nIntermediate answer:{a}\n"))
            .collect()
    }
}

/// Substitutes placeholders in one pass. Substituted values are never
/// re-scanned, so model output containing braces is inserted verbatim.
pub fn render_template(step_name: &str, template: &str, ctx: &RenderContext<'_>) -> Result<String, StrategyError> {
    let unresolved = |name: &str| StrategyError::Placeholder {
        step: step_name.to_string(),
        placeholder: name.to_string(),
    };
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
            continue;
        }
        if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
            continue;
        }
        if tail.starts_with('}') {
            return Err(unresolved("}"));
        }
        let close = tail.find('}').ok_or_else(|| unresolved(tail))?;
        let name = &tail[1..close];
        match name {
            "question" => out.push_str(ctx.question),
            "pairs" => out.push_str(&ctx.thought(&ctx.pairs_inline())),
            "pair_lines" => out.push_str(&ctx.thought(&ctx.pair_lines())),
            _ => {
                let value = name
                    .strip_prefix("prior:")
                    .and_then(|step| ctx.priors.get(step))
                    .ok_or_else(|| unresolved(name))?;
                out.push_str(&ctx.thought(value));
            }
        }
        rest = &tail[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a step and prepends the plan preamble (demonstrations).
pub fn render_step(step: &Step, preamble: &str, ctx: &RenderContext<'_>) -> Result<String, StrategyError> {
    let body = render_template(&step.name, &step.template, ctx)?;
    let mut out = String::with_capacity(preamble.len() + body.len());
    out.push_str(preamble);
    out.push_str(&body);
    Ok(out)
}
