//! Re-running one configuration along a single varying axis.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::run::{build_backend, run_eval_with, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Characters of each generated thought kept in the final prompt.
    ThoughtCharBudget,
    /// Leading demonstrations kept from the configured list.
    DemonstrationsCount,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::ThoughtCharBudget => "thought_char_budget",
            SweepAxis::DemonstrationsCount => "demonstrations_count",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thought_char_budget" => Ok(SweepAxis::ThoughtCharBudget),
            "demonstrations_count" => Ok(SweepAxis::DemonstrationsCount),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub out_dir: PathBuf,
    /// Backend calls made by generation and extraction.
    pub backend_calls: usize,
    /// Characters sent to the backend across all prompts.
    pub prompt_chars: usize,
}

/// The configuration of one sweep point.
pub fn configure(base: &RunConfig, axis: SweepAxis, value: usize) -> Result<RunConfig> {
    let mut config = base.clone();
    match axis {
        SweepAxis::ThoughtCharBudget => config.thought_char_budget = Some(value),
        SweepAxis::DemonstrationsCount => {
            let available = base.demonstrations.as_deref().unwrap_or_default();
            if value > available.len() {
                return Err(Error::Config(format!(
                    "{value} demonstrations requested but {} configured",
                    available.len()
                )));
            }
            config.demonstrations = Some(available[..value].to_vec());
        }
    }
    config.out_dir = base.out_dir.join(format!("{}_{value}", axis.as_str()));
    Ok(config)
}

/// One run per value, all sharing the configured backend and cache.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[usize]) -> Result<Vec<(SweepPoint, RunOutput)>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    base.validate()?;
    let backend = build_backend(base)?;
    let mut out = Vec::with_capacity(values.len());
    for &value in values {
        let config = configure(base, axis, value)?;
        let run = run_eval_with(&config, backend.as_ref())?;
        let point = SweepPoint {
            value,
            out_dir: config.out_dir.clone(),
            backend_calls: run.transcripts.iter().map(|t| t.transcript.backend_calls()).sum(),
            prompt_chars: run
                .transcripts
                .iter()
                .flat_map(|t| t.transcript.step_records.iter().chain(&t.transcript.extraction_records))
                .map(|r| r.prompt.chars().count())
                .sum(),
        };
        out.push((point, run));
    }
    let summary: Vec<&SweepPoint> = out.iter().map(|(p, _)| p).collect();
    let dir = base.resolve(&base.out_dir);
    std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    crate::report::write_json(&dir.join(format!("sweep_{}.json", axis.as_str())), &summary)?;
    Ok(out)
}
