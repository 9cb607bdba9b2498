#![allow(dead_code)]

use std::path::PathBuf;

use calibra::config::RunConfig;
use calibra::core::confidence::{p_true_prompt, verbalized_prompt};
use calibra::core::mock::{Fallback, MockBackend, MockScript};
use calibra::core::qa::{AnswerKind, QAItem};
use calibra::core::strategy::{execute, plan, Demonstration, ExecutionConfig, StrategyConfig, StrategyId};

pub const OUTPUT: &str = " [model output]";

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn goldens_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/goldens")
}

pub fn e2e_config() -> RunConfig {
    RunConfig::load(&fixture("e2e/run.json")).unwrap()
}

pub fn golden_item() -> QAItem {
    QAItem {
        id: "owl".into(),
        question: "Would an owl monkey enjoy a strawberry?".into(),
        gold_answers: vec!["True".into()],
        answer_kind: AnswerKind::Boolean,
        gold_facts: Some(vec!["Owl monkeys eat fruit.".into(), "Strawberries are fruit.".into()]),
        external_knowledge: None,
        original_question: None,
    }
}

fn echo_backend() -> MockBackend {
    MockBackend::from_script(MockScript {
        fallback: Fallback::Fixed(OUTPUT.into()),
        entries: Vec::new(),
    })
    .unwrap()
}

fn section(out: &mut String, title: &str, prompt: &str) {
    out.push_str(&format!("=== {title} ===\n{prompt}\n"));
}

fn render(id: StrategyId, config: &StrategyConfig) -> String {
    let item = golden_item();
    let p = plan(id, &item, config).unwrap();
    let run = execute(&p, &item, &echo_backend(), &ExecutionConfig::default()).unwrap();
    let records = &run.transcript.step_records;
    let mut out = String::new();
    let mut i = 0;
    while i < records.len() {
        let same = records[i..]
            .iter()
            .take_while(|r| r.prompt == records[i].prompt)
            .count();
        let title = if same > 1 {
            format!("{} ({same} samples)", records[i].name)
        } else {
            records[i].name.clone()
        };
        section(&mut out, &title, &records[i].prompt);
        i += same;
    }
    out
}

/// `(file name, contents)` of every golden render.
pub fn render_goldens() -> Vec<(String, String)> {
    let config = StrategyConfig::default();
    let mut out: Vec<(String, String)> = StrategyId::ALL
        .iter()
        .map(|id| (format!("{id}.txt"), render(*id, &config)))
        .collect();
    let with_demos = StrategyConfig {
        demonstrations: vec![
            Demonstration {
                question: "Is the sun a star?".into(),
                answer: "True".into(),
            },
            Demonstration {
                question: "Can fish climb trees?".into(),
                answer: "False".into(),
            },
        ],
        ..StrategyConfig::default()
    };
    out.push((
        "standard_with_demonstrations.txt".into(),
        render(StrategyId::Standard, &with_demos),
    ));
    let context = format!("Question: {}\nAnswer:{OUTPUT}", golden_item().question);
    let mut p_true = String::new();
    section(&mut p_true, "p_true", &p_true_prompt(&context, OUTPUT));
    out.push(("p_true.txt".into(), p_true));
    let mut verbalized = String::new();
    section(&mut verbalized, "verbalized", &verbalized_prompt(&context));
    out.push(("verbalized.txt".into(), verbalized));
    out
}

/// Compares renders with the checked-in goldens, rewriting them instead
/// when `UPDATE_GOLDENS` is set. Returns the names that differ.
pub fn check_goldens() -> Vec<String> {
    let dir = goldens_dir();
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    let mut mismatched = Vec::new();
    for (name, contents) in render_goldens() {
        let path = dir.join(&name);
        if update {
            std::fs::write(&path, &contents).unwrap();
            continue;
        }
        match std::fs::read_to_string(&path) {
            Ok(stored) if stored == contents => {}
            _ => mismatched.push(name),
        }
    }
    mismatched
}
