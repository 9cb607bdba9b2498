//! Acceptance checks. Runs without the libtest harness so that each
//! criterion prints exactly one PASS or FAIL line.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use calibra::core::backend::{Backend, BackendError, Completion, CompletionRequest, FinishReason};
use calibra::core::concern::{detect_concern, improvement, ConcernLexicon, SelectionMode};
use calibra::core::confidence::{
    parse_verbalized, perplexity, token_prob_confidence, ConfidenceError, ExtractionConfig, ExtractionMethod,
};
use calibra::core::metrics::{bucketize, distribution_curve, ece, macro_ce, CurveKind, Scored};
use calibra::core::mock::{Fallback, MockBackend, MockScript, ScriptEntry, ScriptedResponse};
use calibra::core::qa::{AnswerKind, EvalRecord, ExtractedAnswer, QAItem};
use calibra::core::strategy::{execute, majority_vote, plan, ExecutionConfig, StrategyConfig, StrategyId};
use calibra::report::{curve_csv, read_json, REPORT_FILE};
use calibra::run::run_eval;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn toy_example() -> Check {
    let start = Instant::now();
    // Predicted 1 against label 0 at confidence 1; predicted 0 against label 0 at confidence 0.
    let entries = [Scored::new("p1", 1.0, false), Scored::new("p2", 0.0, true)];
    let e = ece(&entries, 1, true).map_err(|e| e.to_string())?;
    let (m, _) = macro_ce(&entries).map_err(|e| e.to_string())?;
    ensure(e == 0.0 && m == 1.0, || format!("ece {e}, macro_ce {m}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("ece {e}, macro_ce {m}"))
}

/// Confidences that often sit exactly on bucket edges.
fn random_confidence(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..3) {
        0 => f64::from(rng.gen_range(0..=12u32)) / 12.0,
        1 => [0.0, 0.25, 0.5, 0.75, 1.0][rng.gen_range(0..5)],
        _ => rng.gen::<f64>(),
    }
}

fn random_set(rng: &mut ChaCha8Rng, max_n: usize) -> Vec<(String, f64, bool)> {
    let n = rng.gen_range(1..=max_n);
    (0..n)
        .map(|i| (format!("r{i}"), random_confidence(rng), rng.gen_bool(0.5)))
        .collect()
}

fn as_scored(set: &[(String, f64, bool)]) -> Vec<Scored<'_>> {
    set.iter().map(|(id, c, ok)| Scored::new(id, *c, *ok)).collect()
}

fn oracle_ece(set: &[(String, f64, bool)], m: usize) -> f64 {
    let n = set.len() as f64;
    let mut total = 0.0;
    for b in 0..m {
        let lo = b as f64 / m as f64;
        let hi = (b + 1) as f64 / m as f64;
        let members: Vec<_> = set
            .iter()
            .filter(|(_, c, _)| *c >= lo && (*c < hi || (b == m - 1 && *c <= hi)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let size = members.len() as f64;
        let conf = members.iter().map(|(_, c, _)| c).sum::<f64>() / size;
        let acc = members.iter().filter(|(_, _, ok)| *ok).count() as f64 / size;
        total += size / n * (acc - conf).abs();
    }
    total
}

fn oracle_macro(set: &[(String, f64, bool)]) -> f64 {
    let pos: Vec<f64> = set.iter().filter(|r| r.2).map(|r| 1.0 - r.1).collect();
    let neg: Vec<f64> = set.iter().filter(|r| !r.2).map(|r| r.1).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    match (pos.is_empty(), neg.is_empty()) {
        (false, false) => (mean(&pos) + mean(&neg)) / 2.0,
        (false, true) => mean(&pos),
        _ => mean(&neg),
    }
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let set = random_set(&mut rng, 12);
        let m = rng.gen_range(1..=4);
        let entries = as_scored(&set);
        let buckets = bucketize(&entries, m, true).map_err(|e| e.to_string())?;
        let total: usize = buckets.iter().map(|b| b.len()).sum();
        ensure(total == set.len(), || {
            format!("case {case}: buckets hold {total} of {}", set.len())
        })?;
        let e = ece(&entries, m, true).map_err(|e| e.to_string())?;
        let (mce, _) = macro_ce(&entries).map_err(|e| e.to_string())?;
        let diff = (e - oracle_ece(&set, m)).abs().max((mce - oracle_macro(&set)).abs());
        ensure(diff <= 1e-12, || format!("case {case}: deviation {diff:e}"))?;
        worst = worst.max(diff);
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("200 sets, max deviation {worst:e}"))
}

fn completion(logprobs: Vec<f64>) -> Completion {
    let tokens = (0..logprobs.len()).map(|i| format!(" w{i}")).collect();
    Completion::from_tokens(tokens, logprobs, FinishReason::Stop)
}

fn token_probability() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(1..=40);
        let c = completion((0..len).map(|_| -rng.gen_range(0.0..6.0)).collect());
        let conf = token_prob_confidence(&c).map_err(|e| e.to_string())?.value;
        let ppl = perplexity(&c).ok_or("no perplexity")?;
        worst = worst.max((conf - 1.0 / ppl).abs());
    }
    ensure(worst <= 1e-9, || format!("1/perplexity deviation {worst:e}"))?;
    let two = token_prob_confidence(&completion(vec![-0.5, -1.5]))
        .map_err(|e| e.to_string())?
        .value;
    ensure((two - 0.367879).abs() <= 1e-6, || format!("two-token value {two}"))?;
    Ok(format!("max deviation {worst:e}, two-token value {two:.6}"))
}

fn single_bucket() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let set = random_set(&mut rng, 30);
        let n = set.len() as f64;
        let avg = set.iter().map(|r| r.1).sum::<f64>() / n;
        let acc = set.iter().filter(|r| r.2).count() as f64 / n;
        let e = ece(&as_scored(&set), 1, true).map_err(|e| e.to_string())?;
        ensure(e == (avg - acc).abs(), || {
            format!("case {case}: ece {e} vs {}", (avg - acc).abs())
        })?;
    }
    Ok("100 sets".into())
}

const FRAGMENTS: [&str; 5] = [
    "Let's think step by step:",
    "Generate some knowledge about the question:",
    "Are follow-up questions needed?",
    "Confidence (0-1):",
    "Is the possible answer: (A) True (B) False",
];

fn goldens() -> Check {
    let mismatched = common::check_goldens();
    ensure(mismatched.is_empty(), || format!("differ from goldens: {mismatched:?}"))?;
    let mut all = String::new();
    for (name, _) in common::render_goldens() {
        let path = common::goldens_dir().join(&name);
        all.push_str(&std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?);
    }
    let missing: Vec<_> = FRAGMENTS.iter().filter(|f| !all.contains(*f)).collect();
    ensure(missing.is_empty(), || format!("fragments missing: {missing:?}"))?;
    Ok(format!("{} renders match", common::render_goldens().len()))
}

struct Counting {
    inner: MockBackend,
    calls: AtomicUsize,
}

impl Backend for Counting {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

fn count_calls(id: StrategyId, script: MockScript) -> Result<usize, String> {
    let item = QAItem {
        id: "q".into(),
        question: "Is ice cold?".into(),
        gold_answers: vec!["True".into()],
        answer_kind: AnswerKind::Boolean,
        gold_facts: None,
        external_knowledge: None,
        original_question: None,
    };
    let backend = Counting {
        inner: MockBackend::from_script(script).map_err(|e| e.to_string())?,
        calls: AtomicUsize::new(0),
    };
    let p = plan(id, &item, &StrategyConfig::default()).map_err(|e| e.to_string())?;
    execute(&p, &item, &backend, &ExecutionConfig::default()).map_err(|e| e.to_string())?;
    Ok(backend.calls.load(Ordering::SeqCst))
}

fn call_counts() -> Check {
    let lenient = || MockScript {
        fallback: Fallback::Fixed(" True".into()),
        entries: Vec::new(),
    };
    let mut seen = Vec::new();
    for (id, want) in [
        (StrategyId::Standard, 1),
        (StrategyId::Cot, 2),
        (StrategyId::FarFinal, 4),
        (StrategyId::SelfConsistency, 10),
    ] {
        let got = count_calls(id, lenient())?;
        ensure(got == want, || format!("{id}: {got} calls, want {want}"))?;
        seen.push(format!("{id} {got}"));
    }
    let no_followups = MockScript {
        fallback: Fallback::Fixed(" True".into()),
        entries: vec![ScriptEntry::prefix(
            "Question: Is ice cold?\nAre follow-up questions needed?",
            vec![ScriptedResponse::text(" No.")],
        )],
    };
    let got = count_calls(StrategyId::SelfAsk, no_followups)?;
    ensure(got == 2, || format!("self_ask with No: {got} calls"))?;
    seen.push(format!("self_ask {got}"));
    Ok(seen.join(", "))
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    let mut outputs = Vec::new();
    for (dir, workers) in dirs.iter().zip([1, 8]) {
        let mut config = common::e2e_config();
        config.out_dir = dir.path().to_path_buf();
        config.worker_count = workers;
        outputs.push(run_eval(&config).map_err(|e| e.to_string())?);
    }
    let read = |d: &Path| std::fs::read(d.join(REPORT_FILE)).map_err(|e| e.to_string());
    ensure(read(dirs[0].path())? == read(dirs[1].path())?, || {
        "report.json differs between 1 and 8 workers".into()
    })?;

    let expected: serde_json::Value = read_json(&common::fixture("e2e/expected.json")).map_err(|e| e.to_string())?;
    let tol = expected["tolerance"].as_f64().ok_or("expected.json lacks tolerance")?;
    let dataset = &outputs[0].report.datasets[0];
    for row in &dataset.summaries {
        let want = &expected["strategies"][row.strategy.as_str()];
        let s = &row.summary;
        for (key, got) in [("ece", s.ece.unwrap_or(f64::NAN)), ("macro_ce", s.macro_ce)] {
            let w = want[key]
                .as_f64()
                .ok_or_else(|| format!("expected.json lacks {}.{key}", row.strategy))?;
            ensure((got - w).abs() <= tol, || {
                format!("{} {key}: {got} vs {w}", row.strategy)
            })?;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{} strategies, identical reports", dataset.summaries.len()))
}

fn concern_detector() -> Check {
    let path = common::fixture("concern_fixture.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let lexicon = ConcernLexicon::default();
    let (mut tp, mut fp, mut fneg, mut cases) = (0, 0, 0, 0);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let case: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let sample = case["text"].as_str().ok_or("case without text")?;
        let want = case["concern"].as_bool().ok_or("case without label")?;
        let (got, _) = detect_concern(sample, &lexicon);
        match (got, want) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        cases += 1;
    }
    ensure(cases == 20, || format!("{cases} cases"))?;
    let precision = tp as f64 / (tp + fp).max(1) as f64;
    let recall = tp as f64 / (tp + fneg).max(1) as f64;
    ensure(precision == 1.0 && recall == 1.0 && tp > 0, || {
        format!("precision {precision}, recall {recall}")
    })?;
    Ok(format!("precision {precision}, recall {recall} over {cases} cases"))
}

fn verbalized_parser() -> Check {
    let config = ExtractionConfig::default();
    let plain = parse_verbalized("0.85", &config).map_err(|e| e.to_string())?;
    ensure(plain.value == 0.85 && !plain.clamped, || {
        format!("0.85 parsed as {plain:?}")
    })?;
    let high = parse_verbalized("1.2", &config).map_err(|e| e.to_string())?;
    ensure(high.value == 1.0 && high.raw_value == 1.2 && high.clamped, || {
        format!("1.2 parsed as {high:?}")
    })?;
    ensure(plain.method == ExtractionMethod::Verbalized, || "wrong method".into())?;
    match parse_verbalized("very sure", &config) {
        Err(ConfidenceError::Unparseable { .. }) => {}
        other => return Err(format!("non-numeric gave {other:?}")),
    }
    Ok("0.85, clamped 1.2, typed error".into())
}

fn answers(words: &[&str]) -> Vec<ExtractedAnswer> {
    words
        .iter()
        .map(|w| ExtractedAnswer::new(w, AnswerKind::FreeForm))
        .collect()
}

fn majority() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for shuffle in 0..50 {
        // The first sample stays fixed, so "paris" is always seen first.
        let mut rest: Vec<&str> = [vec!["paris"; 4], vec!["london"; 5]].concat();
        rest.shuffle(&mut rng);
        let words: Vec<&str> = std::iter::once("paris").chain(rest).collect();
        let vote = majority_vote(&answers(&words)).ok_or("empty vote")?;
        ensure(vote.winner == "paris", || {
            format!("shuffle {shuffle}: {words:?} chose {}", vote.winner)
        })?;
    }
    let mut words: Vec<&str> = [vec!["alpha"; 4], vec!["beta"; 3], vec!["gamma"; 3]].concat();
    words.shuffle(&mut rng);
    let vote = majority_vote(&answers(&words)).ok_or("empty vote")?;
    ensure(vote.winner == "alpha", || format!("4/3/3 chose {}", vote.winner))?;
    Ok("50 tie shuffles, 4/3/3".into())
}

fn records(correct: usize, n: usize) -> Vec<EvalRecord> {
    (0..n)
        .map(|i| EvalRecord {
            item_id: format!("s{i:03}"),
            dataset: String::new(),
            strategy_id: "standard".into(),
            correct: i < correct,
            confidences: Default::default(),
            concern: true,
        })
        .collect()
}

fn augmentation() -> Check {
    let before = records(25, 100);
    let after = records(42, 100);
    let ids: Vec<String> = before.iter().map(|r| r.item_id.clone()).collect();
    let up = improvement(&before, &after, &ids, SelectionMode::ConcernTriggered).map_err(|e| e.to_string())?;
    let rel = up.relative_improvement.ok_or("no relative improvement")?;
    ensure((rel - 0.68).abs() <= 1e-12, || format!("0.25 to 0.42 gave {rel}"))?;
    let same = improvement(&before, &before, &ids, SelectionMode::ConcernTriggered).map_err(|e| e.to_string())?;
    ensure(same.relative_improvement == Some(0.0), || {
        format!("identical sets gave {:?}", same.relative_improvement)
    })?;
    Ok(format!("{:+.0}% and 0%", rel * 100.0))
}

fn trapezoid(csv: &str) -> Result<f64, String> {
    let mut points = Vec::new();
    for line in csv.lines().skip(1) {
        let (x, y) = line.split_once(',').ok_or_else(|| format!("bad row {line:?}"))?;
        points.push((
            x.parse::<f64>().map_err(|e| e.to_string())?,
            y.parse::<f64>().map_err(|e| e.to_string())?,
        ));
    }
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

fn kde_normalization() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = common::e2e_config();
    config.out_dir = dir.path().to_path_buf();
    let out = run_eval(&config).map_err(|e| e.to_string())?;
    let mut checked = 0;
    let mut worst = 0.0f64;
    for entry in out.report.datasets.iter().flat_map(|d| &d.curves) {
        if !entry.file.ends_with("__kde.csv") {
            continue;
        }
        let path = out.out_dir.join(&entry.file);
        let integral = trapezoid(&std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?)?;
        ensure((integral - 1.0).abs() <= 1e-3, || {
            format!("{}: integral {integral}", entry.file)
        })?;
        worst = worst.max((integral - 1.0).abs());
        checked += 1;
    }
    ensure(checked > 0, || "no KDE curves emitted".into())?;
    // Degenerate inputs too: a single value, all values equal, both extremes.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut sets = vec![vec![0.5], vec![1.0; 7], vec![0.0, 1.0], vec![0.0; 3]];
    sets.extend((0..50).map(|_| random_set(&mut rng, 30).into_iter().map(|r| r.1).collect()));
    for values in &sets {
        let curve = distribution_curve(values, CurveKind::Kde, 512).map_err(|e| e.to_string())?;
        let integral = trapezoid(&curve_csv(&curve))?;
        ensure((integral - 1.0).abs() <= 1e-3, || {
            format!("{values:?}: integral {integral}")
        })?;
        worst = worst.max((integral - 1.0).abs());
    }
    Ok(format!(
        "{checked} emitted and {} synthetic curves, max deviation {worst:e}",
        sets.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("toy example", toy_example),
        ("metric oracles", metric_oracles),
        ("token probability", token_probability),
        ("single bucket collapse", single_bucket),
        ("golden prompts", goldens),
        ("call counts", call_counts),
        ("deterministic end to end", end_to_end),
        ("concern detector", concern_detector),
        ("verbalized parser", verbalized_parser),
        ("majority vote", majority),
        ("augmentation accounting", augmentation),
        ("kde normalization", kde_normalization),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
