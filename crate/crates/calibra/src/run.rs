//! Running every item under every strategy and scoring the results.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use calibra_core::backend::Backend;
use calibra_core::concern::{detect_concern, parse_lexicon, ConcernLexicon};
use calibra_core::confidence::{ConfidenceResult, ExtractionMethod};
use calibra_core::metrics::{
    distribution_curve, scored, summarize, wins_table, CalibrationConfig, CalibrationSummary, CurveKind,
    DistributionCurve, ErrorMatrix,
};
use calibra_core::mock::{MockBackend, MockScript};
use calibra_core::qa::{exact_match, EvalRecord, QAItem};
use calibra_core::strategy::{execute, plan, ExecutionConfig, StrategyConfig, StrategyId, Transcript};
use serde::{Deserialize, Serialize};

use crate::cache::{CachedBackend, ResponseCache};
use crate::config::{BackendKind, RunConfig};
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::http::HttpBackend;

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const PARTIAL_TRANSCRIPTS_FILE: &str = "transcripts.partial.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub items: Vec<QAItem>,
}

pub fn load_datasets(config: &RunConfig) -> Result<Vec<Dataset>> {
    let mut datasets = Vec::new();
    for path in config.dataset_path.paths() {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        if datasets.iter().any(|d: &Dataset| d.name == name) {
            return Err(Error::Config(format!("two datasets are named {name:?}")));
        }
        let items = load_dataset(&config.resolve(path))?;
        datasets.push(Dataset { name, items });
    }
    Ok(datasets)
}

pub fn load_lexicon(config: &RunConfig) -> Result<ConcernLexicon> {
    match &config.concern_lexicon {
        None => Ok(ConcernLexicon::default()),
        Some(path) => {
            let path = config.resolve(path);
            let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
            let version = path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(parse_lexicon(version, &text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
        }
    }
}

pub fn load_mock(path: &Path) -> Result<MockBackend> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let script: MockScript =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(MockBackend::from_script(script)?)
}

/// The configured backend, wrapped in the response cache when one is set.
pub fn build_backend(config: &RunConfig) -> Result<Arc<dyn Backend>> {
    let inner: Arc<dyn Backend> = match config.backend.kind {
        BackendKind::Mock => {
            let path = config
                .backend
                .script_path
                .as_deref()
                .ok_or_else(|| Error::Config("mock backend needs script_path".into()))?;
            Arc::new(load_mock(&config.resolve(path))?)
        }
        BackendKind::Http => {
            let (Some(url), Some(model)) = (&config.backend.base_url, &config.backend.model) else {
                return Err(Error::Config("http backend needs base_url and model".into()));
            };
            let mut http = HttpBackend::new(url, model)?;
            if let Some(rps) = config.backend.requests_per_second {
                http = http.with_rate_limit(rps);
            }
            Arc::new(http)
        }
    };
    match &config.cache_path {
        None => Ok(inner),
        Some(path) => {
            let cache = Arc::new(ResponseCache::open(&config.resolve(path))?);
            Ok(Arc::new(CachedBackend::new(inner, cache)))
        }
    }
}

/// One line of the transcripts file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub dataset: String,
    #[serde(flatten)]
    pub transcript: Transcript,
    pub correct: bool,
    pub confidences: Vec<ConfidenceResult>,
    pub concern_matches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: StrategyId,
    pub extraction: ExtractionMethod,
    pub summary: CalibrationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub strategy: StrategyId,
    pub extraction: ExtractionMethod,
    pub kind: CurveKind,
    /// Relative to the report directory.
    pub file: String,
    pub bandwidth: f64,
    pub bandwidth_fallback: bool,
    pub mass_outside_unit: f64,
    pub integral: f64,
    #[serde(skip)]
    pub curve: Option<DistributionCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub n_items: usize,
    pub summaries: Vec<SummaryRow>,
    pub accuracy: BTreeMap<StrategyId, f64>,
    pub concern_rate: BTreeMap<StrategyId, f64>,
    /// Win counts per extraction method, keyed by error metric.
    pub wins: BTreeMap<String, BTreeMap<String, usize>>,
    pub curves: Vec<CurveEntry>,
}

/// Unweighted mean over datasets of one `(strategy, extraction)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    pub strategy: StrategyId,
    pub extraction: ExtractionMethod,
    pub n: usize,
    pub accuracy: f64,
    pub avg_confidence: f64,
    pub gap: f64,
    pub ece: Option<f64>,
    pub ice_pos: Option<f64>,
    pub ice_neg: Option<f64>,
    pub macro_ce: f64,
    pub concern_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub backend: String,
    pub strategies: Vec<StrategyId>,
    pub extractions: Vec<ExtractionMethod>,
    pub num_buckets: usize,
    pub clamp: bool,
    pub datasets: Vec<DatasetReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_average: Option<Vec<MacroRow>>,
    pub records: Vec<EvalRecord>,
    pub transcripts: String,
}

/// Non-reproducible facts about a run, kept out of the report body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub started_at: String,
    pub finished_at: String,
    pub worker_count: usize,
    pub backend_calls: usize,
    pub config_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
}

struct Unit<'a> {
    dataset: &'a str,
    item: &'a QAItem,
    strategy: StrategyId,
}

/// Runs one item under one strategy.
pub fn run_item(
    dataset: &str,
    item: &QAItem,
    strategy: StrategyId,
    backend: &dyn Backend,
    strategy_config: &StrategyConfig,
    execution: &ExecutionConfig,
    lexicon: &ConcernLexicon,
) -> Result<(EvalRecord, TranscriptLine)> {
    let wrap = |source| Error::Item {
        item_id: item.id.clone(),
        strategy,
        source,
    };
    let p = plan(strategy, item, strategy_config).map_err(wrap)?;
    let run = execute(&p, item, backend, execution).map_err(wrap)?;
    let answer = &run.transcript.final_answer;
    let correct = exact_match(answer, item);
    let (concern, concern_matches) = detect_concern(&answer.raw_text, lexicon);
    let record = EvalRecord {
        item_id: item.id.clone(),
        dataset: dataset.to_string(),
        strategy_id: strategy.as_str().to_string(),
        correct,
        confidences: run.confidences.iter().map(|c| (c.method, c.value)).collect(),
        concern,
    };
    let line = TranscriptLine {
        dataset: dataset.to_string(),
        transcript: run.transcript,
        correct,
        confidences: run.confidences,
        concern_matches,
    };
    Ok((record, line))
}

pub struct Generation {
    pub records: Vec<EvalRecord>,
    pub transcripts: Vec<TranscriptLine>,
}

/// Runs all `(item, strategy)` pairs on a bounded pool of scoped threads.
/// Each finished transcript is appended to `partial` (when given) as soon
/// as it lands; results come back in dataset, item, strategy order.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    datasets: &[Dataset],
    strategies: &[StrategyId],
    backend: &dyn Backend,
    strategy_config: &StrategyConfig,
    execution: &ExecutionConfig,
    lexicon: &ConcernLexicon,
    workers: usize,
    partial: Option<&Path>,
) -> Result<Generation> {
    let units: Vec<Unit<'_>> = datasets
        .iter()
        .flat_map(|d| {
            d.items.iter().flat_map(move |item| {
                strategies.iter().map(move |&strategy| Unit {
                    dataset: &d.name,
                    item,
                    strategy,
                })
            })
        })
        .collect();
    let partial_file = match partial {
        Some(path) => Some(Mutex::new(BufWriter::new(File::create(path).map_err(Error::io(path))?))),
        None => None,
    };
    let slots: Vec<Mutex<Option<(EvalRecord, TranscriptLine)>>> = units.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<(usize, Error)>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(units.len().max(1)) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(unit) = units.get(index) else { break };
                match run_item(
                    unit.dataset,
                    unit.item,
                    unit.strategy,
                    backend,
                    strategy_config,
                    execution,
                    lexicon,
                ) {
                    Ok(result) => {
                        if let (Some(file), Some(path)) = (&partial_file, partial) {
                            let line = serde_json::to_string(&result.1).expect("transcripts serialize");
                            let mut file = file.lock().expect("transcript lock");
                            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                                log::error!("{}: {e}", path.display());
                            }
                        }
                        *slots[index].lock().expect("slot lock") = Some(result);
                    }
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        let mut slot = failure.lock().expect("failure lock");
                        // Keep the earliest unit's error so failures are reproducible.
                        if slot.as_ref().is_none_or(|(i, _)| index < *i) {
                            *slot = Some((index, e));
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some((_, e)) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let (records, transcripts) = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every unit ran"))
        .unzip();
    Ok(Generation { records, transcripts })
}

fn curve_file(dataset: &str, strategy: StrategyId, method: ExtractionMethod, kind: CurveKind) -> String {
    let kind = match kind {
        CurveKind::Kde => "kde",
        CurveKind::Histogram => "hist",
    };
    format!("curves/{dataset}__{strategy}__{method}__{kind}.csv")
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_opt(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    values.into_iter().collect::<Option<Vec<f64>>>().map(mean)
}

/// Computes every metric of a report from the records alone.
#[allow(clippy::too_many_arguments)]
pub fn score(
    config_snapshot: serde_json::Value,
    backend: String,
    datasets: &[(String, usize)],
    strategies: &[StrategyId],
    extractions: &[ExtractionMethod],
    metrics: CalibrationConfig,
    kde_points: usize,
    records: Vec<EvalRecord>,
) -> Result<RunReport> {
    let mut dataset_reports = Vec::new();
    for (name, n_items) in datasets {
        let mut summaries = Vec::new();
        let mut accuracy = BTreeMap::new();
        let mut concern_rate = BTreeMap::new();
        let mut curves = Vec::new();
        for &strategy in strategies {
            let subset: Vec<EvalRecord> = records
                .iter()
                .filter(|r| &r.dataset == name && r.strategy_id == strategy.as_str())
                .cloned()
                .collect();
            if subset.is_empty() {
                return Err(Error::Data(format!("no records for {name}/{strategy}")));
            }
            accuracy.insert(strategy, mean(subset.iter().map(|r| f64::from(u8::from(r.correct)))));
            concern_rate.insert(
                strategy,
                calibra_core::concern::concern_rate(subset.iter().map(|r| r.concern))?,
            );
            for &method in extractions {
                let entries = scored(&subset, method)?;
                summaries.push(SummaryRow {
                    strategy,
                    extraction: method,
                    summary: summarize(&entries, &metrics)?,
                });
                let values: Vec<f64> = entries.iter().map(|e| e.confidence).collect();
                for (kind, size) in [
                    (CurveKind::Kde, kde_points),
                    (CurveKind::Histogram, metrics.num_buckets.max(2)),
                ] {
                    let curve = distribution_curve(&values, kind, size)?;
                    curves.push(CurveEntry {
                        strategy,
                        extraction: method,
                        kind,
                        file: curve_file(name, strategy, method, kind),
                        bandwidth: curve.bandwidth,
                        bandwidth_fallback: curve.bandwidth_fallback,
                        mass_outside_unit: curve.mass_outside_unit,
                        integral: curve.integral(),
                        curve: Some(curve),
                    });
                }
            }
        }
        let mut wins = BTreeMap::new();
        let columns: Vec<String> = extractions.iter().map(|m| m.as_str().to_string()).collect();
        for metric in ["ece", "macro_ce"] {
            let rows: Option<Vec<(String, Vec<f64>)>> = strategies
                .iter()
                .map(|s| {
                    let errors = summaries
                        .iter()
                        .filter(|row| row.strategy == *s)
                        .map(|row| match metric {
                            "ece" => row.summary.ece,
                            _ => Some(row.summary.macro_ce),
                        })
                        .collect::<Option<Vec<f64>>>()?;
                    Some((s.as_str().to_string(), errors))
                })
                .collect();
            if let Some(rows) = rows {
                let matrix = ErrorMatrix {
                    columns: columns.clone(),
                    rows,
                };
                wins.insert(metric.to_string(), wins_table(&matrix)?);
            }
        }
        dataset_reports.push(DatasetReport {
            name: name.clone(),
            n_items: *n_items,
            summaries,
            accuracy,
            concern_rate,
            wins,
            curves,
        });
    }

    let macro_average = (dataset_reports.len() >= 2).then(|| {
        let mut rows = Vec::new();
        for &strategy in strategies {
            for &extraction in extractions {
                let cells: Vec<(&CalibrationSummary, f64)> = dataset_reports
                    .iter()
                    .map(|d| {
                        let row = d
                            .summaries
                            .iter()
                            .find(|r| r.strategy == strategy && r.extraction == extraction)
                            .expect("every cell summarized");
                        (&row.summary, d.concern_rate[&strategy])
                    })
                    .collect();
                rows.push(MacroRow {
                    strategy,
                    extraction,
                    n: cells.iter().map(|(s, _)| s.n).sum(),
                    accuracy: mean(cells.iter().map(|(s, _)| s.accuracy)),
                    avg_confidence: mean(cells.iter().map(|(s, _)| s.avg_confidence)),
                    gap: mean(cells.iter().map(|(s, _)| s.gap)),
                    ece: mean_opt(cells.iter().map(|(s, _)| s.ece)),
                    ice_pos: mean_opt(cells.iter().map(|(s, _)| s.ice_pos)),
                    ice_neg: mean_opt(cells.iter().map(|(s, _)| s.ice_neg)),
                    macro_ce: mean(cells.iter().map(|(s, _)| s.macro_ce)),
                    concern_rate: mean(cells.iter().map(|(_, c)| *c)),
                });
            }
        }
        rows
    });

    Ok(RunReport {
        config: config_snapshot,
        backend,
        strategies: strategies.to_vec(),
        extractions: extractions.to_vec(),
        num_buckets: metrics.num_buckets,
        clamp: metrics.clamp,
        datasets: dataset_reports,
        macro_average,
        records,
        transcripts: TRANSCRIPTS_FILE.to_string(),
    })
}

/// Where a run writes, and what it produced.
pub struct RunOutput {
    pub report: RunReport,
    pub transcripts: Vec<TranscriptLine>,
    pub out_dir: PathBuf,
}

/// Runs a configuration end to end with an explicit backend and writes the
/// report files into the configured output directory.
pub fn run_eval_with(config: &RunConfig, backend: &dyn Backend) -> Result<RunOutput> {
    config.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let datasets = load_datasets(config)?;
    let lexicon = load_lexicon(config)?;
    let out_dir = config.resolve(&config.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
    let partial = out_dir.join(PARTIAL_TRANSCRIPTS_FILE);

    let generation = generate(
        &datasets,
        &config.strategy_ids,
        backend,
        &config.strategy_config(),
        &config.execution_config(),
        &lexicon,
        config.worker_count,
        Some(&partial),
    )?;
    let backend_calls = generation
        .transcripts
        .iter()
        .map(|t| t.transcript.backend_calls())
        .sum();

    let report = score(
        config.snapshot(),
        backend.name(),
        &datasets
            .iter()
            .map(|d| (d.name.clone(), d.items.len()))
            .collect::<Vec<_>>(),
        &config.strategy_ids,
        &config.extraction_method_ids,
        CalibrationConfig {
            num_buckets: config.num_buckets,
            clamp: config.clamp_confidences,
        },
        config.kde_points,
        generation.records,
    )?;

    crate::report::write_transcripts(&out_dir.join(TRANSCRIPTS_FILE), &generation.transcripts)?;
    std::fs::remove_file(&partial).map_err(Error::io(&partial))?;
    crate::report::emit_report(&report, &out_dir)?;
    let meta = RunMeta {
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        worker_count: config.worker_count,
        backend_calls,
        config_dir: config.base_dir.clone(),
        cache_path: config.cache_path.as_ref().map(|p| config.resolve(p)),
    };
    crate::report::write_json(&out_dir.join(crate::report::META_FILE), &meta)?;
    Ok(RunOutput {
        report,
        transcripts: generation.transcripts,
        out_dir,
    })
}

/// Runs a configuration with the backend it names.
pub fn run_eval(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let backend = build_backend(config)?;
    run_eval_with(config, backend.as_ref())
}
