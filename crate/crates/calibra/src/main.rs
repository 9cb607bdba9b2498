use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calibra::config::{BackendConfig, BackendKind, RunConfig};
use calibra::core::concern::SelectionMode;
use calibra::core::confidence::ExtractionMethod;
use calibra::core::metrics::CalibrationConfig;
use calibra::core::strategy::StrategyId;
use calibra::error::{Error, Result};
use calibra::report::{metrics_csv, read_records};
use calibra::run::score;
use calibra::sweep::SweepAxis;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "calibra",
    version,
    about = "Confidence calibration experiments for LLM question answering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy over the dataset and write a report.
    Run(RunArgs),
    /// Recompute metrics from a records.jsonl file.
    Metrics {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 10)]
        buckets: usize,
        #[arg(long)]
        no_clamp: bool,
    },
    /// Re-run hard examples of a finished run with external knowledge.
    Augment {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
    },
    /// Repeat a run for each value of one setting.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Concern,
    Random,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "strategy")]
    strategies: Vec<StrategyId>,
    #[arg(long = "extract")]
    extractions: Vec<ExtractionMethod>,
    #[arg(long, requires = "model", conflicts_with = "mock_script")]
    backend_url: Option<String>,
    #[arg(long, requires = "backend_url")]
    model: Option<String>,
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    concern_lexicon: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn absolute(path: PathBuf) -> PathBuf {
    std::path::absolute(&path).unwrap_or(path)
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        if !self.strategies.is_empty() {
            config.strategy_ids = self.strategies.clone();
        }
        if !self.extractions.is_empty() {
            config.extraction_method_ids = self.extractions.clone();
        }
        if let (Some(url), Some(model)) = (&self.backend_url, &self.model) {
            config.backend = BackendConfig {
                kind: BackendKind::Http,
                base_url: Some(url.clone()),
                model: Some(model.clone()),
                script_path: None,
                requests_per_second: config.backend.requests_per_second,
            };
        }
        if let Some(script) = &self.mock_script {
            config.backend = BackendConfig {
                kind: BackendKind::Mock,
                base_url: None,
                model: None,
                script_path: Some(absolute(script.clone())),
                requests_per_second: None,
            };
        }
        if let Some(b) = self.buckets {
            config.num_buckets = b;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(c) = &self.cache {
            config.cache_path = Some(absolute(c.clone()));
        }
        if let Some(o) = &self.out {
            config.out_dir = absolute(o.clone());
        }
        if self.no_clamp {
            config.clamp_confidences = false;
        }
        if let Some(l) = &self.concern_lexicon {
            config.concern_lexicon = Some(absolute(l.clone()));
        }
        if let Some(w) = self.workers {
            config.worker_count = w;
        }
        config.validate()?;
        Ok(config)
    }
}

fn metrics(records: &Path, buckets: usize, clamp: bool) -> Result<String> {
    let records = read_records(records)?;
    if records.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    let mut datasets: Vec<(String, usize)> = Vec::new();
    let mut strategies: Vec<StrategyId> = Vec::new();
    let mut extractions: Vec<ExtractionMethod> = Vec::new();
    for r in &records {
        if !datasets.iter().any(|(d, _)| *d == r.dataset) {
            datasets.push((r.dataset.clone(), 0));
        }
        let s: StrategyId = r.strategy_id.parse()?;
        if !strategies.contains(&s) {
            strategies.push(s);
        }
        for m in r.confidences.keys() {
            if !extractions.contains(m) {
                extractions.push(*m);
            }
        }
    }
    for (name, n) in &mut datasets {
        let mut ids: Vec<&str> = records
            .iter()
            .filter(|r| r.dataset == *name)
            .map(|r| r.item_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        *n = ids.len();
    }
    let report = score(
        serde_json::json!({ "kde_points": 512 }),
        String::new(),
        &datasets,
        &strategies,
        &extractions,
        CalibrationConfig {
            num_buckets: buckets,
            clamp,
        },
        512,
        records,
    )?;
    Ok(metrics_csv(&report))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.config()?;
            let out = calibra::run::run_eval(&config)?;
            print!("{}", metrics_csv(&out.report));
            log::info!("report written to {}", out.out_dir.display());
        }
        Command::Metrics {
            records,
            buckets,
            no_clamp,
        } => print!("{}", metrics(&records, buckets, !no_clamp)?),
        Command::Augment {
            report,
            mode,
            seed,
            fraction,
        } => {
            let mode = match mode {
                Mode::Concern => SelectionMode::ConcernTriggered,
                Mode::Random => SelectionMode::RandomControl,
            };
            let entries = calibra::augment::augment(&report, mode, fraction, seed)?;
            println!("dataset,strategy,selected,accuracy_before,accuracy_after,relative_improvement");
            for e in entries {
                let (before, after, rel) = e.outcome.map_or((String::new(), String::new(), String::new()), |o| {
                    (
                        o.accuracy_before.to_string(),
                        o.accuracy_after.to_string(),
                        o.relative_improvement.map(|r| r.to_string()).unwrap_or_default(),
                    )
                });
                println!(
                    "{},{},{},{before},{after},{rel}",
                    e.dataset,
                    e.strategy,
                    e.selection.ids.len()
                );
            }
        }
        Command::Sweep { run, axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let config = run.config()?;
            println!("{},backend_calls,prompt_chars,out_dir", axis.as_str());
            for (point, _) in calibra::sweep::sweep(&config, axis, &values)? {
                println!(
                    "{},{},{},{}",
                    point.value,
                    point.backend_calls,
                    point.prompt_chars,
                    point.out_dir.display()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
