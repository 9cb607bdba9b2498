//! Knowledge augmentation of hard examples chosen from a finished run.

use std::path::Path;

use calibra_core::concern::{
    augment_with_knowledge, improvement, select_hard, AugmentationOutcome, HardSelection, SelectionMode,
};
use calibra_core::qa::EvalRecord;
use calibra_core::strategy::StrategyId;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::report::{load_report, read_json, write_json, META_FILE};
use crate::run::{build_backend, load_datasets, load_lexicon, run_item, RunMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentEntry {
    pub dataset: String,
    pub strategy: StrategyId,
    pub selection: HardSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<AugmentationOutcome>,
}

/// Rebuilds the configuration a report was produced with.
pub fn config_of_report(dir: &Path) -> Result<RunConfig> {
    let report = load_report(dir)?;
    let meta: RunMeta = read_json(&dir.join(META_FILE))?;
    let mut config: RunConfig =
        serde_json::from_value(report.config).map_err(|e| Error::Config(format!("report config: {e}")))?;
    config.base_dir = meta.config_dir;
    config.cache_path = meta.cache_path;
    config.out_dir = dir.to_path_buf();
    Ok(config)
}

/// Selects hard examples per dataset and strategy, re-runs them with their
/// external knowledge, and writes `augment_<mode>.json` into `dir`.
pub fn augment(dir: &Path, mode: SelectionMode, fraction: f64, seed: u64) -> Result<Vec<AugmentEntry>> {
    let report = load_report(dir)?;
    let config = config_of_report(dir)?;
    let datasets = load_datasets(&config)?;
    let lexicon = load_lexicon(&config)?;
    let backend = build_backend(&config)?;
    let strategy_config = config.strategy_config();
    let execution = config.execution_config();

    let mut entries = Vec::new();
    for dataset in &datasets {
        for &strategy in &report.strategies {
            let before: Vec<EvalRecord> = report
                .records
                .iter()
                .filter(|r| r.dataset == dataset.name && r.strategy_id == strategy.as_str())
                .cloned()
                .collect();
            let selection = select_hard(&before, mode, fraction, seed)?;
            if let Some(w) = &selection.warning {
                log::warn!("{}/{strategy}: {w}", dataset.name);
            }
            let outcome = if selection.ids.is_empty() {
                None
            } else {
                let mut after = Vec::with_capacity(selection.ids.len());
                for id in &selection.ids {
                    let item = dataset
                        .items
                        .iter()
                        .find(|i| &i.id == id)
                        .ok_or_else(|| Error::Data(format!("item {id:?} is not in {}", dataset.name)))?;
                    let augmented = augment_with_knowledge(item)?;
                    let (record, _) = run_item(
                        &dataset.name,
                        &augmented,
                        strategy,
                        backend.as_ref(),
                        &strategy_config,
                        &execution,
                        &lexicon,
                    )?;
                    after.push(record);
                }
                Some(improvement(&before, &after, &selection.ids, mode)?)
            };
            entries.push(AugmentEntry {
                dataset: dataset.name.clone(),
                strategy,
                selection,
                outcome,
            });
        }
    }
    let name = match mode {
        SelectionMode::ConcernTriggered => "augment_concern.json",
        SelectionMode::RandomControl => "augment_random.json",
    };
    write_json(&dir.join(name), &entries)?;
    Ok(entries)
}
