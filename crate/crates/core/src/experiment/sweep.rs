//! Resource sweeps: train and evaluate one model per grid cell of
//! (TTS phrases, TTS utterances per phrase, real utterances).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{mix, read_manifest, sample_records, sample_subset, Manifest};
use crate::exec::Exec;
use crate::Result;

use super::report::SweepRow;
use super::{create_dir, create_file, run_training, write_json, EvalData, ExperimentError, FeatureStore, TrainConfig, TrainData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Shared training settings; its manifest fields are ignored.
    pub train: TrainConfig,
    pub tts_manifest: Option<PathBuf>,
    pub real_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub n_phrases: Vec<usize>,
    pub per_phrase: Vec<usize>,
    pub real_count: Vec<usize>,
    /// Seed for subset sampling, shared by all cells.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            tts_manifest: None,
            real_manifest: None,
            eval_manifest: None,
            n_phrases: vec![0],
            per_phrase: vec![10],
            real_count: vec![0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SweepCell {
    pub n_phrases: usize,
    pub per_phrase: usize,
    pub real_count: usize,
}

impl SweepConfig {
    /// Grid cells in row-major order (phrases, per-phrase, real). Cells
    /// without TTS phrases ignore `per_phrase` and appear once.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &n in &self.n_phrases {
            for &pp in &self.per_phrase {
                for &rc in &self.real_count {
                    let cell = SweepCell {
                        n_phrases: n,
                        per_phrase: if n == 0 { 0 } else { pp },
                        real_count: rc,
                    };
                    if !cells.contains(&cell) {
                        cells.push(cell);
                    }
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> std::result::Result<(), ExperimentError> {
        if self.n_phrases.is_empty() || self.per_phrase.is_empty() || self.real_count.is_empty() {
            return Err(ExperimentError::Config("sweep grid has an empty axis".into()));
        }
        if self.eval_manifest.is_none() {
            return Err(ExperimentError::Config("sweep needs eval_manifest".into()));
        }
        if self.n_phrases.iter().any(|&n| n > 0) && self.tts_manifest.is_none() {
            return Err(ExperimentError::Config("n_phrases > 0 needs tts_manifest".into()));
        }
        if self.real_count.iter().any(|&n| n > 0) && self.real_manifest.is_none() {
            return Err(ExperimentError::Config("real_count > 0 needs real_manifest".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }
}

fn cell_manifest(cell: &SweepCell, tts: &Manifest, real: &Manifest, seed: u64) -> Result<Manifest> {
    let tts_part = if cell.n_phrases > 0 {
        sample_subset(tts, cell.n_phrases, cell.per_phrase, seed)?
    } else {
        Manifest::default()
    };
    let real_part = if cell.real_count > 0 {
        sample_records(real, cell.real_count, seed)?
    } else {
        Manifest::default()
    };
    if tts_part.is_empty() && real_part.is_empty() {
        return Err(ExperimentError::Config("cell has no training data".into()).into());
    }
    Ok(mix(&real_part, &tts_part)?)
}

fn run_cell(
    cell: &SweepCell,
    config: &SweepConfig,
    manifests: (&Manifest, &Manifest),
    store: &mut FeatureStore,
    eval: &EvalData,
    run_dir: &Path,
    exec: Exec,
) -> Result<(f64, f64)> {
    let train_manifest = cell_manifest(cell, manifests.0, manifests.1, config.seed)?;
    store.add_manifest(&train_manifest, config.train.cache_dir.as_deref(), exec)?;
    let data = TrainData::new(store.lookup(&train_manifest)?, &train_manifest.phrases());
    crate::data::write_manifest(&train_manifest, &run_dir.join("train_manifest.jsonl"))?;
    let (_, report) = run_training(&config.train, &data, Some(eval), run_dir, exec)?;
    let report = report.expect("eval data given");
    Ok((report.mean_eer, report.mean_auc))
}

/// Runs every cell, recording per-cell failures without stopping, and
/// writes `sweep.csv` (plus each cell's run directory) into `out`.
pub fn run_sweep(config: &SweepConfig, out: &Path, exec: Exec) -> Result<SweepOutcome> {
    config.validate()?;
    create_dir(out)?;
    write_json(&out.join("sweep_config.json"), config)?;
    let load = |p: &Option<PathBuf>| -> Result<Manifest> { p.as_deref().map_or(Ok(Manifest::default()), |p| Ok(read_manifest(p)?)) };
    let tts = load(&config.tts_manifest)?;
    let real = load(&config.real_manifest)?;
    let eval_manifest = load(&config.eval_manifest)?;
    let eval = super::load_eval_data(&eval_manifest, config.train.cache_dir.as_deref(), exec)?;

    let mut store = FeatureStore::default();
    let mut rows = Vec::new();
    for (i, cell) in config.cells().iter().enumerate() {
        let name = format!("cell_{i:03}");
        let run_dir = out.join(&name);
        log::info!("sweep {name}: {cell:?}");
        let result = create_dir(&run_dir)
            .and_then(|_| run_cell(cell, config, (&tts, &real), &mut store, &eval, &run_dir, exec));
        let (eer_percent, auc_percent, status) = match result {
            Ok((e, a)) => (Some(e), Some(a), "ok".to_string()),
            Err(e) => {
                log::warn!("sweep {name} failed: {e}");
                (None, None, format!("error: {e}"))
            }
        };
        rows.push(SweepRow {
            n_phrases: cell.n_phrases,
            per_phrase: cell.per_phrase,
            real_count: cell.real_count,
            eer_percent,
            auc_percent,
            status,
            run_dir: name,
        });
    }
    let path = out.join("sweep.csv");
    super::report::write_rows(create_file(&path)?, &rows).map_err(crate::io_context(path.display().to_string()))?;
    Ok(SweepOutcome { rows })
}
