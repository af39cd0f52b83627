//! Experiment drivers behind the `kws` binary: training and evaluation runs,
//! resource sweeps, data-requirement interpolation and report merging.

mod evaluate;
mod features;
mod interpolate;
mod report;
mod sweep;
mod train;

pub use evaluate::{evaluate_model, write_eval_outputs, EvalData, EvalReport, EMBED_CHUNK, HISTOGRAM_BINS};
pub use features::{cache_file_name, featurize_manifest, load_features, FeatureStore, FeaturizeReport};
pub use interpolate::{interpolate_requirement, read_curve_csv, CountScale, CurvePoint, InterpolateError, Metric, Requirement};
pub use report::{build_report, write_report, Report, SweepRow};
pub use sweep::{run_sweep, SweepCell, SweepConfig, SweepOutcome};
pub use train::{
    loss_and_grads, train_from, train_model, write_log_csv, BestCheckpoint, LogRow, TrainConfig, TrainData,
    TrainOutcome,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::data::{mix, read_manifest, Manifest};
use crate::exec::Exec;
use crate::model::{quantize_int8, read_checkpoint, write_checkpoint, write_quantized_checkpoint};
use crate::{io_context, Result};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Interpolate(#[from] InterpolateError),
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("report: {0}")]
    Report(String),
}

/// Parses a JSON config file, or returns the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(io_context(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        ExperimentError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
        .into()
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("config types serialize");
    fs::write(path, text + "\n").map_err(io_context(format!("writing {}", path.display())))
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_context(format!("creating {}", dir.display())))
}

pub(crate) fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(io_context(format!("writing {}", path.display())))
}

/// Features and labels of a manifest, ready for evaluation.
pub fn load_eval_data(manifest: &Manifest, cache_dir: Option<&Path>, exec: Exec) -> Result<EvalData> {
    let features = load_features(manifest, cache_dir, exec)?;
    let labels = manifest.phrases().into_iter().map(str::to_owned).collect();
    Ok(EvalData::new(features, labels))
}

/// Real and TTS manifests named in the config, mixed into one training set.
pub fn training_manifest(config: &TrainConfig) -> Result<Manifest> {
    let load = |p: &Option<PathBuf>| -> Result<Manifest> {
        match p {
            Some(p) => Ok(read_manifest(p)?),
            None => Ok(Manifest::default()),
        }
    };
    let real = load(&config.real_manifest)?;
    let tts = load(&config.tts_manifest)?;
    if real.is_empty() && tts.is_empty() {
        return Err(ExperimentError::Config("no training data: set real_manifest and/or tts_manifest".into()).into());
    }
    Ok(mix(&real, &tts)?)
}

/// Trains on `train`, keeps the best checkpoint by held-out mean AUC, and
/// writes everything a run produces into `out`:
/// `config.json`, `log.csv`, `final.ckpt`, `best.ckpt`, `best.q8.ckpt` and
/// (with eval data) `eval/` for the best checkpoint.
pub fn run_training(
    config: &TrainConfig,
    train: &TrainData,
    eval: Option<&EvalData>,
    out: &Path,
    exec: Exec,
) -> Result<(TrainOutcome, Option<EvalReport>)> {
    config.validate()?;
    create_dir(out)?;
    write_json(&out.join("config.json"), config)?;
    let outcome = train_model(config, train, eval, exec)?;
    let log_path = out.join("log.csv");
    write_log_csv(create_file(&log_path)?, &outcome.log).map_err(io_context(log_path.display().to_string()))?;
    write_checkpoint(&out.join("final.ckpt"), &outcome.final_params)?;
    write_checkpoint(&out.join("best.ckpt"), outcome.best_params())?;
    write_quantized_checkpoint(&out.join("best.q8.ckpt"), &quantize_int8(outcome.best_params())?)?;
    let report = match eval {
        Some(ev) => {
            let report = evaluate_model(outcome.best_params(), ev, config.n_enroll, config.eval_seed, exec)?;
            write_eval_outputs(&out.join("eval"), &report)?;
            Some(report)
        }
        None => None,
    };
    Ok((outcome, report))
}

/// Loads a checkpoint, evaluates it and writes the metric CSVs into `out`.
pub fn run_evaluation(
    checkpoint: &Path,
    data: &EvalData,
    n_enroll: usize,
    seed: u64,
    out: &Path,
    exec: Exec,
) -> Result<EvalReport> {
    let params = read_checkpoint(checkpoint)?;
    let report = evaluate_model(&params, data, n_enroll, seed, exec)?;
    write_eval_outputs(out, &report)?;
    Ok(report)
}
