//! Enrollment/test evaluation of a model over a labelled utterance set.

use std::fs;
use std::path::Path;

use crate::exec::Exec;
use crate::frontend::FeatureMatrix;
use crate::metrics::{
    aggregate, make_eval_split, mean_curve, phrase_metrics, score_all, score_histogram, write_det_csv,
    write_histogram_csv, write_metrics_csv, DetCurve, PhraseMetrics, ScoreHistogram,
};
use crate::model::{embed_all, ModelParams};
use crate::{io_context, Result};

pub const EMBED_CHUNK: usize = 32;
pub const HISTOGRAM_BINS: usize = 100;

/// Features with their phrase labels, in matching order.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub features: Vec<FeatureMatrix>,
    pub labels: Vec<String>,
}

impl EvalData {
    pub fn new(features: Vec<FeatureMatrix>, labels: Vec<String>) -> Self {
        assert_eq!(features.len(), labels.len(), "one label per utterance");
        Self { features, labels }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_phrase: Vec<PhraseMetrics>,
    pub curves: Vec<DetCurve>,
    pub histograms: Vec<(String, ScoreHistogram)>,
    pub mean_eer: f64,
    pub mean_auc: f64,
}

/// split → embed → score → per-phrase DET/EER/AUC → mean.
pub fn evaluate_model(
    params: &ModelParams<f32>,
    data: &EvalData,
    n_enroll: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    let split = make_eval_split(&data.labels, n_enroll, seed)?;
    let refs: Vec<&FeatureMatrix> = data.features.iter().collect();
    let emb = embed_all(&refs, params, EMBED_CHUNK, exec)?;
    let scores = score_all(emb.view(), &split, exec)?;

    let results = exec.map(&scores, |s| -> Result<_> {
        let (m, c) = phrase_metrics(s)?;
        let h = score_histogram(&s.pos, &s.neg, HISTOGRAM_BINS)?;
        Ok((m, c, (s.phrase.clone(), h)))
    });
    let mut per_phrase = Vec::with_capacity(results.len());
    let mut curves = Vec::with_capacity(results.len());
    let mut histograms = Vec::with_capacity(results.len());
    for r in results {
        let (m, c, h) = r?;
        per_phrase.push(m);
        curves.push(c);
        histograms.push(h);
    }
    let (mean_eer, mean_auc) = aggregate(&per_phrase)?;
    Ok(EvalReport {
        per_phrase,
        curves,
        histograms,
        mean_eer,
        mean_auc,
    })
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// `metrics.csv`, `det/<phrase>.csv`, `det_mean.csv`, `histogram.csv`.
pub fn write_eval_outputs(dir: &Path, report: &EvalReport) -> Result<()> {
    let det_dir = dir.join("det");
    fs::create_dir_all(&det_dir).map_err(io_context(format!("creating {}", det_dir.display())))?;
    let create = |p: &Path| fs::File::create(p).map_err(io_context(format!("writing {}", p.display())));
    let p = dir.join("metrics.csv");
    write_metrics_csv(create(&p)?, &report.per_phrase).map_err(io_context(p.display().to_string()))?;
    for (m, c) in report.per_phrase.iter().zip(&report.curves) {
        let p = det_dir.join(format!("{}.csv", file_safe(&m.phrase)));
        write_det_csv(create(&p)?, c).map_err(io_context(p.display().to_string()))?;
    }
    let p = dir.join("det_mean.csv");
    write_det_csv(create(&p)?, &mean_curve(&report.curves)?).map_err(io_context(p.display().to_string()))?;
    let p = dir.join("histogram.csv");
    write_histogram_csv(create(&p)?, &report.histograms).map_err(io_context(p.display().to_string()))?;
    Ok(())
}
