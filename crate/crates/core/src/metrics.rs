//! Keyword-matching evaluation: per-phrase enrollment centroids, cosine
//! scoring, DET curves on a fixed threshold grid, EER, DET-AUC and
//! cross-phrase averaging.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::loss::{centroids, LossError};

pub const DEFAULT_ENROLL: usize = 10;
pub const GRID_STEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("phrase {phrase:?} has {count} utterances, need more than {n_enroll}")]
    TooFewUtterances {
        phrase: String,
        count: usize,
        n_enroll: usize,
    },
    #[error("empty score set")]
    EmptyScores,
    #[error("nothing to aggregate")]
    Empty,
    #[error("centroid for phrase {0:?} has zero norm")]
    DegenerateCentroid(String),
    #[error("embedding table has {rows} rows, split references id {id}")]
    MissingEmbedding { rows: usize, id: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSplit {
    pub phrase: String,
    pub enroll: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub phrases: Vec<PhraseSplit>,
    pub seed: u64,
}

impl EvalSplit {
    pub fn total_test(&self) -> usize {
        self.phrases.iter().map(|p| p.test.len()).sum()
    }
}

/// Random enrollment/test partition per phrase. `labels[i]` is the phrase of
/// utterance `i`; phrases come out sorted by name.
pub fn make_eval_split<S: AsRef<str>>(labels: &[S], n_enroll: usize, seed: u64) -> Result<EvalSplit> {
    let index = crate::loss::PhraseIndex::from_labels(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phrases = Vec::with_capacity(index.len());
    for (phrase, members) in index.phrases.into_iter().zip(index.members) {
        if members.len() <= n_enroll {
            return Err(MetricsError::TooFewUtterances {
                phrase,
                count: members.len(),
                n_enroll,
            });
        }
        let mut ids = members;
        ids.shuffle(&mut rng);
        let test = ids.split_off(n_enroll);
        phrases.push(PhraseSplit {
            phrase,
            enroll: ids,
            test,
        });
    }
    Ok(EvalSplit { phrases, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseScores {
    pub phrase: String,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

/// Scores every test utterance against every phrase centroid. Row `i` of
/// `embeddings` is utterance id `i`; rows are unit vectors.
pub fn score_all(embeddings: ArrayView2<f32>, split: &EvalSplit, exec: Exec) -> Result<Vec<PhraseScores>> {
    let rows = embeddings.nrows();
    for p in &split.phrases {
        if let Some(&id) = p.enroll.iter().chain(&p.test).find(|&&id| id >= rows) {
            return Err(MetricsError::MissingEmbedding { rows, id });
        }
    }
    let emb = embeddings.mapv(|v| v as f64);
    let groups: Vec<Array2<f64>> = split
        .phrases
        .iter()
        .map(|p| emb.select(Axis(0), &p.enroll))
        .collect();
    let views: Vec<_> = groups.iter().map(|g| g.view()).collect();
    let cents = centroids(&views).map_err(|e| match e {
        LossError::DegenerateCentroid(j) => MetricsError::DegenerateCentroid(split.phrases[j].phrase.clone()),
        other => unreachable!("centroid shapes are consistent: {other}"),
    })?;
    let tests: Vec<Array2<f64>> = split.phrases.iter().map(|p| emb.select(Axis(0), &p.test)).collect();

    Ok(exec.map_range(split.phrases.len(), |p| {
        let c = cents.row(p);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (q, t) in tests.iter().enumerate() {
            let scores = t.dot(&c);
            if q == p {
                pos.extend(scores.iter());
            } else {
                neg.extend(scores.iter());
            }
        }
        PhraseScores {
            phrase: split.phrases[p].phrase.clone(),
            pos,
            neg,
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// One point per threshold `0.00, 0.01, …, 1.00`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

pub fn threshold(k: usize) -> f64 {
    k as f64 / GRID_STEPS as f64
}

/// Accept iff `score > t`. FAR = accepted negatives, FRR = rejected positives.
pub fn det_curve(pos: &[f64], neg: &[f64]) -> Result<DetCurve> {
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::EmptyScores);
    }
    let mut pos = pos.to_vec();
    let mut neg = neg.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let points = (0..=GRID_STEPS)
        .map(|k| {
            let t = threshold(k);
            let rejected_pos = pos.partition_point(|&s| s <= t);
            let accepted_neg = neg.len() - neg.partition_point(|&s| s <= t);
            DetPoint {
                threshold: t,
                far: accepted_neg as f64 / nn,
                frr: rejected_pos as f64 / np,
            }
        })
        .collect();
    Ok(DetCurve { points })
}

/// Equal error rate in percent, linearly interpolated between the grid
/// points where `FAR - FRR` changes sign.
pub fn eer(curve: &DetCurve) -> f64 {
    let pts = &curve.points;
    let Some(first) = pts.first() else { return 0.0 };
    let d = |p: &DetPoint| p.far - p.frr;
    if d(first) <= 0.0 {
        return 100.0 * (first.far + first.frr) / 2.0;
    }
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (da, db) = (d(a), d(b));
        if da >= 0.0 && db <= 0.0 {
            if da == db {
                return 100.0 * a.far;
            }
            let alpha = da / (da - db);
            return 100.0 * (a.far + alpha * (b.far - a.far));
        }
    }
    let last = pts.last().unwrap();
    100.0 * (last.far + last.frr) / 2.0
}

/// Area under the DET curve (FRR over FAR) in percent, over the full
/// `[0, 1]` FAR range.
pub fn auc(curve: &DetCurve) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.far, p.frr)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let start = pts
        .iter()
        .filter(|p| p.0 == 0.0)
        .map(|p| p.1)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .unwrap_or(1.0);
    let mut path = Vec::with_capacity(pts.len() + 2);
    path.push((0.0, start));
    path.extend(pts);
    path.push((1.0, 0.0));
    let area: f64 = path
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    100.0 * area
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseMetrics {
    pub phrase: String,
    pub eer_percent: f64,
    pub auc_percent: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Per-phrase DET, EER and AUC. A phrase evaluated alone has no negative
/// trials; its FAR is 0 at every threshold.
pub fn phrase_metrics(scores: &PhraseScores) -> Result<(PhraseMetrics, DetCurve)> {
    let curve = if scores.neg.is_empty() && !scores.pos.is_empty() {
        let mut c = det_curve(&scores.pos, &[f64::NEG_INFINITY])?;
        c.points.iter_mut().for_each(|p| p.far = 0.0);
        c
    } else {
        det_curve(&scores.pos, &scores.neg)?
    };
    let m = PhraseMetrics {
        phrase: scores.phrase.clone(),
        eer_percent: eer(&curve),
        auc_percent: auc(&curve),
        n_pos: scores.pos.len(),
        n_neg: scores.neg.len(),
    };
    Ok((m, curve))
}

/// Unweighted mean `(EER, AUC)` across phrases.
pub fn aggregate(metrics: &[PhraseMetrics]) -> Result<(f64, f64)> {
    if metrics.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = metrics.len() as f64;
    let eer = metrics.iter().map(|m| m.eer_percent).sum::<f64>() / n;
    let auc = metrics.iter().map(|m| m.auc_percent).sum::<f64>() / n;
    Ok((eer, auc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub bins: usize,
    pub pos: Vec<u64>,
    pub neg: Vec<u64>,
}

/// Equal-width bins over `[0, 1]`; negative scores land in bin 0 and 1.0 in the last bin.
pub fn score_histogram(pos: &[f64], neg: &[f64], bins: usize) -> Result<ScoreHistogram> {
    if (pos.is_empty() && neg.is_empty()) || bins == 0 {
        return Err(MetricsError::EmptyScores);
    }
    let fill = |scores: &[f64]| {
        let mut h = vec![0u64; bins];
        for &s in scores {
            let b = (s * bins as f64).floor();
            let b = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            h[b] += 1;
        }
        h
    };
    Ok(ScoreHistogram {
        bins,
        pos: fill(pos),
        neg: fill(neg),
    })
}

/// Mean FAR/FRR per threshold across phrases (for plotting one curve per model).
pub fn mean_curve(curves: &[DetCurve]) -> Result<DetCurve> {
    let first = curves.first().ok_or(MetricsError::Empty)?;
    let n = curves.len() as f64;
    let points = (0..first.points.len())
        .map(|k| DetPoint {
            threshold: first.points[k].threshold,
            far: curves.iter().map(|c| c.points[k].far).sum::<f64>() / n,
            frr: curves.iter().map(|c| c.points[k].frr).sum::<f64>() / n,
        })
        .collect();
    Ok(DetCurve { points })
}

pub const AGGREGATE_ROW: &str = "__mean__";

/// `phrase,eer_percent,auc_percent,n_pos,n_neg` with a trailing aggregate row.
pub fn write_metrics_csv<W: Write>(out: W, metrics: &[PhraseMetrics]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phrase", "eer_percent", "auc_percent", "n_pos", "n_neg"])?;
    for m in metrics {
        w.write_record([
            m.phrase.clone(),
            format!("{:.6}", m.eer_percent),
            format!("{:.6}", m.auc_percent),
            m.n_pos.to_string(),
            m.n_neg.to_string(),
        ])?;
    }
    if let Ok((e, a)) = aggregate(metrics) {
        let np: usize = metrics.iter().map(|m| m.n_pos).sum();
        let nn: usize = metrics.iter().map(|m| m.n_neg).sum();
        w.write_record([
            AGGREGATE_ROW.to_string(),
            format!("{e:.6}"),
            format!("{a:.6}"),
            np.to_string(),
            nn.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_det_csv<W: Write>(out: W, curve: &DetCurve) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "far", "frr"])?;
    for p in &curve.points {
        w.write_record([
            format!("{:.2}", p.threshold),
            format!("{:.6}", p.far),
            format!("{:.6}", p.frr),
        ])?;
    }
    w.flush()
}

/// `phrase,bin_low,bin_high,pos_count,neg_count`
pub fn write_histogram_csv<W: Write>(out: W, hists: &[(String, ScoreHistogram)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phrase", "bin_low", "bin_high", "pos_count", "neg_count"])?;
    for (phrase, h) in hists {
        for b in 0..h.bins {
            w.write_record([
                phrase.clone(),
                format!("{:.4}", b as f64 / h.bins as f64),
                format!("{:.4}", (b + 1) as f64 / h.bins as f64),
                h.pos[b].to_string(),
                h.neg[b].to_string(),
            ])?;
        }
    }
    w.flush()
}
