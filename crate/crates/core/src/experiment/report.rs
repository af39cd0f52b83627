//! Merging sweep tables into one report with plot-ready trend and DET CSVs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Result;

use super::{create_dir, write_json, ExperimentError};

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_phrases: usize,
    pub per_phrase: usize,
    pub real_count: usize,
    pub eer_percent: Option<f64>,
    pub auc_percent: Option<f64>,
    pub status: String,
    pub run_dir: String,
}

impl SweepRow {
    fn metrics(&self) -> Option<(f64, f64)> {
        match (self.status.as_str(), self.eer_percent, self.auc_percent) {
            ("ok", Some(e), Some(a)) => Some((e, a)),
            _ => None,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub(crate) fn write_rows<W: Write>(out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_phrases", "per_phrase", "real_count", "eer_percent", "auc_percent", "status", "run_dir"])?;
    for r in rows {
        w.write_record([
            r.n_phrases.to_string(),
            r.per_phrase.to_string(),
            r.real_count.to_string(),
            fmt_opt(r.eer_percent),
            fmt_opt(r.auc_percent),
            r.status.clone(),
            r.run_dir.clone(),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedRow {
    pub source: String,
    #[serde(flatten)]
    pub row: SweepRow,
}

/// Mean EER/AUC of the successful rows at each value of one grid axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendPoint {
    pub value: usize,
    pub eer_percent: f64,
    pub auc_percent: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetRow {
    pub source: String,
    pub run_dir: String,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub inputs: Vec<String>,
    pub rows: Vec<MergedRow>,
    pub trend_real: Vec<TrendPoint>,
    pub trend_phrases: Vec<TrendPoint>,
    pub trend_per_phrase: Vec<TrendPoint>,
    pub det: Vec<DetRow>,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> crate::Error {
    ExperimentError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
    .into()
}

fn trend(rows: &[MergedRow], key: impl Fn(&SweepRow) -> usize) -> Vec<TrendPoint> {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some((e, a)) = r.row.metrics() {
            let slot = acc.entry(key(&r.row)).or_default();
            slot.0 += e;
            slot.1 += a;
            slot.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(value, (e, a, n))| TrendPoint {
            value,
            eer_percent: e / n as f64,
            auc_percent: a / n as f64,
            runs: n,
        })
        .collect()
}

fn read_det(path: &Path, source: &str, run_dir: &str) -> Result<Vec<DetRow>> {
    #[derive(Deserialize)]
    struct Point {
        threshold: f64,
        far: f64,
        frr: f64,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    rdr.deserialize::<Point>()
        .map(|p| {
            let p = p.map_err(|e| parse_err(path, e))?;
            Ok(DetRow {
                source: source.to_string(),
                run_dir: run_dir.to_string(),
                threshold: p.threshold,
                far: p.far,
                frr: p.frr,
            })
        })
        .collect()
}

/// Reads and merges sweep CSVs. Mean DET curves are picked up from
/// `<run_dir>/eval/det_mean.csv` (relative to each CSV) where present.
pub fn build_report(inputs: &[PathBuf]) -> Result<Report> {
    if inputs.is_empty() {
        return Err(ExperimentError::Report("no input tables".into()).into());
    }
    let mut rows = Vec::new();
    let mut det = Vec::new();
    for path in inputs {
        let source = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in rdr.deserialize::<SweepRow>() {
            let row = r.map_err(|e| parse_err(path, e))?;
            let det_path = base.join(&row.run_dir).join("eval").join("det_mean.csv");
            if row.metrics().is_some() && det_path.is_file() {
                det.extend(read_det(&det_path, &source, &row.run_dir)?);
            }
            rows.push(MergedRow {
                source: source.clone(),
                row,
            });
        }
    }
    Ok(Report {
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        trend_real: trend(&rows, |r| r.real_count),
        trend_phrases: trend(&rows, |r| r.n_phrases),
        trend_per_phrase: trend(&rows, |r| r.per_phrase),
        rows,
        det,
    })
}

fn write_trend(path: &Path, axis: &str, points: &[TrendPoint]) -> Result<()> {
    let run = || -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(fs::File::create(path)?);
        w.write_record([axis, "eer_percent", "auc_percent", "runs"])?;
        for p in points {
            w.write_record([
                p.value.to_string(),
                format!("{:.6}", p.eer_percent),
                format!("{:.6}", p.auc_percent),
                p.runs.to_string(),
            ])?;
        }
        w.flush()
    };
    run().map_err(crate::io_context(format!("writing {}", path.display())))
}

/// `report.json`, `merged.csv`, `trend_real.csv`, `trend_phrases.csv`,
/// `trend_per_phrase.csv`, `det_curves.csv`.
pub fn write_report(report: &Report, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_json(&out.join("report.json"), report)?;

    let path = out.join("merged.csv");
    let run = || -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(fs::File::create(&path)?);
        w.write_record([
            "source",
            "n_phrases",
            "per_phrase",
            "real_count",
            "eer_percent",
            "auc_percent",
            "status",
            "run_dir",
        ])?;
        for m in &report.rows {
            let r = &m.row;
            w.write_record([
                m.source.clone(),
                r.n_phrases.to_string(),
                r.per_phrase.to_string(),
                r.real_count.to_string(),
                fmt_opt(r.eer_percent),
                fmt_opt(r.auc_percent),
                r.status.clone(),
                r.run_dir.clone(),
            ])?;
        }
        w.flush()
    };
    run().map_err(crate::io_context(format!("writing {}", path.display())))?;

    write_trend(&out.join("trend_real.csv"), "real_count", &report.trend_real)?;
    write_trend(&out.join("trend_phrases.csv"), "n_phrases", &report.trend_phrases)?;
    write_trend(&out.join("trend_per_phrase.csv"), "per_phrase", &report.trend_per_phrase)?;

    let path = out.join("det_curves.csv");
    let run = || -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(fs::File::create(&path)?);
        w.write_record(["source", "run_dir", "threshold", "far", "frr"])?;
        for d in &report.det {
            w.write_record([
                d.source.clone(),
                d.run_dir.clone(),
                format!("{:.2}", d.threshold),
                format!("{:.6}", d.far),
                format!("{:.6}", d.frr),
            ])?;
        }
        w.flush()
    };
    run().map_err(crate::io_context(format!("writing {}", path.display())))
}
