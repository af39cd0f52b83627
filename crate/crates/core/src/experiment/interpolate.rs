//! Reading a quality-vs-real-data curve backwards: how many real utterances
//! are needed to reach a target EER or AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub real_count: u64,
    pub eer_percent: f64,
    pub auc_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Eer,
    Auc,
}

impl Metric {
    pub fn of(self, p: &CurvePoint) -> f64 {
        match self {
            Metric::Eer => p.eer_percent,
            Metric::Auc => p.auc_percent,
        }
    }
}

/// Axis the curve is linear in between points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CountScale {
    #[default]
    Raw,
    Log,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpolateError {
    #[error("need at least two points")]
    TooFewPoints,
    #[error("points are not strictly increasing in real_count at index {0}")]
    Unsorted(usize),
    #[error("metric increases between points {0} and {1}")]
    NonMonotone(usize, usize),
    #[error("target unreachable; best achievable is {0}")]
    Unreachable(f64),
    #[error("log scale needs positive counts")]
    NonPositiveCount,
    #[error("invalid point or target: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Requirement {
    /// Interpolated count before rounding.
    pub exact: f64,
    /// Smallest whole count meeting the target.
    pub count: u64,
}

pub fn interpolate_requirement(
    points: &[CurvePoint],
    metric: Metric,
    target: f64,
    scale: CountScale,
) -> Result<Requirement, InterpolateError> {
    if points.len() < 2 {
        return Err(InterpolateError::TooFewPoints);
    }
    if !target.is_finite() {
        return Err(InterpolateError::Invalid(format!("target {target}")));
    }
    for (i, p) in points.iter().enumerate() {
        if !metric.of(p).is_finite() {
            return Err(InterpolateError::Invalid(format!("point {i} has non-finite metric")));
        }
    }
    for i in 1..points.len() {
        if points[i].real_count <= points[i - 1].real_count {
            return Err(InterpolateError::Unsorted(i));
        }
        if metric.of(&points[i]) > metric.of(&points[i - 1]) {
            return Err(InterpolateError::NonMonotone(i - 1, i));
        }
    }
    if scale == CountScale::Log && points[0].real_count == 0 {
        return Err(InterpolateError::NonPositiveCount);
    }
    let first = &points[0];
    if metric.of(first) <= target {
        return Ok(Requirement {
            exact: first.real_count as f64,
            count: first.real_count,
        });
    }
    let last = points.last().unwrap();
    if metric.of(last) > target {
        return Err(InterpolateError::Unreachable(metric.of(last)));
    }
    let k = points.iter().position(|p| metric.of(p) <= target).unwrap();
    let (a, b) = (&points[k - 1], &points[k]);
    let (va, vb) = (metric.of(a), metric.of(b));
    let frac = (va - target) / (va - vb);
    let (ca, cb) = (a.real_count as f64, b.real_count as f64);
    let exact = match scale {
        CountScale::Raw => ca + frac * (cb - ca),
        CountScale::Log => (ca.ln() + frac * (cb.ln() - ca.ln())).exp(),
    };
    let count = (exact.ceil() as u64).clamp(a.real_count, b.real_count);
    Ok(Requirement { exact, count })
}

/// Reads `real_count,eer_percent,auc_percent` CSV rows, sorted by count.
pub fn read_curve_csv<R: std::io::Read>(input: R) -> Result<Vec<CurvePoint>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut pts: Vec<CurvePoint> = rdr.deserialize().collect::<Result<_, _>>()?;
    pts.sort_by_key(|p| p.real_count);
    Ok(pts)
}
