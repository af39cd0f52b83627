//! Batch construction and the centroid-based triplet loss.
//!
//! A batch holds `X` phrases with `Y` utterances each. The first `Y/2`
//! utterances of every phrase are enrollment, the rest are test. Each test
//! embedding is scored against every enrollment centroid, giving `X·Y/2`
//! positive and `X(X-1)·Y/2` negative pairs. Pairs are scored by
//! `w·cos + b` and trained with binary cross-entropy, negatives weighted by
//! `γ`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("need {needed} phrases, dataset has {available}")]
    InsufficientPhrases { needed: usize, available: usize },
    #[error("phrase {0:?} has too few utterances for the batch")]
    InsufficientUtterances(String),
    #[error("invalid batch spec: {0}")]
    InvalidSpec(String),
    #[error("centroid {0} has (near) zero norm")]
    DegenerateCentroid(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss")]
    NonFinite,
    #[error(transparent)]
    Autodiff(AutodiffError),
}

impl From<AutodiffError> for LossError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::NonFinite { .. } => LossError::NonFinite,
            AutodiffError::ShapeMismatch { op, lhs, rhs } => {
                LossError::ShapeMismatch(format!("{op}: {lhs:?} vs {rhs:?}"))
            }
            other => LossError::Autodiff(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub num_phrases: usize,
    pub utts_per_phrase: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            num_phrases: 8,
            utts_per_phrase: 10,
        }
    }
}

impl BatchSpec {
    pub fn new(num_phrases: usize, utts_per_phrase: usize) -> Result<Self> {
        let spec = Self {
            num_phrases,
            utts_per_phrase,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_phrases < 2 {
            return Err(LossError::InvalidSpec(format!("X = {} < 2", self.num_phrases)));
        }
        if self.utts_per_phrase < 2 || !self.utts_per_phrase.is_multiple_of(2) {
            return Err(LossError::InvalidSpec(format!("Y = {} must be even and >= 2", self.utts_per_phrase)));
        }
        Ok(())
    }

    pub fn enroll_per_phrase(&self) -> usize {
        self.utts_per_phrase / 2
    }

    pub fn num_positive(&self) -> usize {
        self.num_phrases * self.utts_per_phrase / 2
    }

    pub fn num_negative(&self) -> usize {
        self.num_phrases * (self.num_phrases - 1) * self.utts_per_phrase / 2
    }

    /// `N_pos / N_neg = 1/(X-1)`.
    pub fn balanced_gamma(&self) -> f64 {
        1.0 / (self.num_phrases - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 1.0 / 7.0 }
    }
}

/// Phrase → utterance ids, the only view of a dataset the sampler needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseIndex {
    pub phrases: Vec<String>,
    pub members: Vec<Vec<usize>>,
}

impl PhraseIndex {
    /// Groups `labels[i]` (the phrase of item `i`) preserving first-seen order
    /// of items within each phrase; phrases are sorted by name.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut map: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
        for (i, l) in labels.iter().enumerate() {
            map.entry(l.as_ref()).or_default().push(i);
        }
        let (phrases, members) = map.into_iter().map(|(k, v)| (k.to_string(), v)).unzip();
        Self { phrases, members }
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Indices into [`PhraseIndex::phrases`].
    pub phrases: Vec<usize>,
    /// `X` groups of `Y/2` utterance ids.
    pub enrollment: Vec<Vec<usize>>,
    /// `X` groups of `Y/2` utterance ids.
    pub test: Vec<Vec<usize>>,
}

impl Batch {
    /// Enrollment ids phrase-major, then test ids phrase-major. This is the
    /// row order [`batch_loss_on_tape`] expects.
    pub fn utterance_order(&self) -> Vec<usize> {
        self.enrollment.iter().chain(&self.test).flatten().copied().collect()
    }
}

pub fn sample_batch<R: Rng + ?Sized>(index: &PhraseIndex, spec: &BatchSpec, rng: &mut R) -> Result<Batch> {
    spec.validate()?;
    let x = spec.num_phrases;
    let y = spec.utts_per_phrase;
    if index.len() < x {
        return Err(LossError::InsufficientPhrases {
            needed: x,
            available: index.len(),
        });
    }
    let eligible: Vec<usize> = (0..index.len()).filter(|&p| index.members[p].len() >= y).collect();
    if eligible.len() < x {
        let short = (0..index.len()).find(|&p| index.members[p].len() < y).unwrap();
        return Err(LossError::InsufficientUtterances(index.phrases[short].clone()));
    }
    let chosen: Vec<usize> = sample(rng, eligible.len(), x).into_iter().map(|i| eligible[i]).collect();
    let mut enrollment = Vec::with_capacity(x);
    let mut test = Vec::with_capacity(x);
    for &p in &chosen {
        let pool = &index.members[p];
        let picks: Vec<usize> = sample(rng, pool.len(), y).into_iter().map(|i| pool[i]).collect();
        enrollment.push(picks[..y / 2].to_vec());
        test.push(picks[y / 2..].to_vec());
    }
    Ok(Batch {
        phrases: chosen,
        enrollment,
        test,
    })
}

/// Normalised mean of each group of unit embeddings (`n_j × e` each).
pub fn centroids<T: Real>(groups: &[ArrayView2<T>]) -> Result<Array2<T>> {
    let dim = groups
        .first()
        .map(|g| g.ncols())
        .ok_or_else(|| LossError::ShapeMismatch("no enrollment groups".into()))?;
    let mut out = Array2::zeros((groups.len(), dim));
    let floor = T::from_f64(1e-8).unwrap();
    for (j, g) in groups.iter().enumerate() {
        if g.ncols() != dim || g.nrows() == 0 {
            return Err(LossError::ShapeMismatch(format!("group {j} has shape {:?}", g.dim())));
        }
        let mean: Array1<T> = g.mean_axis(ndarray::Axis(0)).unwrap();
        let norm = mean.dot(&mean).sqrt();
        if !(norm >= floor) {
            return Err(LossError::DegenerateCentroid(j));
        }
        out.row_mut(j).assign(&(mean / norm));
    }
    Ok(out)
}

/// `S[i, j] = test_i · centroid_j`.
pub fn similarity_matrix<T: Real>(test: ArrayView2<T>, centroids: ArrayView2<T>) -> Result<Array2<T>> {
    if test.ncols() != centroids.ncols() {
        return Err(LossError::ShapeMismatch(format!(
            "test {:?} vs centroids {:?}",
            test.dim(),
            centroids.dim()
        )));
    }
    Ok(test.dot(&centroids.t()))
}

/// Loss node plus the pair counts it was computed over.
#[derive(Debug, Clone, Copy)]
pub struct PairLoss {
    pub loss: Var,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Weighted BCE over all (test row, centroid) pairs of `s`. `labels[i]` is the
/// matching column of row `i`; `w` and `b` are 1×1 tape values.
pub fn ge2e_triplet_loss<T: Real>(
    tape: &mut Tape<T>,
    s: Var,
    labels: &[usize],
    w: Var,
    b: Var,
    config: &LossConfig,
) -> Result<PairLoss> {
    let (rows, cols) = tape.shape(s);
    if rows != labels.len() || rows == 0 || cols < 2 {
        return Err(LossError::ShapeMismatch(format!(
            "similarity matrix {rows}x{cols} with {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
        return Err(LossError::ShapeMismatch(format!("label {bad} out of range for {cols} centroids")));
    }
    if !(config.gamma > 0.0) {
        return Err(LossError::InvalidSpec(format!("gamma must be positive, got {}", config.gamma)));
    }
    let gamma = T::from_f64(config.gamma).unwrap();
    let mut targets = Array2::zeros((rows, cols));
    let mut weights = Array2::from_elem((rows, cols), gamma);
    for (i, &l) in labels.iter().enumerate() {
        targets[[i, l]] = T::one();
        weights[[i, l]] = T::one();
    }
    let logits = tape.affine(s, w, b)?;
    let loss = tape.weighted_bce_with_logits(logits, targets, weights)?;
    Ok(PairLoss {
        loss,
        n_pos: rows,
        n_neg: rows * (cols - 1),
    })
}

/// Loss value and pair counts for a plain similarity matrix (64-bit).
pub fn ge2e_loss_value(s: &Array2<f64>, labels: &[usize], w_scale: f64, b_shift: f64, config: &LossConfig) -> Result<(f64, usize, usize)> {
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let w = tape.constant(Array2::from_elem((1, 1), w_scale));
    let b = tape.constant(Array2::from_elem((1, 1), b_shift));
    let pl = ge2e_triplet_loss(&mut tape, sv, labels, w, b, config)?;
    Ok((tape.scalar(pl.loss), pl.n_pos, pl.n_neg))
}

/// Full batch loss from an `(X·Y) × e` embedding node whose rows follow
/// [`Batch::utterance_order`].
pub fn batch_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    embeddings: Var,
    spec: &BatchSpec,
    w: Var,
    b: Var,
    config: &LossConfig,
) -> Result<PairLoss> {
    spec.validate()?;
    let x = spec.num_phrases;
    let half = spec.enroll_per_phrase();
    let n_enroll = x * half;
    let (rows, _) = tape.shape(embeddings);
    if rows != 2 * n_enroll {
        return Err(LossError::ShapeMismatch(format!("{rows} embeddings for a {x}x{} batch", spec.utts_per_phrase)));
    }
    let enroll_rows: Vec<usize> = (0..n_enroll).collect();
    let test_rows: Vec<usize> = (n_enroll..rows).collect();
    let enroll = tape.select_rows(embeddings, &enroll_rows)?;
    let test = tape.select_rows(embeddings, &test_rows)?;

    let inv = T::one() / T::from_usize(half).unwrap();
    let avg = Array2::from_shape_fn((x, n_enroll), |(j, k)| if k / half == j { inv } else { T::zero() });
    let avg = tape.constant(avg);
    let means = tape.matmul(avg, enroll)?;
    let cents = tape.l2_normalize_rows(means).map_err(|e| match e {
        AutodiffError::ZeroNorm { row, .. } => LossError::DegenerateCentroid(row),
        other => other.into(),
    })?;
    let s = tape.matmul_t(test, cents)?;
    let labels: Vec<usize> = (0..n_enroll).map(|i| i / half).collect();
    ge2e_triplet_loss(tape, s, &labels, w, b, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn index(counts: &[usize]) -> PhraseIndex {
        let mut labels = Vec::new();
        for (p, &c) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(format!("p{p:02}"), c));
        }
        PhraseIndex::from_labels(&labels)
    }

    #[test]
    fn exhausts_exact_dataset() {
        let idx = index(&[10; 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&idx, &BatchSpec::default(), &mut rng).unwrap();
        let mut all = b.utterance_order();
        all.sort();
        assert_eq!(all, (0..80).collect::<Vec<_>>());
        for (j, &p) in b.phrases.iter().enumerate() {
            assert_eq!(b.enrollment[j].len(), 5);
            for u in b.enrollment[j].iter().chain(&b.test[j]) {
                assert!(idx.members[p].contains(u));
            }
        }
    }

    #[test]
    fn short_phrase_is_rejected() {
        let mut counts = [10; 8];
        counts[3] = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_batch(&index(&counts), &BatchSpec::default(), &mut rng).unwrap_err(),
            LossError::InsufficientUtterances("p03".into())
        );
        assert!(matches!(
            sample_batch(&index(&[10; 5]), &BatchSpec::default(), &mut rng),
            Err(LossError::InsufficientPhrases { needed: 8, available: 5 })
        ));
    }

    #[test]
    fn seeded_batches_repeat() {
        let idx = index(&[25; 20]);
        let a = sample_batch(&idx, &BatchSpec::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_batch(&idx, &BatchSpec::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_validation() {
        assert!(BatchSpec::new(1, 10).is_err());
        assert!(BatchSpec::new(8, 9).is_err());
        assert!(BatchSpec::new(8, 0).is_err());
        let s = BatchSpec::new(8, 10).unwrap();
        assert_eq!((s.num_positive(), s.num_negative()), (40, 280));
        assert!((s.balanced_gamma() - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn centroid_cases() {
        let e = array![[0.6f64, 0.8], [0.6, 0.8], [0.6, 0.8]];
        let c = centroids(&[e.view()]).unwrap();
        assert!((c[[0, 0]] - 0.6).abs() < 1e-15 && (c[[0, 1]] - 0.8).abs() < 1e-15);
        let anti = array![[1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(centroids(&[e.view(), anti.view()]).unwrap_err(), LossError::DegenerateCentroid(1));
    }

    #[test]
    fn similarity_cases() {
        let c = array![[1.0, 0.0], [0.0, 1.0]];
        let t = array![[1.0, 0.0]];
        let s = similarity_matrix(t.view(), c.view()).unwrap();
        assert_eq!(s, array![[1.0, 0.0]]);
        let bad = array![[1.0, 0.0, 0.0]];
        assert!(similarity_matrix(bad.view(), c.view()).is_err());
    }

    #[test]
    fn separated_scores_drive_loss_to_zero() {
        let x = 4;
        let s = Array2::from_shape_fn((x * 2, x), |(i, j)| if i / 2 == j { 1.0 } else { -1.0 });
        let labels: Vec<usize> = (0..x * 2).map(|i| i / 2).collect();
        let cfg = LossConfig::default();
        let mut prev = f64::INFINITY;
        for w in [10.0, 50.0, 200.0, 1000.0] {
            let (l, _, _) = ge2e_loss_value(&s, &labels, w, 0.0, &cfg).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-100);
    }

    #[test]
    fn loss_argument_errors() {
        let s = Array2::zeros((4, 2));
        let cfg = LossConfig::default();
        assert!(ge2e_loss_value(&s, &[0, 1, 0], 1.0, 0.0, &cfg).is_err());
        assert!(ge2e_loss_value(&s, &[0, 1, 0, 2], 1.0, 0.0, &cfg).is_err());
        assert!(ge2e_loss_value(&s, &[0, 1, 0, 1], 1.0, 0.0, &LossConfig { gamma: 0.0 }).is_err());
    }
}
