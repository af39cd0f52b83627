//! Manifest-based dataset layer.
//!
//! A manifest is line-delimited JSON, one utterance per line:
//! `{"path": …, "phrase": …, "source": "real"|"tts", "speaker_id": …, "prosody_id": …|null}`.
//! Relative paths resolve against the directory the manifest was read from.

mod speech_commands;
mod toy;
mod wav;

pub use speech_commands::{import_speech_commands, SpeechCommandsSplit};
pub use toy::{toy_generate, ToyOptions, TOY_SIGNATURE_GRID};
pub use wav::{read_wav, write_wav};

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::PhraseIndex;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("duplicate path {0}")]
    DuplicatePath(String),
    #[error("need {needed} phrases with at least {per_phrase} utterances, found {available}")]
    InsufficientPhrases {
        needed: usize,
        per_phrase: usize,
        available: usize,
    },
    #[error("phrase {phrase:?} has {available} utterances, need {needed}")]
    InsufficientUtterances {
        phrase: String,
        available: usize,
        needed: usize,
    },
    #[error("need {needed} utterances, manifest has {available}")]
    InsufficientRecords { needed: usize, available: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("{path}: unsupported audio format ({details})")]
    UnsupportedFormat { path: String, details: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Tts,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub path: String,
    pub phrase: String,
    pub source: Source,
    pub speaker_id: String,
    pub prosody_id: Option<String>,
}

pub fn normalize_phrase(phrase: &str) -> String {
    phrase.trim().to_lowercase()
}

impl UtteranceRecord {
    fn normalized(mut self) -> Result<Self> {
        self.phrase = normalize_phrase(&self.phrase);
        if self.phrase.is_empty() {
            return Err(DataError::InvalidRecord(format!("{}: empty phrase", self.path)));
        }
        if self.path.is_empty() {
            return Err(DataError::InvalidRecord("empty path".into()));
        }
        Ok(self)
    }
}

/// Ordered, duplicate-free list of utterance records.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    records: Vec<UtteranceRecord>,
    root: Option<PathBuf>,
}

impl PartialEq for Manifest {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Manifest {
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self> {
        let records = records
            .into_iter()
            .map(UtteranceRecord::normalized)
            .collect::<Result<Vec<_>>>()?;
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.path.as_str()) {
                return Err(DataError::DuplicatePath(r.path.clone()));
            }
        }
        Ok(Self { records, root: None })
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = Some(root.into());
        self
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Absolute (or cwd-relative) location of a record's audio.
    pub fn resolve(&self, record: &UtteranceRecord) -> PathBuf {
        let p = Path::new(&record.path);
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn phrases(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.phrase.as_str()).collect()
    }

    pub fn phrase_index(&self) -> PhraseIndex {
        PhraseIndex::from_labels(&self.phrases())
    }

    /// Copy with every path resolved, so it can be moved next to other manifests.
    pub fn absolutized(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| UtteranceRecord {
                path: self.resolve(r).display().to_string(),
                ..r.clone()
            })
            .collect();
        Self { records, root: None }
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line).map_err(|e| DataError::ParseError {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest::new(records)?.with_root(root))
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in &manifest.records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `n_phrases` phrases chosen uniformly among those with at least
/// `per_phrase` utterances, then `per_phrase` utterances from each.
pub fn sample_subset(manifest: &Manifest, n_phrases: usize, per_phrase: usize, seed: u64) -> Result<Manifest> {
    let index = manifest.phrase_index();
    if index.len() < n_phrases {
        return Err(DataError::InsufficientPhrases {
            needed: n_phrases,
            per_phrase,
            available: index.len(),
        });
    }
    let eligible: Vec<usize> = (0..index.len())
        .filter(|&p| index.members[p].len() >= per_phrase)
        .collect();
    if eligible.len() < n_phrases {
        let (p, members) = index
            .phrases
            .iter()
            .zip(&index.members)
            .min_by_key(|(_, m)| m.len())
            .unwrap();
        return Err(DataError::InsufficientUtterances {
            phrase: p.clone(),
            available: members.len(),
            needed: per_phrase,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, eligible.len(), n_phrases)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();
    let mut ids = Vec::with_capacity(n_phrases * per_phrase);
    for p in chosen {
        let pool = &index.members[p];
        let mut picks: Vec<usize> = sample(&mut rng, pool.len(), per_phrase).into_iter().map(|i| pool[i]).collect();
        picks.sort_unstable();
        ids.extend(picks);
    }
    Ok(take_records(manifest, &ids))
}

/// `count` utterances uniformly without replacement, regardless of phrase.
pub fn sample_records(manifest: &Manifest, count: usize, seed: u64) -> Result<Manifest> {
    if count > manifest.len() {
        return Err(DataError::InsufficientRecords {
            needed: count,
            available: manifest.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = sample(&mut rng, manifest.len(), count).into_vec();
    ids.sort_unstable();
    Ok(take_records(manifest, &ids))
}

fn take_records(manifest: &Manifest, ids: &[usize]) -> Manifest {
    Manifest {
        records: ids.iter().map(|&i| manifest.records[i].clone()).collect(),
        root: manifest.root.clone(),
    }
}

/// Concatenation of real then synthetic records, paths resolved.
pub fn mix(real: &Manifest, synthetic: &Manifest) -> Result<Manifest> {
    let mut records = real.absolutized().records;
    records.extend(synthetic.absolutized().records);
    Manifest::new(records)
}
