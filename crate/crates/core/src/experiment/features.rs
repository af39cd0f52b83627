//! Featurization of whole manifests, with an optional on-disk `S4KF` cache.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{read_wav, Manifest};
use crate::exec::Exec;
use crate::frontend::{log_mel_features, read_feature_cache, write_feature_cache, FeatureMatrix};
use crate::{io_context, Error, Result};

/// Stable cache file name for an audio path (FNV-1a of the resolved path).
pub fn cache_file_name(audio: &Path) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in audio.to_string_lossy().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let stem = audio
        .file_stem()
        .map(|s| s.to_string_lossy().replace(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '_', "_"))
        .unwrap_or_default();
    format!("{stem}-{h:016x}.feat")
}

fn featurize_file(audio: &Path) -> Result<FeatureMatrix> {
    let clip = read_wav(audio)?;
    Ok(log_mel_features(&clip)?)
}

fn load_one(audio: &Path, cache_dir: Option<&Path>) -> Result<(FeatureMatrix, bool)> {
    let Some(dir) = cache_dir else {
        return Ok((featurize_file(audio)?, false));
    };
    let cached = dir.join(cache_file_name(audio));
    if let Ok(f) = read_feature_cache(&cached) {
        return Ok((f, false));
    }
    let f = featurize_file(audio)?;
    write_feature_cache(&cached, &f)?;
    Ok((f, true))
}

/// Outcome of featurizing a manifest with per-file error collection.
#[derive(Debug, Default)]
pub struct FeaturizeReport {
    pub written: usize,
    pub reused: usize,
    pub failures: Vec<(PathBuf, String)>,
}

/// Writes one cache file per utterance, skipping valid existing ones.
pub fn featurize_manifest(manifest: &Manifest, cache_dir: &Path, exec: Exec) -> Result<FeaturizeReport> {
    fs::create_dir_all(cache_dir).map_err(io_context(format!("creating {}", cache_dir.display())))?;
    let paths: Vec<PathBuf> = manifest.records().iter().map(|r| manifest.resolve(r)).collect();
    let results = exec.map(&paths, |p| load_one(p, Some(cache_dir)));
    let mut report = FeaturizeReport::default();
    for (p, r) in paths.into_iter().zip(results) {
        match r {
            Ok((_, true)) => report.written += 1,
            Ok((_, false)) => report.reused += 1,
            Err(e) => report.failures.push((p, e.to_string())),
        }
    }
    Ok(report)
}

/// Features for every record, in manifest order. Fails on the first bad file.
pub fn load_features(manifest: &Manifest, cache_dir: Option<&Path>, exec: Exec) -> Result<Vec<FeatureMatrix>> {
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir).map_err(io_context(format!("creating {}", dir.display())))?;
    }
    let paths: Vec<PathBuf> = manifest.records().iter().map(|r| manifest.resolve(r)).collect();
    exec.map(&paths, |p| load_one(p, cache_dir).map(|(f, _)| f))
        .into_iter()
        .collect()
}

/// Features keyed by resolved audio path, shared across sweep cells.
#[derive(Debug, Default)]
pub struct FeatureStore {
    index: HashMap<PathBuf, usize>,
    feats: Vec<FeatureMatrix>,
}

impl FeatureStore {
    pub fn add_manifest(&mut self, manifest: &Manifest, cache_dir: Option<&Path>, exec: Exec) -> Result<()> {
        let (missing, records): (Vec<PathBuf>, Vec<_>) = manifest
            .records()
            .iter()
            .filter_map(|r| {
                let p = manifest.resolve(r);
                let rec = crate::data::UtteranceRecord {
                    path: p.display().to_string(),
                    ..r.clone()
                };
                (!self.index.contains_key(&p)).then_some((p, rec))
            })
            .unzip();
        let subset = Manifest::new(records)?;
        let feats = load_features(&subset, cache_dir, exec)?;
        for (p, f) in missing.into_iter().zip(feats) {
            self.index.insert(p, self.feats.len());
            self.feats.push(f);
        }
        Ok(())
    }

    /// Features for `manifest` in record order; every record must have been added.
    pub fn lookup(&self, manifest: &Manifest) -> Result<Vec<FeatureMatrix>> {
        manifest
            .records()
            .iter()
            .map(|r| {
                let p = manifest.resolve(r);
                self.index
                    .get(&p)
                    .map(|&i| self.feats[i].clone())
                    .ok_or_else(|| Error::Experiment(super::ExperimentError::Config(format!("no features for {}", p.display()))))
            })
            .collect()
    }
}
