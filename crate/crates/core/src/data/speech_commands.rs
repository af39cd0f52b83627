//! Importer for the Speech Commands archive layout: one directory per word,
//! files named `<speaker>_nohash_<n>.wav`, plus `testing_list.txt` and
//! `validation_list.txt` listing `word/file.wav` paths.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, Manifest, Result, Source, UtteranceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SpeechCommandsSplit {
    Train,
    Validation,
    Test,
    All,
}

fn read_list(path: &Path) -> Result<HashSet<String>> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn import_speech_commands(root: &Path, split: SpeechCommandsSplit) -> Result<Manifest> {
    let testing = read_list(&root.join("testing_list.txt"))?;
    let validation = read_list(&root.join("validation_list.txt"))?;

    let mut words: Vec<String> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|w| !w.starts_with('_') && !w.starts_with('.'))
        .collect();
    words.sort();

    let mut records = Vec::new();
    for word in words {
        let dir = root.join(&word);
        let mut files: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|f| f.ends_with(".wav"))
            .collect();
        files.sort();
        for file in files {
            let rel = format!("{word}/{file}");
            let in_test = testing.contains(&rel);
            let in_val = validation.contains(&rel);
            let keep = match split {
                SpeechCommandsSplit::All => true,
                SpeechCommandsSplit::Test => in_test,
                SpeechCommandsSplit::Validation => in_val,
                SpeechCommandsSplit::Train => !in_test && !in_val,
            };
            if !keep {
                continue;
            }
            let speaker = file.split("_nohash_").next().unwrap_or(&file).to_string();
            records.push(UtteranceRecord {
                path: rel,
                phrase: word.clone(),
                source: Source::Real,
                speaker_id: speaker,
                prosody_id: None,
            });
        }
    }
    Ok(Manifest::new(records)?.with_root(root))
}
