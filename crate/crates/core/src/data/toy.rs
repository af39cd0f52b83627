//! Deterministic toy corpus standing in for synthesized speech.
//!
//! Each phrase is a sequence of three tones drawn from a 12-step log grid over
//! 300–3000 Hz; no two phrases share a sequence and adjacent tones differ.
//! Every utterance varies speaker pitch (±3 %), prosody (segment timing),
//! amplitude (±20 %) and duration (0.8–1.2 s) and carries white noise at
//! 20 dB SNR.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{io_err, write_manifest, DataError, Manifest, Result, Source, UtteranceRecord};
use crate::frontend::{AudioClip, SAMPLE_RATE_HZ};

pub const TOY_SIGNATURE_GRID: usize = 12;
const LOW_HZ: f64 = 300.0;
const HIGH_HZ: f64 = 3000.0;
const NUM_SPEAKERS: u64 = 32;
const SNR_DB: f64 = 20.0;
const FADE: usize = 160;
const PROSODIES: [[f64; 3]; 5] = [
    [1.0, 1.0, 1.0],
    [1.3, 0.85, 0.85],
    [0.85, 1.3, 0.85],
    [0.85, 0.85, 1.3],
    [1.15, 0.7, 1.15],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyOptions {
    pub n_phrases: usize,
    pub per_phrase: usize,
    pub seed: u64,
    /// First global phrase index; corpora with the same seed and disjoint
    /// index ranges never share a tone signature.
    pub phrase_offset: usize,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(seed: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let s = mix64(mix64(mix64(seed ^ 0x5eed) ^ a) ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ c;
    ChaCha8Rng::seed_from_u64(mix64(s))
}

pub fn grid_frequency(step: usize) -> f64 {
    LOW_HZ * (HIGH_HZ / LOW_HZ).powf(step as f64 / (TOY_SIGNATURE_GRID - 1) as f64)
}

/// Tone-grid indices for phrases `0..count`, in order. Draws that repeat an
/// earlier signature (or repeat a tone back to back) are redrawn.
pub fn signatures(seed: u64, count: usize) -> Result<Vec<[usize; 3]>> {
    let capacity = TOY_SIGNATURE_GRID * (TOY_SIGNATURE_GRID - 1) * (TOY_SIGNATURE_GRID - 1);
    if count > capacity {
        return Err(DataError::Invalid(format!(
            "toy corpus supports at most {capacity} phrases, asked for {count}"
        )));
    }
    let mut rng = stream(seed, u64::MAX, 0, 0);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let sig = [
            rng.random_range(0..TOY_SIGNATURE_GRID),
            rng.random_range(0..TOY_SIGNATURE_GRID),
            rng.random_range(0..TOY_SIGNATURE_GRID),
        ];
        if sig[0] == sig[1] || sig[1] == sig[2] {
            continue;
        }
        if seen.insert(sig) {
            out.push(sig);
        }
    }
    Ok(out)
}

pub fn toy_phrase_name(global_index: usize) -> String {
    format!("toy{global_index:04}")
}

fn speaker_factor(seed: u64, speaker: u64) -> f64 {
    1.0 + stream(seed, u64::MAX - 1, speaker, 0).random_range(-0.03..0.03)
}

/// One toy utterance: audio plus its speaker and prosody ids.
pub fn toy_utterance(seed: u64, signature: [usize; 3], phrase: usize, utt: usize) -> (AudioClip, String, String) {
    let mut rng = stream(seed, phrase as u64, utt as u64, 1);
    let speaker = rng.random_range(0..NUM_SPEAKERS);
    let prosody = rng.random_range(0..PROSODIES.len());
    let amp = 0.5 * rng.random_range(0.8..1.2);
    let duration = rng.random_range(0.8..1.2);
    let n = (duration * SAMPLE_RATE_HZ as f64).round() as usize;
    let pitch = speaker_factor(seed, speaker);

    let weights = PROSODIES[prosody];
    let total: f64 = weights.iter().sum();
    let b1 = (n as f64 * weights[0] / total) as usize;
    let b2 = b1 + (n as f64 * weights[1] / total) as usize;

    let mut clean = Vec::with_capacity(n);
    let mut phase = 0.0f64;
    for i in 0..n {
        let seg = if i < b1 {
            0
        } else if i < b2 {
            1
        } else {
            2
        };
        let f = grid_frequency(signature[seg]) * pitch;
        phase += 2.0 * std::f64::consts::PI * f / SAMPLE_RATE_HZ as f64;
        let env = ((i.min(n - 1 - i)) as f64 / FADE as f64).min(1.0);
        clean.push(amp * env * phase.sin());
    }
    let power = clean.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let sigma = (power / 10f64.powf(SNR_DB / 10.0)).sqrt();
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let samples = clean
        .into_iter()
        .map(|x| (x + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32)
        .collect();
    let clip = AudioClip::new(samples, SAMPLE_RATE_HZ).expect("toy clips are non-empty");
    (clip, format!("spk{speaker:02}"), format!("prosody{prosody}"))
}

/// Writes WAVs under `out_dir/wav/` and `out_dir/manifest.jsonl`.
pub fn toy_generate(options: &ToyOptions, out_dir: &Path) -> Result<Manifest> {
    if options.n_phrases == 0 {
        return Err(DataError::Invalid("toy corpus needs at least one phrase".into()));
    }
    let sigs = signatures(options.seed, options.phrase_offset + options.n_phrases)?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(io_err(&wav_dir))?;
    let mut records = Vec::with_capacity(options.n_phrases * options.per_phrase);
    for (p, &sig) in sigs.iter().enumerate().skip(options.phrase_offset) {
        let phrase = toy_phrase_name(p);
        for u in 0..options.per_phrase {
            let (clip, speaker, prosody) = toy_utterance(options.seed, sig, p, u);
            let rel = format!("wav/{phrase}_{u:03}.wav");
            super::write_wav(&out_dir.join(&rel), clip.samples())?;
            records.push(UtteranceRecord {
                path: rel,
                phrase: phrase.clone(),
                source: Source::Tts,
                speaker_id: speaker,
                prosody_id: Some(prosody),
            });
        }
    }
    let manifest = Manifest::new(records)?.with_root(out_dir);
    write_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_are_distinct_and_prefix_stable() {
        let a = signatures(3, 200).unwrap();
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 200);
        assert_eq!(&signatures(3, 50).unwrap()[..], &a[..50]);
        assert!(a.iter().all(|s| s[0] != s[1] && s[1] != s[2]));
        assert!(signatures(3, 5000).is_err());
    }

    #[test]
    fn grid_spans_band() {
        assert!((grid_frequency(0) - 300.0).abs() < 1e-9);
        assert!((grid_frequency(TOY_SIGNATURE_GRID - 1) - 3000.0).abs() < 1e-9);
    }

    #[test]
    fn utterances_are_deterministic_and_bounded() {
        let sig = [0, 5, 9];
        let (a, s1, p1) = toy_utterance(1, sig, 0, 4);
        let (b, s2, p2) = toy_utterance(1, sig, 0, 4);
        assert_eq!(a, b);
        assert_eq!((s1, p1), (s2, p2));
        assert!((12_800..=19_200).contains(&a.len()));
        assert!(a.samples().iter().all(|x| x.abs() <= 1.0));
        let (c, _, _) = toy_utterance(1, sig, 0, 5);
        assert_ne!(a, c);
    }

    #[test]
    fn writes_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let opts = ToyOptions { n_phrases: 3, per_phrase: 4, seed: 2, phrase_offset: 0 };
        let m = toy_generate(&opts, dir.path()).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(fs::read_dir(dir.path().join("wav")).unwrap().count(), 12);
        let back = super::super::read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(back, m);
        assert!(m.records().iter().all(|r| r.source == Source::Tts && r.prosody_id.is_some()));
        let clip = super::super::read_wav(&m.resolve(&m.records()[0])).unwrap();
        assert!(clip.len() >= 12_800);
    }
}
