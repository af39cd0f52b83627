//! Log-mel filterbank front end: 16 kHz mono PCM in, `T × 40` log energies out.
//!
//! Per frame: periodic Hann window over 400 samples (25 ms), zero-padded
//! 512-point FFT, power spectrum over 257 bins, 40 triangular HTK-mel filters
//! spanning 125–7500 Hz, then `ln(energy + 1e-6)`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use thiserror::Error;

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const FRAME_LEN: usize = 400;
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const NUM_BINS: usize = FFT_SIZE / 2 + 1;
pub const NUM_MEL: usize = 40;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7500.0;
pub const LOG_FLOOR: f64 = 1e-6;

const CACHE_MAGIC: &[u8; 4] = b"S4KF";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("clip has {len} samples, need at least {FRAME_LEN}")]
    TooShort { len: usize },
    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    SampleRate(u32),
    #[error("empty clip")]
    Empty,
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Mono waveform at 16 kHz with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, FrontendError> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(FrontendError::SampleRate(sample_rate_hz));
        }
        if samples.is_empty() {
            return Err(FrontendError::Empty);
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Log-mel energies, one row per 10 ms hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Array2<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: Array2<f32>) -> Result<Self, FrontendError> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(FrontendError::Empty);
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn frame_count(num_samples: usize) -> Option<usize> {
    (num_samples >= FRAME_LEN).then(|| (num_samples - FRAME_LEN) / HOP + 1)
}

/// Splits a clip into overlapping frames; frame `i` covers `[i·hop, i·hop + frame_len)`.
pub fn frame_signal(clip: &AudioClip, frame_len: usize, hop: usize) -> Result<Vec<&[f32]>, FrontendError> {
    let n = clip.len();
    if n < frame_len {
        return Err(FrontendError::TooShort { len: n });
    }
    let count = (n - frame_len) / hop + 1;
    Ok((0..count)
        .map(|i| &clip.samples[i * hop..i * hop + frame_len])
        .collect())
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter weights, `NUM_MEL × NUM_BINS`, peak 1 at each centre.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new() -> Self {
        let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
        let edges_hz: Vec<f64> = (0..NUM_MEL + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (NUM_MEL + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE_HZ as f64 / FFT_SIZE as f64;
        let weights = Array2::from_shape_fn((NUM_MEL, NUM_BINS), |(m, k)| {
            triangle(&edges_hz[m..m + 3], k as f64 * bin_hz)
        });
        Self { weights, edges_hz }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Lower edge, centre and upper edge of filter `m` in Hz.
    pub fn band(&self, m: usize) -> (f64, f64, f64) {
        (self.edges_hz[m], self.edges_hz[m + 1], self.edges_hz[m + 2])
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

fn triangle(edges: &[f64], f: f64) -> f64 {
    let (l, c, r) = (edges[0], edges[1], edges[2]);
    if f <= l || f >= r {
        0.0
    } else if f <= c {
        (f - l) / (c - l)
    } else {
        (r - f) / (r - c)
    }
}

struct Plan {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: MelFilterbank,
}

fn plan() -> &'static Plan {
    static PLAN: OnceLock<Plan> = OnceLock::new();
    PLAN.get_or_init(|| Plan {
        fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
        window: (0..FRAME_LEN)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_LEN as f64).cos())
            .collect(),
        bank: MelFilterbank::new(),
    })
}

pub fn log_mel_features(clip: &AudioClip) -> Result<FeatureMatrix, FrontendError> {
    let frames = frame_signal(clip, FRAME_LEN, HOP)?;
    let plan = plan();
    let mut out = Array2::<f32>::zeros((frames.len(), NUM_MEL));
    let mut buf = vec![Complex::new(0.0f64, 0.0); FFT_SIZE];
    let mut scratch = vec![Complex::new(0.0f64, 0.0); plan.fft.get_inplace_scratch_len()];
    let mut power = vec![0.0f64; NUM_BINS];

    for (t, frame) in frames.iter().enumerate() {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < FRAME_LEN {
                Complex::new(frame[i] as f64 * plan.window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        plan.fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (m, w) in plan.bank.weights.rows().into_iter().enumerate() {
            let energy: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
            out[[t, m]] = (energy + LOG_FLOOR).ln() as f32;
        }
    }
    FeatureMatrix::new(out)
}

/// Writes the `S4KF` cache: magic, version, T, D (all u32 LE) then T·D f32 LE.
pub fn write_feature_cache(path: &Path, features: &FeatureMatrix) -> Result<(), FrontendError> {
    let (t, d) = features.frames.dim();
    let mut bytes = Vec::with_capacity(16 + 4 * t * d);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(t as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.frames.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix, FrontendError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(FrontendError::Cache(format!("{}: bad magic", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != CACHE_VERSION {
        return Err(FrontendError::Cache(format!("{}: unknown version {}", path.display(), word(4))));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 4 * t * d {
        return Err(FrontendError::Cache(format!("{}: truncated", path.display())));
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let frames = Array2::from_shape_vec((t, d), data).map_err(|e| FrontendError::Cache(e.to_string()))?;
    FeatureMatrix::new(frames)
}
