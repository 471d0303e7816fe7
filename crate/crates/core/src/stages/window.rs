use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, resample, FeatureConfig, FeatureExtractor, Waveform, FEATURE_SAMPLE_RATE};
use crate::emotion::EmotionSequence;
use crate::error::{Error, Result};
use crate::model::{predict_pooled, ModelParams};

/// Longest admissible analysis window, in seconds.
pub const MAX_WINDOW_S: f64 = 5.0;
/// Range from which candidate windows and strides are drawn, in seconds.
pub const CANDIDATE_RANGE_S: (f64, f64) = (0.25, 1.25);
const DUPLICATE_TOLERANCE_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_s: f64,
    pub stride_s: f64,
}

impl WindowSpec {
    /// Requires `0 < stride ≤ window ≤ 5` seconds.
    pub fn new(window_s: f64, stride_s: f64) -> Result<Self> {
        if !(stride_s > 0.0 && stride_s <= window_s && window_s <= MAX_WINDOW_S) {
            return Err(Error::Invalid(format!(
                "window {window_s} s / stride {stride_s} s must satisfy 0 < stride ≤ window ≤ {MAX_WINDOW_S}"
            )));
        }
        Ok(Self { window_s, stride_s })
    }

    /// Windows that fit in `duration`; the trailing partial window is dropped.
    pub fn count(&self, duration: f64) -> usize {
        if duration < self.window_s {
            return 0;
        }
        ((duration - self.window_s) / self.stride_s + 1e-9).floor() as usize + 1
    }
}

/// Loads a WAV file and resamples it to the feature rate.
pub fn load_audio_16k(path: impl AsRef<Path>) -> Result<Waveform> {
    let wav = load_wav(path.as_ref())?;
    resample(&wav, FEATURE_SAMPLE_RATE)
}

/// Runs the whole-clip model on uniformly spaced windows. Each window's
/// mixture is stamped at the window centre.
pub fn sliding_window_predict(params: &ModelParams, wav: &Waveform, spec: WindowSpec) -> Result<EmotionSequence> {
    let wav = resample(wav, FEATURE_SAMPLE_RATE)?;
    let duration = wav.duration();
    let n = spec.count(duration);
    if n == 0 {
        return Err(Error::AudioTooShort {
            duration,
            window: spec.window_s,
        });
    }
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let rate = wav.sample_rate() as f64;
    let win_len = (spec.window_s * rate).round() as usize;
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let start_s = k as f64 * spec.stride_s;
        let start = ((start_s * rate).round() as usize).min(wav.len() - win_len.min(wav.len()));
        let clip = wav.slice(start, win_len)?;
        let feats = extractor.extract(&clip)?;
        frames.push((start_s + spec.window_s / 2.0, predict_pooled(params, &feats)?));
    }
    EmotionSequence::from_pairs(frames)
}

/// Sliding-window sequences for in-memory tracks.
pub fn gen_seq_dataset(
    params: &ModelParams,
    tracks: &[(String, Waveform)],
    spec: WindowSpec,
) -> Result<Vec<(String, EmotionSequence)>> {
    if tracks.is_empty() {
        return Err(Error::EmptyInput("no tracks".into()));
    }
    tracks
        .iter()
        .map(|(id, wav)| Ok((id.clone(), sliding_window_predict(params, wav, spec)?)))
        .collect()
}

/// Sliding-window sequences for WAV files. Unreadable files are skipped
/// with a warning; it is an error if nothing is left.
pub fn gen_seq_dataset_from_paths(
    params: &ModelParams,
    paths: &[(String, PathBuf)],
    spec: WindowSpec,
) -> Result<Vec<(String, EmotionSequence)>> {
    let mut out = Vec::new();
    for (id, path) in paths {
        let seq = load_audio_16k(path).and_then(|wav| sliding_window_predict(params, &wav, spec));
        match seq {
            Ok(s) => out.push((id.clone(), s)),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("every track was skipped".into()));
    }
    Ok(out)
}

/// One sliding-window candidate sequence and the spec that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub spec: WindowSpec,
    pub sequence: EmotionSequence,
}

/// `k` candidate sequences from randomly drawn window/stride pairs.
///
/// Windows are uniform in the candidate range and strides uniform between
/// its lower end and the window. A draw is rejected when both values are
/// within 0.05 s of an earlier draw.
pub fn gen_preference_candidates<R: Rng + ?Sized>(
    params: &ModelParams,
    wav: &Waveform,
    k: usize,
    range: (f64, f64),
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi >= lo && hi <= MAX_WINDOW_S) {
        return Err(Error::Invalid(format!("bad candidate range [{lo}, {hi}]")));
    }
    if wav.duration() < hi {
        return Err(Error::AudioTooShort {
            duration: wav.duration(),
            window: hi,
        });
    }
    let mut specs: Vec<WindowSpec> = Vec::with_capacity(k);
    let mut attempts = 0;
    while specs.len() < k {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Invalid(format!(
                "could not draw {k} distinct window/stride pairs from [{lo}, {hi}]"
            )));
        }
        let window = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let stride = if window > lo { rng.random_range(lo..=window) } else { lo };
        let spec = WindowSpec::new(window, stride)?;
        let duplicate = specs.iter().any(|s| {
            (s.window_s - window).abs() < DUPLICATE_TOLERANCE_S && (s.stride_s - stride).abs() < DUPLICATE_TOLERANCE_S
        });
        if !duplicate {
            specs.push(spec);
        }
    }
    specs
        .into_iter()
        .map(|spec| {
            Ok(Candidate {
                spec,
                sequence: sliding_window_predict(params, wav, spec)?,
            })
        })
        .collect()
}

/// Picks `n` distinct unordered index pairs out of `k` candidates.
pub fn choose_pairs<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}
