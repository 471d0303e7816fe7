//! Synthetic corpus with known time-varying emotion mixtures, and the
//! preference oracle that stands in for human annotators.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, FEATURE_SAMPLE_RATE};
use crate::dirichlet::dir_sample;
use crate::emotion::{AlphaVector, EmotionSequence, EmotionVector, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::evalkit::mae;

/// Centre frequency of each emotion's noise band, in Hz.
pub const SIGNATURE_CENTERS_HZ: [f64; NUM_EMOTIONS] = [300.0, 700.0, 1200.0, 2000.0, 3200.0, 5000.0];
/// Amplitude-modulation rate of each emotion's signature, in Hz.
pub const SIGNATURE_AM_HZ: [f64; NUM_EMOTIONS] = [2.0, 3.5, 5.0, 7.0, 9.0, 12.0];
const BAND_HALF_WIDTH: f64 = 0.1;
const AM_DEPTH: f64 = 0.5;
const SIGNATURE_RMS: f64 = 0.12;
const BACKGROUND_RMS: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_tracks: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Mean segment length; each segment lasts this times U(0.5, 1.5).
    pub mean_segment_s: f64,
    /// Mixture sharpness κ.
    pub kappa: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tracks: 60,
            min_duration_s: 4.0,
            max_duration_s: 10.0,
            mean_segment_s: 2.0,
            kappa: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if !(self.min_duration_s >= 1.5 && self.max_duration_s >= self.min_duration_s) {
            return Err(Error::Invalid(
                "track durations must be at least 1.5 s and min ≤ max".into(),
            ));
        }
        if !(self.kappa > 0.0) || !(self.mean_segment_s > 0.0) {
            return Err(Error::Invalid("kappa and segment length must be positive".into()));
        }
        Ok(())
    }
}

/// One synthetic track and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrack {
    pub id: String,
    pub wav: Waveform,
    /// Mixture at each change point.
    pub gt: EmotionSequence,
    /// Dominant emotion, for single-segment clips.
    pub label: Option<usize>,
}

fn track_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn band_noise(n: usize, center: f64, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let rate = FEATURE_SAMPLE_RATE as f64;
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(StandardNormal.sample(rng), 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let (lo, hi) = (center * (1.0 - BAND_HALF_WIDTH), center * (1.0 + BAND_HALF_WIDTH));
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * rate / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    out.into_iter().map(|v| v / rms).collect()
}

/// Unit-RMS signature of one emotion: band-limited noise with a slow
/// amplitude modulation.
fn signature(emotion: usize, n: usize, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let rate = FEATURE_SAMPLE_RATE as f64;
    let phase = rng.random_range(0.0..2.0 * PI);
    let norm = (1.0 + AM_DEPTH * AM_DEPTH / 2.0).sqrt();
    band_noise(n, SIGNATURE_CENTERS_HZ[emotion], rng, planner)
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let am = 1.0 + AM_DEPTH * (2.0 * PI * SIGNATURE_AM_HZ[emotion] * i as f64 / rate + phase).sin();
            v * am / norm
        })
        .collect()
}

/// Draws a mixture whose largest component is `emotion`.
fn dominant_mixture(emotion: usize, kappa: f64, rng: &mut ChaCha8Rng) -> EmotionVector {
    let mut alpha = [0.5; NUM_EMOTIONS];
    alpha[emotion] += kappa;
    let alpha = AlphaVector::new(alpha).expect("positive concentrations");
    loop {
        let m = dir_sample(&alpha, rng);
        if m.argmax() == emotion {
            return m;
        }
    }
}

/// Renders a track from `(start time, mixture)` segments. Each signature's
/// power is proportional to its mixture weight.
fn render(segments: &[(f64, EmotionVector)], n: usize, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let rate = FEATURE_SAMPLE_RATE as f64;
    let mut planner = FftPlanner::new();
    let sigs: Vec<Vec<f64>> = (0..NUM_EMOTIONS).map(|e| signature(e, n, rng, &mut planner)).collect();
    let mut out = vec![0.0; n];
    let mut seg = 0;
    for (i, sample) in out.iter_mut().enumerate() {
        let t = i as f64 / rate;
        while seg + 1 < segments.len() && segments[seg + 1].0 <= t {
            seg += 1;
        }
        let m = segments[seg].1;
        let mut acc = 0.0;
        for (e, sig) in sigs.iter().enumerate() {
            acc += m.values()[e].sqrt() * sig[i];
        }
        let bg: f64 = StandardNormal.sample(rng);
        *sample = SIGNATURE_RMS * acc + BACKGROUND_RMS * bg;
    }
    Waveform::new(out, FEATURE_SAMPLE_RATE)
}

/// Multi-segment tracks with change points roughly every `mean_segment_s`.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<Vec<SynthTrack>> {
    cfg.validate()?;
    (0..cfg.n_tracks)
        .map(|i| {
            let mut rng = track_rng(cfg.seed, i);
            let duration = if cfg.max_duration_s > cfg.min_duration_s {
                rng.random_range(cfg.min_duration_s..cfg.max_duration_s)
            } else {
                cfg.min_duration_s
            };
            let n = (duration * FEATURE_SAMPLE_RATE as f64).round() as usize;
            let mut segments = Vec::new();
            let mut t = 0.0;
            let mut prev: Option<usize> = None;
            while t < duration {
                let emotion = loop {
                    let e = rng.random_range(0..NUM_EMOTIONS);
                    if Some(e) != prev {
                        break e;
                    }
                };
                segments.push((t, dominant_mixture(emotion, cfg.kappa, &mut rng)));
                prev = Some(emotion);
                t += cfg.mean_segment_s * rng.random_range(0.5..1.5);
            }
            let wav = render(&segments, n, &mut rng)?;
            Ok(SynthTrack {
                id: format!("track-{:04}", i),
                wav,
                gt: EmotionSequence::from_pairs(segments)?,
                label: None,
            })
        })
        .collect()
}

/// Single-segment clips of 1.5–3 s with labels cycling through all six
/// emotions.
pub fn gen_single_emotion_clips(n_clips: usize, kappa: f64, seed: u64) -> Result<Vec<SynthTrack>> {
    if !(kappa > 0.0) {
        return Err(Error::Invalid("kappa must be positive".into()));
    }
    (0..n_clips)
        .map(|i| {
            let mut rng = track_rng(seed, i);
            let label = i % NUM_EMOTIONS;
            let duration = rng.random_range(1.5..3.0);
            let n = (duration * FEATURE_SAMPLE_RATE as f64).round() as usize;
            let m = dominant_mixture(label, kappa, &mut rng);
            let wav = render(&[(0.0, m)], n, &mut rng)?;
            Ok(SynthTrack {
                id: format!("clip-{:04}", i),
                wav,
                gt: EmotionSequence::from_pairs([(0.0, m)])?,
                label: Some(label),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

/// Prefers the candidate closer to `gt` by MAE; ties go to `a`. With
/// probability `flip_prob` the decision is inverted.
pub fn oracle_prefer<R: Rng + ?Sized>(
    gt: &EmotionSequence,
    a: &EmotionSequence,
    b: &EmotionSequence,
    flip_prob: f64,
    rng: &mut R,
) -> Result<Choice> {
    let (ma, mb) = (mae(a, gt)?, mae(b, gt)?);
    let honest = if mb < ma - 1e-9 { Choice::B } else { Choice::A };
    let flip = flip_prob > 0.0 && rng.random::<f64>() < flip_prob;
    Ok(match (honest, flip) {
        (c, false) => c,
        (Choice::A, true) => Choice::B,
        (Choice::B, true) => Choice::A,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_tracks: 3,
            min_duration_s: 2.0,
            max_duration_s: 4.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn corpus_is_reproducible() {
        assert_eq!(gen_corpus(&small()).unwrap(), gen_corpus(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(gen_corpus(&other).unwrap()[0].wav, gen_corpus(&small()).unwrap()[0].wav);
    }

    #[test]
    fn segments_change_dominant_emotion() {
        for track in gen_corpus(&small()).unwrap() {
            let e = track.gt.emotions();
            for w in e.windows(2) {
                assert_ne!(w[0].argmax(), w[1].argmax());
            }
            assert!(track.gt.last_time() < track.wav.duration());
            assert!(track.wav.samples().iter().all(|s| s.abs() <= 1.0));
        }
    }

    #[test]
    fn single_emotion_clips_have_one_frame_and_balanced_labels() {
        let clips = gen_single_emotion_clips(12, 8.0, 3).unwrap();
        let mut counts = [0; NUM_EMOTIONS];
        for c in &clips {
            assert_eq!(c.gt.len(), 1);
            let label = c.label.unwrap();
            assert_eq!(c.gt.frames()[0].e.argmax(), label);
            counts[label] += 1;
            let d = c.wav.duration();
            assert!((1.5..=3.0).contains(&d));
        }
        assert_eq!(counts, [2; NUM_EMOTIONS]);
    }

    #[test]
    fn oracle_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = EmotionVector::uniform();
        let x = EmotionVector::from_raw([5.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let gt = EmotionSequence::from_pairs([(0.0, x), (1.0, x)]).unwrap();
        let far = EmotionSequence::from_pairs([(0.0, u)]).unwrap();
        assert_eq!(oracle_prefer(&gt, &gt, &far, 0.0, &mut rng).unwrap(), Choice::A);
        assert_eq!(oracle_prefer(&gt, &far, &gt, 0.0, &mut rng).unwrap(), Choice::B);
        assert_eq!(oracle_prefer(&gt, &far, &far, 0.0, &mut rng).unwrap(), Choice::A);
        assert_eq!(oracle_prefer(&gt, &gt, &far, 1.0, &mut rng).unwrap(), Choice::B);
    }
}
