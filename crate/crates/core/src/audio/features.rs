use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

pub const FEATURE_SAMPLE_RATE: u32 = 16_000;
pub const FRAME_RATE: f64 = 100.0;
pub const NUM_MEL_BANDS: usize = 40;

/// Log-mel front end parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    /// Analysis window in samples (25 ms).
    pub window: usize,
    /// Hop in samples (10 ms).
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: FEATURE_SAMPLE_RATE,
            window: 400,
            hop: 160,
            n_fft: 512,
            n_mels: NUM_MEL_BANDS,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Number of frames produced for `n_samples` samples (trailing partial frame dropped).
    pub fn num_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window {
            0
        } else {
            (n_samples - self.window) / self.hop + 1
        }
    }
}

/// A `T × D` matrix of frame features at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrames {
    data: Array2<f64>,
    frame_rate: f64,
}

impl FeatureFrames {
    pub fn new(data: Array2<f64>, frame_rate: f64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::TooShort("feature matrix has no frames".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        Ok(Self { data, frame_rate })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    /// Frame timestamps `i / frame_rate`.
    pub fn timestamps(&self) -> Vec<f64> {
        (0..self.num_frames()).map(|i| i as f64 / self.frame_rate).collect()
    }

    /// Rows `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        let end = (start + len).min(self.num_frames());
        Self::new(
            self.data.slice(ndarray::s![start.min(end)..end, ..]).to_owned(),
            self.frame_rate,
        )
    }
}

/// Per-dimension mean and standard deviation used to standardize features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Statistics that leave features unchanged.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Pools all frames of a corpus.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a FeatureFrames>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Option<Vec<f64>> = None;
        let mut sum2: Vec<f64> = Vec::new();
        for feats in corpus {
            let d = feats.dim();
            let s = sum.get_or_insert_with(|| vec![0.0; d]);
            if sum2.is_empty() {
                sum2 = vec![0.0; d];
            }
            if s.len() != d {
                return Err(Error::LengthMismatch(format!("feature dimension {d} vs {}", s.len())));
            }
            for row in feats.data.rows() {
                for j in 0..d {
                    s[j] += row[j];
                    sum2[j] += row[j] * row[j];
                }
            }
            count += feats.num_frames();
        }
        let sum = sum.ok_or_else(|| Error::EmptyInput("no feature frames to normalize".into()))?;
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum2
            .iter()
            .zip(&mean)
            .map(|(s2, m)| {
                let var = (s2 / n - m * m).max(0.0);
                if var.sqrt() < 1e-8 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_row(&self, row: ArrayView1<f64>, out: &mut [f64]) {
        for (j, (o, v)) in out.iter_mut().zip(row.iter()).enumerate() {
            *o = (v - self.mean[j]) / self.std[j];
        }
    }

    pub fn apply(&self, feats: &FeatureFrames) -> FeatureFrames {
        let mut data = feats.data.clone();
        for mut row in data.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        FeatureFrames {
            data,
            frame_rate: feats.frame_rate,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided FFT spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels × (n_fft / 2 + 1)`.
    weights: Array2<f64>,
    /// Non-zero span of each filter: first bin and its weights.
    spans: Vec<(usize, Vec<f64>)>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let lo = hz_to_mel(cfg.f_min);
        let hi = hz_to_mel(cfg.f_max);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut weights = Array2::zeros((cfg.n_mels, n_bins));
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
        }
        let spans = weights
            .axis_iter(Axis(0))
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row.iter().skip(first).take(last + 1 - first).copied().collect())
            })
            .collect();
        Self {
            weights,
            spans,
            centers: edges[1..=cfg.n_mels].to_vec(),
        }
    }

    /// Center frequency of every band in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }
}

/// Reusable log-mel extractor (FFT plan, window and filterbank built once).
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("cfg", &self.cfg).finish()
    }
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        // Periodic Hann window.
        let window = (0..cfg.window)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.window as f64).cos())
            .collect();
        let filterbank = MelFilterbank::new(&cfg);
        Self {
            cfg,
            fft,
            window,
            filterbank,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Log-mel energies `ln(power + floor)`, one row per 10 ms hop.
    pub fn extract(&self, wav: &Waveform) -> Result<FeatureFrames> {
        if wav.sample_rate() != self.cfg.sample_rate {
            return Err(Error::SampleRate {
                expected: self.cfg.sample_rate,
                actual: wav.sample_rate(),
            });
        }
        let samples = wav.samples();
        let n_frames = self.cfg.num_frames(samples.len());
        if n_frames == 0 {
            return Err(Error::TooShort(format!(
                "{} samples is less than one {}-sample analysis window",
                samples.len(),
                self.cfg.window
            )));
        }
        let n_bins = self.cfg.n_fft / 2 + 1;
        let mut data = Array2::zeros((n_frames, self.cfg.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        for t in 0..n_frames {
            let start = t * self.cfg.hop;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, w) in self.window.iter().enumerate() {
                buf[i] = Complex::new(samples[start + i] * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, (first, weights)) in self.filterbank.spans.iter().enumerate() {
                let energy: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                data[[t, m]] = (energy + self.cfg.log_floor).ln();
            }
        }
        FeatureFrames::new(data, self.cfg.frame_rate())
    }
}

/// One-shot log-mel extraction with a fresh extractor.
pub fn extract_features(wav: &Waveform, cfg: &FeatureConfig) -> Result<FeatureFrames> {
    FeatureExtractor::new(cfg.clone()).extract(wav)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheSidecar {
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "D")]
    dim: usize,
    frame_rate: f64,
    normalization: Option<FeatureStats>,
}

/// Writes `feats` as little-endian f32 values plus a `<path>.json` sidecar.
pub fn save_feature_cache(path: &Path, feats: &FeatureFrames, stats: Option<&FeatureStats>) -> Result<()> {
    let mut bytes = Vec::with_capacity(feats.data.len() * 4);
    for v in feats.data.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let sidecar = CacheSidecar {
        frames: feats.num_frames(),
        dim: feats.dim(),
        frame_rate: feats.frame_rate,
        normalization: stats.cloned(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_feature_cache(path: &Path) -> Result<(FeatureFrames, Option<FeatureStats>)> {
    let sidecar: CacheSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != sidecar.frames * sidecar.dim * 4 {
        return Err(Error::LengthMismatch(format!(
            "feature cache holds {} bytes, sidecar declares {}×{}",
            bytes.len(),
            sidecar.frames,
            sidecar.dim
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data =
        Array2::from_shape_vec((sidecar.frames, sidecar.dim), values).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok((FeatureFrames::new(data, sidecar.frame_rate)?, sidecar.normalization))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    name.into()
}
