use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    Shift,
    Crop,
    Noise,
}

impl AugmentMode {
    pub const ALL: [AugmentMode; 3] = [AugmentMode::Shift, AugmentMode::Crop, AugmentMode::Noise];
}

/// Largest circular shift as a fraction of the length.
pub const MAX_SHIFT_FRACTION: f64 = 0.1;
/// Shortest crop as a fraction of the length.
pub const MIN_CROP_FRACTION: f64 = 0.8;
pub const NOISE_SNR_DB: (f64, f64) = (15.0, 30.0);

/// Applies one randomly parameterized augmentation.
pub fn augment<R: Rng + ?Sized>(wav: &Waveform, mode: AugmentMode, rng: &mut R) -> Result<Waveform> {
    let n = wav.len();
    match mode {
        AugmentMode::Shift => {
            let max = (n as f64 * MAX_SHIFT_FRACTION).floor() as i64;
            shift_by(wav, rng.random_range(-max..=max))
        }
        AugmentMode::Crop => {
            let min_len = (n as f64 * MIN_CROP_FRACTION).ceil() as usize;
            let len = rng.random_range(min_len..=n);
            let start = rng.random_range(0..=n - len);
            crop(wav, start, len)
        }
        AugmentMode::Noise => {
            let snr = rng.random_range(NOISE_SNR_DB.0..=NOISE_SNR_DB.1);
            add_noise_at_snr(wav, snr, rng)
        }
    }
}

/// Circular shift by `k` samples (positive delays the signal).
pub fn shift_by(wav: &Waveform, k: i64) -> Result<Waveform> {
    let n = wav.len() as i64;
    let k = k.rem_euclid(n) as usize;
    let mut out = wav.samples().to_vec();
    out.rotate_right(k);
    Waveform::new(out, wav.sample_rate())
}

/// Contiguous excerpt `[start, start + len)`; shorter than 0.2 s is an error.
pub fn crop(wav: &Waveform, start: usize, len: usize) -> Result<Waveform> {
    wav.slice(start, len)
}

/// Adds white Gaussian noise whose power sits `snr_db` below the signal power.
pub fn add_noise_at_snr<R: Rng + ?Sized>(wav: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    let power = wav.samples().iter().map(|s| s * s).sum::<f64>() / wav.len() as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let noisy = wav
        .samples()
        .iter()
        .map(|&s| s + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Waveform::new(noisy, wav.sample_rate())
}
