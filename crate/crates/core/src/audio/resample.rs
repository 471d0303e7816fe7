use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side of its center.
pub const TAPS_PER_SIDE: usize = 32;
/// Kaiser window shape parameter.
pub const KAISER_BETA: f64 = 8.0;
const CUTOFF_FRACTION: f64 = 0.95;
const MAX_TABLE_PHASES: u64 = 4096;

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

struct Kernel {
    cutoff: f64,
    half_width: f64,
    norm: f64,
}

impl Kernel {
    fn eval(&self, d: f64) -> f64 {
        let u = d / self.half_width;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let x = self.cutoff * d;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        let window = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / self.norm;
        self.cutoff * sinc * window
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The rate ratio is reduced to `up / down`; for moderate `up` the kernel is
/// tabulated once per output phase. Matching rates return the input unchanged.
pub fn resample(wav: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Invalid("target rate must be positive".into()));
    }
    let in_rate = wav.sample_rate() as u64;
    let out_rate = target_rate as u64;
    if in_rate == out_rate {
        return Ok(wav.clone());
    }
    let g = gcd(in_rate, out_rate);
    let up = out_rate / g;
    let down = in_rate / g;

    let cutoff = (out_rate as f64 / in_rate as f64).min(1.0) * CUTOFF_FRACTION;
    let half_width = TAPS_PER_SIDE as f64 / cutoff;
    let kernel = Kernel {
        cutoff,
        half_width,
        norm: bessel_i0(KAISER_BETA),
    };
    let reach = half_width.ceil() as i64;
    let taps = (2 * reach) as usize;

    let input = wav.samples();
    let n_in = input.len() as u64;
    let n_out = ((n_in * up) as f64 / down as f64).round() as u64;

    let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                (0..taps)
                    .map(|j| kernel.eval(frac - (j as i64 - reach + 1) as f64))
                    .collect()
            })
            .collect()
    });

    let mut out = Vec::with_capacity(n_out as usize);
    for n in 0..n_out {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let mut acc = 0.0;
        for j in 0..taps {
            let k = base + j as i64 - reach + 1;
            if k < 0 || k >= n_in as i64 {
                continue;
            }
            let w = match &table {
                Some(t) => t[phase as usize][j],
                None => kernel.eval(phase as f64 / up as f64 - (j as i64 - reach + 1) as f64),
            };
            acc += w * input[k as usize];
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, rate: u32, seconds: f64, amp: f64) -> Waveform {
        let n = (rate as f64 * seconds) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
                .collect(),
            rate,
        )
        .unwrap()
    }

    /// Frequency of the largest FFT bin, refined by parabolic interpolation
    /// of the log magnitude.
    fn peak_frequency(wav: &Waveform) -> f64 {
        let n = wav.len();
        let mut buf: Vec<Complex<f64>> = wav
            .samples()
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                Complex::new(s * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm().ln()).collect();
        let k = (1..mags.len() - 1)
            .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
            .unwrap();
        let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
        let offset = 0.5 * (a - c) / (a - 2.0 * b + c);
        (k as f64 + offset) * wav.sample_rate() as f64 / n as f64
    }

    #[test]
    fn identity_when_rates_match() {
        let wav = sine(440.0, 16_000, 0.5, 0.3);
        assert_eq!(resample(&wav, 16_000).unwrap(), wav);
    }

    #[test]
    fn downsampled_sine_keeps_its_frequency() {
        let wav = sine(440.0, 48_000, 10.0, 0.5);
        let out = resample(&wav, 16_000).unwrap();
        assert_eq!(out.sample_rate(), 16_000);
        let f = peak_frequency(&out);
        assert!((f - 440.0).abs() < 0.1, "peak at {f} Hz");
    }

    #[test]
    fn irregular_ratio_preserves_duration_and_frequency() {
        let wav = sine(1000.0, 44_100, 2.0, 0.5);
        let out = resample(&wav, 16_000).unwrap();
        assert!((out.duration() - wav.duration()).abs() <= 1.0 / 16_000.0);
        assert!((peak_frequency(&out) - 1000.0).abs() < 0.5);

        let up = resample(&sine(300.0, 8_000, 1.0, 0.5), 16_000).unwrap();
        assert!((up.duration() - 1.0).abs() <= 1.0 / 16_000.0);
        assert!((peak_frequency(&up) - 300.0).abs() < 0.5);
    }

    #[test]
    fn components_above_the_new_nyquist_are_suppressed() {
        let wav = sine(11_000.0, 48_000, 1.0, 0.5);
        let out = resample(&wav, 16_000).unwrap();
        let interior = &out.samples()[1000..15_000];
        let rms = (interior.iter().map(|s| s * s).sum::<f64>() / interior.len() as f64).sqrt();
        assert!(rms < 1e-3, "aliased rms {rms}");
    }
}
