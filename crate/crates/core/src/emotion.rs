//! Emotion mixtures, Dirichlet parameters and the records exchanged between
//! pipeline stages.
//!
//! Every vector is ordered `anger, disgust, fear, joy, neutral, sadness`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of emotion categories.
pub const NUM_EMOTIONS: usize = 6;

/// Category names in serialization order.
pub const EMOTION_NAMES: [&str; NUM_EMOTIONS] = ["anger", "disgust", "fear", "joy", "neutral", "sadness"];

/// Smallest component of an [`EmotionVector`]; keeps Dirichlet log-densities finite.
pub const SIMPLEX_FLOOR: f64 = 1e-6;

/// Smallest admissible Dirichlet concentration.
pub const ALPHA_FLOOR: f64 = 1e-6;

const SUM_TOLERANCE: f64 = 1e-9;

/// A point in the interior of the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_EMOTIONS]", into = "[f64; NUM_EMOTIONS]")]
pub struct EmotionVector([f64; NUM_EMOTIONS]);

impl EmotionVector {
    /// Projects `raw` into the simplex interior.
    ///
    /// Negative entries count as zero. Entries that would fall below
    /// [`SIMPLEX_FLOOR`] are pinned to it and the remaining mass is
    /// rescaled so the result sums to one.
    pub fn from_raw(raw: [f64; NUM_EMOTIONS]) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut p = raw.map(|v| v.max(0.0));
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            return Err(Error::AllZero);
        }
        p.iter_mut().for_each(|v| *v /= total);

        let mut floored = [false; NUM_EMOTIONS];
        loop {
            let mut changed = false;
            for i in 0..NUM_EMOTIONS {
                if !floored[i] && p[i] < SIMPLEX_FLOOR {
                    floored[i] = true;
                    changed = true;
                }
            }
            let n_floored = floored.iter().filter(|&&f| f).count();
            let free_mass: f64 = (0..NUM_EMOTIONS).filter(|&i| !floored[i]).map(|i| p[i]).sum();
            let target = 1.0 - n_floored as f64 * SIMPLEX_FLOOR;
            for i in 0..NUM_EMOTIONS {
                p[i] = if floored[i] {
                    SIMPLEX_FLOOR
                } else {
                    p[i] * target / free_mass
                };
            }
            if !changed {
                break;
            }
        }
        Ok(Self(p))
    }

    /// The uniform mixture.
    pub fn uniform() -> Self {
        Self([1.0 / NUM_EMOTIONS as f64; NUM_EMOTIONS])
    }

    /// Checks the invariants without modifying the values.
    pub fn new(values: [f64; NUM_EMOTIONS]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(v) = values
            .iter()
            .find(|&&v| !(SIMPLEX_FLOOR * (1.0 - 1e-9)..=1.0).contains(&v))
        {
            return Err(Error::Invalid(format!(
                "emotion component {v} outside [{SIMPLEX_FLOOR}, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Invalid(format!("emotion vector sums to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64; NUM_EMOTIONS] {
        &self.0
    }

    /// Index of the largest component; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Mean absolute difference over the six components.
    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / NUM_EMOTIONS as f64
    }
}

impl TryFrom<[f64; NUM_EMOTIONS]> for EmotionVector {
    type Error = Error;

    fn try_from(values: [f64; NUM_EMOTIONS]) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmotionVector> for [f64; NUM_EMOTIONS] {
    fn from(v: EmotionVector) -> Self {
        v.0
    }
}

/// Projects raw scores into the simplex interior. See [`EmotionVector::from_raw`].
pub fn make_emotion_vector(raw: [f64; NUM_EMOTIONS]) -> Result<EmotionVector> {
    EmotionVector::from_raw(raw)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Strictly positive, finite Dirichlet concentration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_EMOTIONS]", into = "[f64; NUM_EMOTIONS]")]
pub struct AlphaVector([f64; NUM_EMOTIONS]);

impl AlphaVector {
    pub fn new(values: [f64; NUM_EMOTIONS]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite concentration".into()));
        }
        if let Some(v) = values.iter().find(|&&v| v < ALPHA_FLOOR) {
            return Err(Error::Invalid(format!("concentration {v} below {ALPHA_FLOOR}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64; NUM_EMOTIONS] {
        &self.0
    }

    /// Total concentration α₀.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<[f64; NUM_EMOTIONS]> for AlphaVector {
    type Error = Error;

    fn try_from(values: [f64; NUM_EMOTIONS]) -> Result<Self> {
        Self::new(values)
    }
}

impl From<AlphaVector> for [f64; NUM_EMOTIONS] {
    fn from(v: AlphaVector) -> Self {
        v.0
    }
}

/// One time-stamped emotion mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Seconds from the start of the track.
    pub t: f64,
    pub e: EmotionVector,
}

#[derive(Deserialize)]
struct RawSequence {
    frames: Vec<Frame>,
    #[serde(default)]
    frame_rate_hint: Option<f64>,
}

/// A non-empty, strictly time-ordered list of emotion mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct EmotionSequence {
    frames: Vec<Frame>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_rate_hint: Option<f64>,
}

impl TryFrom<RawSequence> for EmotionSequence {
    type Error = Error;

    fn try_from(raw: RawSequence) -> Result<Self> {
        let mut seq = Self::new(raw.frames)?;
        seq.frame_rate_hint = raw.frame_rate_hint;
        Ok(seq)
    }
}

/// Checks that `frames` is non-empty with strictly increasing finite timestamps.
pub fn validate_sequence(frames: &[Frame]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(i) = frames.iter().position(|f| !f.t.is_finite()) {
        return Err(Error::NonMonotoneTime { index: i });
    }
    for (i, w) in frames.windows(2).enumerate() {
        if w[1].t <= w[0].t {
            return Err(Error::NonMonotoneTime { index: i + 1 });
        }
    }
    Ok(())
}

impl EmotionSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        validate_sequence(&frames)?;
        Ok(Self {
            frames,
            frame_rate_hint: None,
        })
    }

    /// Builds a sequence from `(timestamp, emotion)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, EmotionVector)>) -> Result<Self> {
        Self::new(pairs.into_iter().map(|(t, e)| Frame { t, e }).collect())
    }

    /// Builds a sequence sampled on the grid `i / rate`.
    pub fn on_grid(emotions: Vec<EmotionVector>, rate: f64) -> Result<Self> {
        let mut seq = Self::from_pairs(emotions.into_iter().enumerate().map(|(i, e)| (i as f64 / rate, e)))?;
        seq.frame_rate_hint = Some(rate);
        Ok(seq)
    }

    pub fn with_frame_rate_hint(mut self, rate: Option<f64>) -> Self {
        self.frame_rate_hint = rate;
        self
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_rate_hint(&self) -> Option<f64> {
        self.frame_rate_hint
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.frames[0].t
    }

    pub fn last_time(&self) -> f64 {
        self.frames[self.frames.len() - 1].t
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn emotions(&self) -> Vec<EmotionVector> {
        self.frames.iter().map(|f| f.e).collect()
    }
}

/// A single-emotion training clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledClip {
    pub id: String,
    #[serde(rename = "wav")]
    pub audio_path: PathBuf,
    #[serde(deserialize_with = "de_label")]
    pub label: usize,
}

fn de_label<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    let label = usize::deserialize(d)?;
    if label >= NUM_EMOTIONS {
        return Err(serde::de::Error::custom(format!(
            "label {label} outside 0..{NUM_EMOTIONS}"
        )));
    }
    Ok(label)
}

#[derive(Deserialize)]
struct RawPreferencePair {
    id: String,
    wav: PathBuf,
    winner: EmotionSequence,
    loser: EmotionSequence,
}

/// A judged comparison: `winner` was preferred over `loser` for the same audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPreferencePair")]
pub struct PreferencePair {
    pub id: String,
    #[serde(rename = "wav")]
    pub audio_path: PathBuf,
    pub winner: EmotionSequence,
    pub loser: EmotionSequence,
}

impl PreferencePair {
    pub fn new(
        id: impl Into<String>,
        audio_path: impl Into<PathBuf>,
        winner: EmotionSequence,
        loser: EmotionSequence,
    ) -> Result<Self> {
        if winner == loser {
            return Err(Error::Invalid("winner and loser are identical".into()));
        }
        Ok(Self {
            id: id.into(),
            audio_path: audio_path.into(),
            winner,
            loser,
        })
    }
}

impl TryFrom<RawPreferencePair> for PreferencePair {
    type Error = Error;

    fn try_from(raw: RawPreferencePair) -> Result<Self> {
        Self::new(raw.id, raw.wav, raw.winner, raw.loser)
    }
}
