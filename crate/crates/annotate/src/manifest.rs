use std::collections::HashMap;
use std::path::{Path, PathBuf};

use dser_core::EmotionSequence;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One comparison between two candidate timelines for the same audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPair {
    pub pair_id: String,
    pub audio_id: String,
    pub wav: PathBuf,
    pub candidates: [EmotionSequence; 2],
    /// Which candidate (0 or 1) is presented as "A".
    pub a_index: usize,
}

impl ManifestPair {
    /// Builds a pair whose A/B presentation is fixed by `seed` and the id.
    pub fn new(
        pair_id: impl Into<String>,
        audio_id: impl Into<String>,
        wav: impl Into<PathBuf>,
        candidates: [EmotionSequence; 2],
        seed: u64,
    ) -> Self {
        let pair_id = pair_id.into();
        Self {
            a_index: assign_a(seed, &pair_id),
            pair_id,
            audio_id: audio_id.into(),
            wav: wav.into(),
            candidates,
        }
    }

    /// Candidates in presentation order.
    pub fn shown(&self) -> (&EmotionSequence, &EmotionSequence) {
        (&self.candidates[self.a_index], &self.candidates[1 - self.a_index])
    }
}

/// Seeded coin flip choosing which candidate of `pair_id` is shown as A.
pub fn assign_a(seed: u64, pair_id: &str) -> usize {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(pair_id.as_bytes());
    (h.finalize()[0] & 1) as usize
}

/// The immutable list of comparisons served to annotators.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pairs: Vec<ManifestPair>,
    by_id: HashMap<String, usize>,
    audio: HashMap<String, PathBuf>,
}

impl Manifest {
    pub fn new(pairs: Vec<ManifestPair>) -> Result<Self> {
        Self::build(pairs, Path::new("<memory>"))
    }

    /// Reads a JSONL manifest. Relative WAV paths are taken relative to
    /// the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut pairs: Vec<ManifestPair> = dser_core::jsonl::read_all(path)?;
        for p in &mut pairs {
            if p.wav.is_relative() {
                p.wav = base.join(&p.wav);
            }
        }
        Self::build(pairs, path)
    }

    fn build(pairs: Vec<ManifestPair>, path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::BadManifest {
            path: path.to_path_buf(),
            detail,
        };
        let mut by_id = HashMap::new();
        let mut audio: HashMap<String, PathBuf> = HashMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if by_id.insert(p.pair_id.clone(), i).is_some() {
                return Err(bad(format!("duplicate pair_id {}", p.pair_id)));
            }
            if p.a_index > 1 {
                return Err(bad(format!("pair {}: a_index must be 0 or 1", p.pair_id)));
            }
            if p.candidates[0] == p.candidates[1] {
                return Err(bad(format!("pair {}: candidates are identical", p.pair_id)));
            }
            match audio.get(&p.audio_id) {
                Some(w) if *w != p.wav => {
                    return Err(bad(format!("audio id {} maps to two files", p.audio_id)));
                }
                Some(_) => {}
                None => {
                    audio.insert(p.audio_id.clone(), p.wav.clone());
                }
            }
        }
        Ok(Self { pairs, by_id, audio })
    }

    pub fn pairs(&self) -> &[ManifestPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, pair_id: &str) -> Option<&ManifestPair> {
        self.by_id.get(pair_id).map(|&i| &self.pairs[i])
    }

    pub fn audio_path(&self, audio_id: &str) -> Option<&Path> {
        self.audio.get(audio_id).map(PathBuf::as_path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(dser_core::jsonl::write_all(path, &self.pairs)?)
    }
}
