//! TOML run configuration. Every table is optional and every key has a
//! default; unknown keys are rejected.

use std::path::Path;

use dser_core::stages::{DpoConfig, LossKind, Optim, Stage1Config, Stage2Config, DEFAULT_LABEL_SMOOTHING};
use dser_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Frame-head smoothing width used by the benchmark configuration, in
/// feature frames (about 0.5 s at a 10 ms hop).
pub const BENCHMARK_SMOOTHING_KERNEL: usize = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own from this. `DSER_SEED`
    /// replaces it.
    pub seed: u64,
    pub synth: SynthSection,
    pub stage1: Stage1Section,
    pub seq: SeqSection,
    pub eval: EvalSection,
    pub stage2: TrainSection,
    pub pairs: PairsSection,
    pub stage3: Stage3Section,
    pub extract: ExtractSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthSection::default(),
            stage1: Stage1Section::default(),
            seq: SeqSection::default(),
            eval: EvalSection::default(),
            stage2: TrainSection {
                epochs: 100,
                ..TrainSection::default()
            },
            pairs: PairsSection::default(),
            stage3: Stage3Section::default(),
            extract: ExtractSection::default(),
            run: RunSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub stage1_clips: usize,
    pub stage1_test_clips: usize,
    pub seq_tracks: usize,
    pub eval_tracks: usize,
    pub pair_tracks: usize,
    pub val_tracks: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub mean_segment_s: f64,
    pub kappa: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            stage1_clips: 200,
            stage1_test_clips: 120,
            seq_tracks: 60,
            eval_tracks: 40,
            pair_tracks: 30,
            val_tracks: 20,
            min_duration_s: d.min_duration_s,
            max_duration_s: d.max_duration_s,
            mean_segment_s: d.mean_segment_s,
            kappa: d.kappa,
        }
    }
}

impl SynthSection {
    pub fn corpus(&self, n_tracks: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_tracks,
            min_duration_s: self.min_duration_s,
            max_duration_s: self.max_duration_s,
            mean_segment_s: self.mean_segment_s,
            kappa: self.kappa,
            seed,
        }
    }
}

/// Optimizer keys shared by every training table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let o = Optim::default();
        Self {
            epochs: o.epochs,
            batch_size: o.batch_size,
            lr_start: o.lr_start,
            lr_end: o.lr_end,
            weight_decay: o.weight_decay,
            grad_clip: o.grad_clip,
        }
    }
}

impl TrainSection {
    pub fn optim(&self) -> Optim {
        Optim {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Section {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub label_smoothing: f64,
    pub augment: bool,
    pub hidden: usize,
    pub smoothing_kernel: usize,
}

impl Default for Stage1Section {
    fn default() -> Self {
        let t = TrainSection::default();
        Self {
            epochs: 60,
            batch_size: t.batch_size,
            lr_start: t.lr_start,
            lr_end: t.lr_end,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            augment: false,
            hidden: 64,
            smoothing_kernel: BENCHMARK_SMOOTHING_KERNEL,
        }
    }
}

impl Stage1Section {
    pub fn to_config(&self, loss: LossKind, seed: u64) -> Stage1Config {
        Stage1Config {
            loss,
            optim: Optim {
                epochs: self.epochs,
                batch_size: self.batch_size,
                lr_start: self.lr_start,
                lr_end: self.lr_end,
                weight_decay: self.weight_decay,
                grad_clip: self.grad_clip,
            },
            label_smoothing: self.label_smoothing,
            augment: self.augment,
            hidden: self.hidden,
            smoothing_kernel: self.smoothing_kernel,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqSection {
    pub window_s: f64,
    pub stride_s: f64,
}

impl Default for SeqSection {
    fn default() -> Self {
        Self {
            window_s: 1.4,
            stride_s: 0.1,
        }
    }
}

/// The sliding-window baseline scored by `eval-mae`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub window_s: f64,
    pub stride_s: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            window_s: 1.4,
            stride_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    pub candidates: usize,
    pub pairs_per_track: usize,
    pub min_window_s: f64,
    pub max_window_s: f64,
    pub flip_prob: f64,
}

impl Default for PairsSection {
    fn default() -> Self {
        Self {
            candidates: 5,
            pairs_per_track: 5,
            min_window_s: 0.25,
            max_window_s: 1.25,
            flip_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage3Section {
    pub beta: f64,
    pub pair_smoothing: f64,
    pub sweep: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for Stage3Section {
    fn default() -> Self {
        let d = DpoConfig::default();
        Self {
            beta: d.beta,
            pair_smoothing: d.pair_smoothing,
            sweep: vec![0.01, 0.1, 0.5, 10.0],
            epochs: d.optim.epochs,
            batch_size: d.optim.batch_size,
            lr_start: d.optim.lr_start,
            lr_end: d.optim.lr_end,
            weight_decay: d.optim.weight_decay,
            grad_clip: d.optim.grad_clip,
        }
    }
}

impl Stage3Section {
    pub fn to_config(&self, beta: f64, seed: u64) -> DpoConfig {
        DpoConfig {
            beta,
            pair_smoothing: self.pair_smoothing,
            optim: Optim {
                epochs: self.epochs,
                batch_size: self.batch_size,
                lr_start: self.lr_start,
                lr_end: self.lr_end,
                weight_decay: self.weight_decay,
                grad_clip: self.grad_clip,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    /// Tracks taken from the front of the input list.
    pub tracks: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self { tracks: 10 }
    }
}

/// What `run-all` does beyond the mandatory Dirichlet path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub cross_entropy: bool,
    pub beta_sweep: bool,
    pub extract_oracle: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            cross_entropy: true,
            beta_sweep: true,
            extract_oracle: true,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults) and applies `DSER_SEED`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Ok(s) = std::env::var("DSER_SEED") {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("DSER_SEED={s:?} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    /// Stable per-purpose seed derived from the root seed.
    pub fn seed_for(&self, purpose: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(purpose.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn stage2(&self) -> Stage2Config {
        Stage2Config {
            optim: self.stage2.optim(),
            seed: self.seed_for("stage2"),
            ..Stage2Config::default()
        }
    }
}
