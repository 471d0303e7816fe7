use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{FeatureStats, NUM_MEL_BANDS};
use crate::emotion::NUM_EMOTIONS;
use crate::error::{Error, Result};

/// Checkpoint format understood by this build.
pub const MODEL_VERSION: u32 = 1;

/// How raw outputs are turned into a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Concentrations through the positivity map; prediction = Dirichlet mean.
    Dirichlet,
    /// Softmax over raw outputs (cross-entropy baseline).
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Frames stacked around each frame (odd).
    pub context_window: usize,
    pub hidden: usize,
    /// Moving-average width applied to per-frame raw outputs (odd).
    pub smoothing_kernel: usize,
    pub head: Head,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: NUM_MEL_BANDS,
            context_window: 5,
            hidden: 64,
            smoothing_kernel: 5,
            head: Head::Dirichlet,
        }
    }
}

impl ModelConfig {
    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_smoothing(mut self, kernel: usize) -> Self {
        self.smoothing_kernel = kernel;
        self
    }

    pub fn stacked_dim(&self) -> usize {
        self.input_dim * self.context_window
    }

    fn validate(&self) -> Result<()> {
        if self.hidden < 2 {
            return Err(Error::Invalid("hidden width must be at least 2".into()));
        }
        if self.context_window.is_multiple_of(2) || self.smoothing_kernel.is_multiple_of(2) {
            return Err(Error::Invalid("context window and smoothing kernel must be odd".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Invalid("input dimension must be positive".into()));
        }
        Ok(())
    }
}

/// The trainable tensors. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
}

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        Self {
            w1: Array2::zeros((cfg.stacked_dim(), h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            wo: Array2::zeros((h, NUM_EMOTIONS)),
            bo: Array1::zeros(NUM_EMOTIONS),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            wo: Array2::zeros(self.wo.raw_dim()),
            bo: Array1::zeros(self.bo.raw_dim()),
        }
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.wo.as_slice().expect("standard layout"),
            self.bo.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.wo.as_slice_mut().expect("standard layout"),
            self.bo.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// All weights of the encoder trunk and output head plus the feature
/// normalization they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub norm: FeatureStats,
    pub weights: Weights,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Glorot-uniform weights, zero biases, identity feature normalization.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.hidden;
    let weights = Weights {
        w1: glorot(cfg.stacked_dim(), h, &mut rng),
        b1: Array1::zeros(h),
        w2: glorot(h, h, &mut rng),
        b2: Array1::zeros(h),
        wo: glorot(h, NUM_EMOTIONS, &mut rng),
        bo: Array1::zeros(NUM_EMOTIONS),
    };
    Ok(ModelParams {
        version: MODEL_VERSION,
        config: cfg.clone(),
        seed,
        norm: FeatureStats::identity(cfg.input_dim),
        weights,
    })
}

impl ModelParams {
    pub fn with_norm(mut self, norm: FeatureStats) -> Self {
        self.norm = norm;
        self
    }

    pub fn head(&self) -> Head {
        self.config.head
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointWeights {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    w_out: Vec<Vec<f64>>,
    b_out: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    seed: u64,
    feature_norm: FeatureStats,
    weights: CheckpointWeights,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: Vec<Vec<f64>>, shape: (usize, usize)) -> Result<Array2<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::CorruptFile(format!("{name} does not have shape {shape:?}")));
    }
    Array2::from_shape_vec(shape, rows.concat()).map_err(|e| Error::CorruptFile(e.to_string()))
}

fn vector(name: &str, v: Vec<f64>, len: usize) -> Result<Array1<f64>> {
    if v.len() != len {
        return Err(Error::CorruptFile(format!("{name} does not have length {len}")));
    }
    Ok(Array1::from(v))
}

/// Serializes the checkpoint as a single JSON document.
pub fn model_to_json(params: &ModelParams) -> Result<String> {
    let w = &params.weights;
    let ckpt = Checkpoint {
        version: params.version,
        config: params.config.clone(),
        seed: params.seed,
        feature_norm: params.norm.clone(),
        weights: CheckpointWeights {
            w1: rows(&w.w1),
            b1: w.b1.to_vec(),
            w2: rows(&w.w2),
            b2: w.b2.to_vec(),
            w_out: rows(&w.wo),
            b_out: w.bo.to_vec(),
        },
    };
    Ok(serde_json::to_string(&ckpt)?)
}

pub fn model_from_json(text: &str) -> Result<ModelParams> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let version = match value.get("version") {
        Some(serde_json::Value::Number(n)) => n.as_u64(),
        Some(serde_json::Value::String(s)) => s.parse().ok(),
        _ => None,
    }
    .ok_or_else(|| Error::CorruptFile("missing version".into()))?;
    if version != MODEL_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: MODEL_VERSION,
        });
    }
    let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let cfg = ckpt.config;
    cfg.validate().map_err(|e| Error::CorruptFile(e.to_string()))?;
    let h = cfg.hidden;
    let cw = ckpt.weights;
    let weights = Weights {
        w1: matrix("w1", cw.w1, (cfg.stacked_dim(), h))?,
        b1: vector("b1", cw.b1, h)?,
        w2: matrix("w2", cw.w2, (h, h))?,
        b2: vector("b2", cw.b2, h)?,
        wo: matrix("w_out", cw.w_out, (h, NUM_EMOTIONS))?,
        bo: vector("b_out", cw.b_out, NUM_EMOTIONS)?,
    };
    if !weights.is_finite() {
        return Err(Error::CorruptFile("non-finite weight".into()));
    }
    if ckpt.feature_norm.dim() != cfg.input_dim || ckpt.feature_norm.std.len() != cfg.input_dim {
        return Err(Error::CorruptFile(
            "feature normalization has the wrong dimension".into(),
        ));
    }
    Ok(ModelParams {
        version: ckpt.version,
        config: cfg,
        seed: ckpt.seed,
        norm: ckpt.feature_norm,
        weights,
    })
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_json(params)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    model_from_json(&text)
}
