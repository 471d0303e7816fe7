use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{Head, ModelParams, Weights};
use crate::audio::FeatureFrames;
use crate::dirichlet::{dir_expectation, positive_map};
use crate::emotion::{AlphaVector, EmotionVector, NUM_EMOTIONS};
use crate::error::{Error, Result};

/// Per-frame concentrations on the 100 fps feature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSequence {
    pub frame_rate: f64,
    pub alphas: Vec<(f64, AlphaVector)>,
}

impl AlphaSequence {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// Stacks `context_window` neighbouring frames around each frame after
/// standardizing them; edges replicate the first/last frame.
fn stack_context(params: &ModelParams, feats: &FeatureFrames) -> Result<Array2<f64>> {
    let cfg = &params.config;
    if feats.dim() != cfg.input_dim {
        return Err(Error::LengthMismatch(format!(
            "model expects {} feature dimensions, got {}",
            cfg.input_dim,
            feats.dim()
        )));
    }
    let t_len = feats.num_frames();
    let d = cfg.input_dim;
    let half = (cfg.context_window / 2) as i64;
    let mut normalized = Array2::zeros((t_len, d));
    for (t, row) in feats.data().rows().into_iter().enumerate() {
        let mut out = normalized.row_mut(t);
        params
            .norm
            .normalize_row(row, out.as_slice_mut().expect("standard layout"));
    }
    let mut stacked = Array2::zeros((t_len, cfg.stacked_dim()));
    for t in 0..t_len {
        for k in 0..cfg.context_window {
            let src = (t as i64 + k as i64 - half).clamp(0, t_len as i64 - 1) as usize;
            stacked
                .slice_mut(ndarray::s![t, k * d..(k + 1) * d])
                .assign(&normalized.row(src));
        }
    }
    Ok(stacked)
}

#[derive(Debug, Clone)]
struct Trunk {
    stacked: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    raw: Array2<f64>,
}

impl Trunk {
    fn run(params: &ModelParams, feats: &FeatureFrames) -> Result<Self> {
        let w = &params.weights;
        let stacked = stack_context(params, feats)?;
        let mut h1 = stacked.dot(&w.w1) + &w.b1;
        h1.mapv_inplace(f64::tanh);
        let mut h2 = h1.dot(&w.w2) + &w.b2;
        h2.mapv_inplace(f64::tanh);
        let raw = h2.dot(&w.wo) + &w.bo;
        Ok(Self { stacked, h1, h2, raw })
    }

    fn backward(&self, w: &Weights, d_raw: &Array2<f64>) -> Weights {
        let d_wo = self.h2.t().dot(d_raw);
        let d_bo = d_raw.sum_axis(Axis(0));
        let mut d_h2 = d_raw.dot(&w.wo.t());
        ndarray::Zip::from(&mut d_h2)
            .and(&self.h2)
            .for_each(|g, &h| *g *= 1.0 - h * h);
        let d_w2 = self.h1.t().dot(&d_h2);
        let d_b2 = d_h2.sum_axis(Axis(0));
        let mut d_h1 = d_h2.dot(&w.w2.t());
        ndarray::Zip::from(&mut d_h1)
            .and(&self.h1)
            .for_each(|g, &h| *g *= 1.0 - h * h);
        let d_w1 = self.stacked.t().dot(&d_h1);
        let d_b1 = d_h1.sum_axis(Axis(0));
        Weights {
            w1: d_w1,
            b1: d_b1,
            w2: d_w2,
            b2: d_b2,
            wo: d_wo,
            bo: d_bo,
        }
    }
}

fn smooth(raw: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let t_len = raw.nrows() as i64;
    let half = (kernel / 2) as i64;
    let mut out = Array2::zeros(raw.raw_dim());
    for t in 0..t_len {
        let mut row = out.row_mut(t as usize);
        for k in -half..=half {
            let src = (t + k).clamp(0, t_len - 1) as usize;
            row += &raw.row(src);
        }
        row /= kernel as f64;
    }
    out
}

/// Adjoint of [`smooth`].
fn smooth_adjoint(d_smoothed: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let t_len = d_smoothed.nrows() as i64;
    let half = (kernel / 2) as i64;
    let mut out = Array2::zeros(d_smoothed.raw_dim());
    for t in 0..t_len {
        for k in -half..=half {
            let src = (t + k).clamp(0, t_len - 1) as usize;
            let g = d_smoothed.row(t as usize).to_owned() / kernel as f64;
            let mut dst = out.row_mut(src);
            dst += &g;
        }
    }
    out
}

fn softmax(raw: &[f64]) -> [f64; NUM_EMOTIONS] {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: [f64; NUM_EMOTIONS] = std::array::from_fn(|i| (raw[i] - max).exp());
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn alpha_from_raw(raw: &[f64]) -> AlphaVector {
    AlphaVector::new(std::array::from_fn(|i| positive_map(raw[i])))
        .expect("positivity map output is at least the floor")
}

/// Converts raw head outputs to a mixture according to the model's head.
pub fn mixture_from_raw(head: Head, raw: &[f64]) -> EmotionVector {
    match head {
        Head::Dirichlet => dir_expectation(&alpha_from_raw(raw)),
        Head::Softmax => EmotionVector::from_raw(softmax(raw)).expect("softmax output is a positive finite mixture"),
    }
}

/// Cached forward pass of the sequence head.
#[derive(Debug, Clone)]
pub struct FramePass {
    trunk: Trunk,
    smoothed: Array2<f64>,
    kernel: usize,
    frame_rate: f64,
}

impl FramePass {
    pub fn run(params: &ModelParams, feats: &FeatureFrames) -> Result<Self> {
        let trunk = Trunk::run(params, feats)?;
        let kernel = params.config.smoothing_kernel;
        let smoothed = smooth(&trunk.raw, kernel);
        Ok(Self {
            trunk,
            smoothed,
            kernel,
            frame_rate: feats.frame_rate(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.smoothed.nrows()
    }

    /// Smoothed raw outputs, `T × 6`, before the positivity map.
    pub fn smoothed_raw(&self) -> &Array2<f64> {
        &self.smoothed
    }

    pub fn alpha(&self, t: usize) -> AlphaVector {
        alpha_from_raw(self.smoothed.row(t).as_slice().expect("standard layout"))
    }

    pub fn alphas(&self) -> Vec<AlphaVector> {
        (0..self.num_frames()).map(|t| self.alpha(t)).collect()
    }

    pub fn alpha_sequence(&self) -> AlphaSequence {
        AlphaSequence {
            frame_rate: self.frame_rate,
            alphas: (0..self.num_frames())
                .map(|t| (t as f64 / self.frame_rate, self.alpha(t)))
                .collect(),
        }
    }

    pub fn mixtures(&self, head: Head) -> Vec<EmotionVector> {
        self.smoothed
            .rows()
            .into_iter()
            .map(|r| mixture_from_raw(head, r.as_slice().expect("standard layout")))
            .collect()
    }

    /// Parameter gradients given `∂L/∂α`, `T × 6`.
    pub fn backward_alpha(&self, params: &ModelParams, d_alpha: &Array2<f64>) -> Weights {
        let mut d_smoothed = d_alpha.clone();
        ndarray::Zip::from(&mut d_smoothed)
            .and(&self.smoothed)
            .for_each(|g, &r| *g *= 2.0 * r);
        self.backward_smoothed(params, &d_smoothed)
    }

    /// Parameter gradients given `∂L/∂(smoothed raw outputs)`, `T × 6`.
    pub fn backward_smoothed(&self, params: &ModelParams, d_smoothed: &Array2<f64>) -> Weights {
        let d_raw = smooth_adjoint(d_smoothed, self.kernel);
        self.trunk.backward(&params.weights, &d_raw)
    }
}

/// Cached forward pass of the pooled (single-mixture) head.
#[derive(Debug, Clone)]
pub struct PooledPass {
    trunk: Trunk,
    pooled: Array1<f64>,
}

impl PooledPass {
    pub fn run(params: &ModelParams, feats: &FeatureFrames) -> Result<Self> {
        let trunk = Trunk::run(params, feats)?;
        let pooled = trunk.raw.mean_axis(Axis(0)).expect("at least one frame");
        Ok(Self { trunk, pooled })
    }

    /// Time-averaged raw outputs before the positivity map.
    pub fn pooled_raw(&self) -> &[f64] {
        self.pooled.as_slice().expect("standard layout")
    }

    pub fn alpha(&self) -> AlphaVector {
        alpha_from_raw(self.pooled_raw())
    }

    pub fn mixture(&self, head: Head) -> EmotionVector {
        mixture_from_raw(head, self.pooled_raw())
    }

    pub fn backward_alpha(&self, params: &ModelParams, d_alpha: &[f64; NUM_EMOTIONS]) -> Weights {
        let d_pooled: [f64; NUM_EMOTIONS] = std::array::from_fn(|i| d_alpha[i] * 2.0 * self.pooled[i]);
        self.backward_pooled(params, &d_pooled)
    }

    /// Parameter gradients given `∂L/∂(pooled raw outputs)`.
    pub fn backward_pooled(&self, params: &ModelParams, d_pooled: &[f64; NUM_EMOTIONS]) -> Weights {
        let t_len = self.trunk.raw.nrows();
        let row = Array1::from_iter(d_pooled.iter().map(|g| g / t_len as f64));
        let d_raw = Array2::from_shape_fn((t_len, NUM_EMOTIONS), |(_, j)| row[j]);
        self.trunk.backward(&params.weights, &d_raw)
    }
}

/// Per-frame concentrations: context stacking, two tanh layers, moving-average
/// smoothing of the raw outputs, then the positivity map.
pub fn forward_frames(params: &ModelParams, feats: &FeatureFrames) -> Result<AlphaSequence> {
    Ok(FramePass::run(params, feats)?.alpha_sequence())
}

/// One concentration vector for the whole input from time-averaged raw outputs.
pub fn forward_pooled(params: &ModelParams, feats: &FeatureFrames) -> Result<AlphaVector> {
    Ok(PooledPass::run(params, feats)?.alpha())
}

/// Gradient of a per-frame loss through [`forward_frames`].
pub fn backward_frames(params: &ModelParams, feats: &FeatureFrames, d_alpha: &Array2<f64>) -> Result<Weights> {
    let pass = FramePass::run(params, feats)?;
    if d_alpha.dim() != (pass.num_frames(), NUM_EMOTIONS) {
        return Err(Error::LengthMismatch(format!(
            "upstream gradient has shape {:?}, expected ({}, {NUM_EMOTIONS})",
            d_alpha.dim(),
            pass.num_frames()
        )));
    }
    Ok(pass.backward_alpha(params, d_alpha))
}

/// Gradient of a loss on the pooled concentrations through [`forward_pooled`].
pub fn backward_pooled(params: &ModelParams, feats: &FeatureFrames, d_alpha: &[f64; NUM_EMOTIONS]) -> Result<Weights> {
    Ok(PooledPass::run(params, feats)?.backward_alpha(params, d_alpha))
}

/// Head-agnostic whole-clip prediction.
pub fn predict_pooled(params: &ModelParams, feats: &FeatureFrames) -> Result<EmotionVector> {
    Ok(PooledPass::run(params, feats)?.mixture(params.head()))
}

/// Head-agnostic per-frame prediction.
pub fn predict_frames(params: &ModelParams, feats: &FeatureFrames) -> Result<Vec<EmotionVector>> {
    Ok(FramePass::run(params, feats)?.mixtures(params.head()))
}
