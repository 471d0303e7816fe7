use ndarray::Array2;

use crate::audio::FeatureFrames;
use crate::dirichlet::{dir_log_density, dir_log_density_grad_alpha};
use crate::emotion::{AlphaVector, EmotionVector, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::model::{FramePass, ModelParams, PooledPass, Weights};

use super::LossKind;

/// `−ln Dir(target | α)` and its gradient in α.
pub fn dirichlet_nll(target: &EmotionVector, alpha: &AlphaVector) -> (f64, [f64; NUM_EMOTIONS]) {
    let g = dir_log_density_grad_alpha(target, alpha);
    (-dir_log_density(target, alpha), g.map(|v| -v))
}

fn log_softmax(raw: &[f64]) -> [f64; NUM_EMOTIONS] {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + raw.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    std::array::from_fn(|i| raw[i] - lse)
}

/// Soft-target cross-entropy `−Σ y_i ln softmax(raw)_i` and its gradient in
/// the raw scores.
pub fn soft_cross_entropy(target: &EmotionVector, raw: &[f64]) -> (f64, [f64; NUM_EMOTIONS]) {
    let logp = log_softmax(raw);
    let y = target.values();
    let loss = -(0..NUM_EMOTIONS).map(|i| y[i] * logp[i]).sum::<f64>();
    // The target sums to one, so the gradient is p − y.
    (loss, std::array::from_fn(|i| logp[i].exp() - y[i]))
}

/// Per-frame preference loss `−ln σ(β(Δ_w − Δ_l))`.
pub fn dpo_frame_loss(delta_w: f64, delta_l: f64, beta: f64) -> f64 {
    softplus(-beta * (delta_w - delta_l))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Whole-clip loss through the pooled head and its parameter gradient.
pub fn pooled_loss_grad(
    params: &ModelParams,
    feats: &FeatureFrames,
    target: &EmotionVector,
    kind: LossKind,
) -> Result<(f64, Weights)> {
    let pass = PooledPass::run(params, feats)?;
    Ok(match kind {
        LossKind::DirichletMle => {
            let (loss, d_alpha) = dirichlet_nll(target, &pass.alpha());
            (loss, pass.backward_alpha(params, &d_alpha))
        }
        LossKind::CrossEntropy => {
            let (loss, d_raw) = soft_cross_entropy(target, pass.pooled_raw());
            (loss, pass.backward_pooled(params, &d_raw))
        }
    })
}

/// Frame-averaged loss through the sequence head against per-frame targets.
pub fn sequence_loss_grad(
    params: &ModelParams,
    feats: &FeatureFrames,
    targets: &[EmotionVector],
    kind: LossKind,
) -> Result<(f64, Weights)> {
    let pass = FramePass::run(params, feats)?;
    let t_len = pass.num_frames();
    if targets.len() != t_len {
        return Err(Error::LengthMismatch(format!(
            "{} targets for {t_len} frames",
            targets.len()
        )));
    }
    let scale = 1.0 / t_len as f64;
    let mut d = Array2::zeros((t_len, NUM_EMOTIONS));
    let mut total = 0.0;
    for (t, target) in targets.iter().enumerate() {
        let (loss, g) = match kind {
            LossKind::DirichletMle => dirichlet_nll(target, &pass.alpha(t)),
            LossKind::CrossEntropy => {
                soft_cross_entropy(target, pass.smoothed_raw().row(t).as_slice().expect("standard layout"))
            }
        };
        total += loss;
        for j in 0..NUM_EMOTIONS {
            d[[t, j]] = g[j] * scale;
        }
    }
    let grads = match kind {
        LossKind::DirichletMle => pass.backward_alpha(params, &d),
        LossKind::CrossEntropy => pass.backward_smoothed(params, &d),
    };
    Ok((total * scale, grads))
}

/// Reference-model log-densities of the winner and loser at every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTerms {
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
}

impl ReferenceTerms {
    pub fn compute(
        reference: &ModelParams,
        feats: &FeatureFrames,
        winner: &[EmotionVector],
        loser: &[EmotionVector],
    ) -> Result<Self> {
        let alphas = FramePass::run(reference, feats)?.alphas();
        check_lengths(alphas.len(), winner, loser)?;
        Ok(Self {
            winner: winner.iter().zip(&alphas).map(|(y, a)| dir_log_density(y, a)).collect(),
            loser: loser.iter().zip(&alphas).map(|(y, a)| dir_log_density(y, a)).collect(),
        })
    }
}

fn check_lengths(t_len: usize, winner: &[EmotionVector], loser: &[EmotionVector]) -> Result<()> {
    if winner.len() != t_len || loser.len() != t_len {
        return Err(Error::GridMismatch(format!(
            "winner/loser have {}/{} frames, features have {t_len}",
            winner.len(),
            loser.len()
        )));
    }
    Ok(())
}

/// Frame-averaged DPO loss of `policy` against precomputed reference terms.
pub fn dpo_loss_grad(
    policy: &ModelParams,
    feats: &FeatureFrames,
    winner: &[EmotionVector],
    loser: &[EmotionVector],
    reference: &ReferenceTerms,
    beta: f64,
) -> Result<(f64, Weights)> {
    let pass = FramePass::run(policy, feats)?;
    let t_len = pass.num_frames();
    check_lengths(t_len, winner, loser)?;
    let scale = 1.0 / t_len as f64;
    let mut d = Array2::zeros((t_len, NUM_EMOTIONS));
    let mut total = 0.0;
    for t in 0..t_len {
        let alpha = pass.alpha(t);
        let delta_w = dir_log_density(&winner[t], &alpha) - reference.winner[t];
        let delta_l = dir_log_density(&loser[t], &alpha) - reference.loser[t];
        let z = beta * (delta_w - delta_l);
        total += softplus(-z);
        let gw = dir_log_density_grad_alpha(&winner[t], &alpha);
        let gl = dir_log_density_grad_alpha(&loser[t], &alpha);
        let coef = -sigmoid(-z) * beta * scale;
        for j in 0..NUM_EMOTIONS {
            d[[t, j]] = coef * (gw[j] - gl[j]);
        }
    }
    Ok((total * scale, pass.backward_alpha(policy, &d)))
}

/// DPO loss of `policy` against a frozen `reference` for aligned winner and
/// loser frames, with the gradient in the policy parameters.
pub fn dpo_loss(
    policy: &ModelParams,
    reference: &ModelParams,
    feats: &FeatureFrames,
    winner: &[EmotionVector],
    loser: &[EmotionVector],
    beta: f64,
) -> Result<(f64, Weights)> {
    let terms = ReferenceTerms::compute(reference, feats, winner, loser)?;
    dpo_loss_grad(policy, feats, winner, loser, &terms, beta)
}
