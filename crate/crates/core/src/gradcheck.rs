//! Central finite-difference checks for every analytic gradient in the crate.

/// Largest componentwise deviation between two gradients, relative to the
/// largest magnitude found in either of them.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio::FeatureFrames;
use crate::dirichlet::{dir_log_density, dir_log_density_grad_alpha, dir_sample};
use crate::emotion::{AlphaVector, EmotionVector, NUM_EMOTIONS};
use crate::evalkit::{softmax_mse_loss_grad, ToyAnimator, ANIM_DIM};
use crate::model::{init_model, ModelConfig, ModelParams};
use crate::stages::{dpo_loss, pooled_loss_grad, sequence_loss_grad, LossKind};

/// Tolerance applied by every suite.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Instances per suite.
pub const DEFAULT_INSTANCES: u64 = 20;

/// Outcome of one finite-difference suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: u64,
    pub max_error: f64,
    pub passed: bool,
}

fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn summarize(name: &'static str, instances: u64, errors: impl IntoIterator<Item = f64>) -> CheckResult {
    let max_error = errors.into_iter().fold(0.0, f64::max);
    CheckResult {
        name,
        instances,
        max_error,
        passed: max_error <= GRAD_TOLERANCE,
    }
}

fn random_alpha<R: Rng>(rng: &mut R) -> AlphaVector {
    AlphaVector::new(std::array::from_fn(|_| rng.random_range(0.2..8.0))).expect("positive")
}

/// Gradient of the Dirichlet log-density in α.
pub fn check_dirichlet(instances: u64) -> CheckResult {
    let errors = (0..instances).map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = random_alpha(&mut rng);
        let x = dir_sample(&random_alpha(&mut rng), &mut rng);
        let analytic = dir_log_density_grad_alpha(&x, &alpha);
        let numeric = central_difference(alpha.values(), 1e-5, |a| {
            dir_log_density(&x, &AlphaVector::new(a.try_into().unwrap()).unwrap())
        });
        max_relative_error(&analytic, &numeric)
    });
    summarize("dirichlet_log_density", instances, errors)
}

/// The model losses covered by [`check_model_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelLoss {
    PooledNll,
    PooledCrossEntropy,
    SequenceNll,
    SequenceCrossEntropy,
    Dpo,
}

impl ModelLoss {
    pub const ALL: [ModelLoss; 5] = [
        ModelLoss::PooledNll,
        ModelLoss::PooledCrossEntropy,
        ModelLoss::SequenceNll,
        ModelLoss::SequenceCrossEntropy,
        ModelLoss::Dpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelLoss::PooledNll => "model_pooled_dirichlet_nll",
            ModelLoss::PooledCrossEntropy => "model_pooled_cross_entropy",
            ModelLoss::SequenceNll => "model_sequence_dirichlet_nll",
            ModelLoss::SequenceCrossEntropy => "model_sequence_cross_entropy",
            ModelLoss::Dpo => "model_dpo",
        }
    }
}

struct Instance {
    params: ModelParams,
    reference: ModelParams,
    feats: FeatureFrames,
    targets: Vec<EmotionVector>,
    losers: Vec<EmotionVector>,
    beta: f64,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::default().with_hidden(8);
    let t_len = rng.random_range(2..=6);
    let feats = FeatureFrames::new(
        Array2::from_shape_fn((t_len, cfg.input_dim), |_| rng.random_range(-1.5..1.5)),
        100.0,
    )
    .expect("finite features");
    let mut params = init_model(&cfg, seed).expect("valid config");
    let mut reference = init_model(&cfg, seed + 1000).expect("valid config");
    // Non-zero biases so no output sits exactly at the positivity map's minimum.
    for p in [&mut params, &mut reference] {
        p.weights.bo = Array1::from_shape_fn(NUM_EMOTIONS, |_| rng.random_range(0.5..1.5));
        p.weights.b1 = Array1::from_shape_fn(cfg.hidden, |_| rng.random_range(-0.3..0.3));
    }
    let draw = |rng: &mut ChaCha8Rng| dir_sample(&random_alpha(rng), rng);
    let targets = (0..t_len).map(|_| draw(&mut rng)).collect();
    let losers = (0..t_len).map(|_| draw(&mut rng)).collect();
    Instance {
        params,
        reference,
        feats,
        targets,
        losers,
        beta: rng.random_range(0.1..2.0),
    }
}

fn eval_loss(which: ModelLoss, inst: &Instance, params: &ModelParams) -> (f64, Vec<f64>) {
    let (loss, grads) = match which {
        ModelLoss::PooledNll => pooled_loss_grad(params, &inst.feats, &inst.targets[0], LossKind::DirichletMle),
        ModelLoss::PooledCrossEntropy => {
            pooled_loss_grad(params, &inst.feats, &inst.targets[0], LossKind::CrossEntropy)
        }
        ModelLoss::SequenceNll => sequence_loss_grad(params, &inst.feats, &inst.targets, LossKind::DirichletMle),
        ModelLoss::SequenceCrossEntropy => {
            sequence_loss_grad(params, &inst.feats, &inst.targets, LossKind::CrossEntropy)
        }
        ModelLoss::Dpo => dpo_loss(
            params,
            &inst.reference,
            &inst.feats,
            &inst.targets,
            &inst.losers,
            inst.beta,
        ),
    }
    .expect("well-formed instance");
    (loss, grads.to_flat())
}

/// Analytic parameter gradients of a training loss against central
/// differences (h = 1e-5) on small random networks (H = 8, T ≤ 6).
pub fn check_model_loss(which: ModelLoss, instances: u64) -> CheckResult {
    let errors = (0..instances).map(|seed| {
        let inst = instance(seed);
        let (_, analytic) = eval_loss(which, &inst, &inst.params);
        let mut probe = inst.params.clone();
        let numeric = central_difference(&inst.params.weights.to_flat(), 1e-5, |w| {
            probe.weights.set_flat(w);
            eval_loss(which, &inst, &probe).0
        });
        max_relative_error(&analytic, &numeric)
    });
    summarize(which.name(), instances, errors)
}

/// Gradient of the oracle-extraction objective in the softmax logits.
pub fn check_softmax_mse(instances: u64) -> CheckResult {
    let errors = (0..instances).map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let animator = ToyAnimator::new(seed, 40);
        let z: [f64; NUM_EMOTIONS] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let base = Array1::from_shape_fn(ANIM_DIM, |_| rng.random_range(-1.0..1.0));
        let target = Array1::from_shape_fn(ANIM_DIM, |_| rng.random_range(-0.9..0.9));
        let (_, analytic) = softmax_mse_loss_grad(&animator, &z, base.view(), target.view());
        let numeric = central_difference(&z, 1e-5, |zz| {
            softmax_mse_loss_grad(&animator, zz.try_into().unwrap(), base.view(), target.view()).0
        });
        max_relative_error(&analytic, &numeric)
    });
    summarize("extraction_softmax_mse", instances, errors)
}

/// Every suite with `instances` seeded instances each.
pub fn run_all(instances: u64) -> Vec<CheckResult> {
    let mut out = vec![check_dirichlet(instances)];
    out.extend(ModelLoss::ALL.iter().map(|&m| check_model_loss(m, instances)));
    out.push(check_softmax_mse(instances));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_scale_aware() {
        assert_eq!(max_relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((max_relative_error(&[1.0, 1e-10], &[1.0, 2e-10]) - 1e-10).abs() < 1e-20);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn every_suite_passes() {
        for r in run_all(4) {
            assert!(r.passed, "{r:?}");
        }
    }
}
