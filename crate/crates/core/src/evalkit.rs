//! Metrics on a shared time grid and oracle emotion extraction through a
//! frozen toy animator.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::FeatureFrames;
use crate::emotion::{EmotionSequence, EmotionVector, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::model::{predict_pooled, ModelParams};

/// Fraction of examples whose predicted argmax equals the label.
///
/// Works for either head: the prediction is the Dirichlet mean or the
/// softmax, and ties go to the lowest index.
pub fn accuracy<'a>(params: &ModelParams, set: impl IntoIterator<Item = (&'a FeatureFrames, usize)>) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (feats, label) in set {
        if predict_pooled(params, feats)?.argmax() == label {
            hits += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyInput("accuracy needs at least one example".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Zero-order hold of `seq` onto `grid`. Grid points before the first
/// timestamp take the first emotion.
pub fn align_to_grid(seq: &EmotionSequence, grid: &[f64]) -> Vec<EmotionVector> {
    let frames = seq.frames();
    let mut j = 0;
    grid.iter()
        .map(|&t| {
            while j + 1 < frames.len() && frames[j + 1].t <= t {
                j += 1;
            }
            frames[j].e
        })
        .collect()
}

/// Densifies `seq` onto the `i / rate` grid covering `[0, duration)`.
pub fn densify(seq: &EmotionSequence, rate: f64, n_frames: usize) -> Result<EmotionSequence> {
    let grid: Vec<f64> = (0..n_frames).map(|i| i as f64 / rate).collect();
    EmotionSequence::on_grid(align_to_grid(seq, &grid), rate)
}

/// Mean absolute error over the ground-truth grid, averaged over frames
/// and the six components.
pub fn mae(pred: &EmotionSequence, gt: &EmotionSequence) -> Result<f64> {
    if pred.first_time() > gt.last_time() || pred.last_time() < gt.first_time() {
        return Err(Error::NoOverlap);
    }
    let grid = gt.timestamps();
    let aligned = align_to_grid(pred, &grid);
    let total: f64 = aligned
        .iter()
        .zip(gt.frames())
        .map(|(p, g)| p.mean_abs_diff(&g.e))
        .sum();
    Ok(total / grid.len() as f64)
}

/// Output width of the toy animator.
pub const ANIM_DIM: usize = 16;

const EMOTION_SCALE: f64 = 2.0;
const FEATURE_SCALE: f64 = 0.5;
const BIAS_SCALE: f64 = 0.1;

/// Stand-in for a speech-driven face animator: a frozen per-frame map
/// `tanh(A·emotion + B·feature + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAnimator {
    seed: u64,
    a: Array2<f64>,
    b: Array2<f64>,
    c: Array1<f64>,
}

fn column_rank(m: &Array2<f64>) -> usize {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for col in m.columns() {
        let mut v = col.to_owned();
        for q in &basis {
            let proj = v.dot(q);
            v.scaled_add(-proj, q);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 * col.dot(&col).sqrt().max(1e-300) {
            basis.push(v / norm);
        }
    }
    basis.len()
}

impl ToyAnimator {
    /// Draws the weights from `seed`, redrawing until the emotion matrix has
    /// full column rank.
    pub fn new(seed: u64, feature_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        };
        loop {
            let a = Array2::from_shape_fn((ANIM_DIM, NUM_EMOTIONS), |_| normal(EMOTION_SCALE));
            let b_scale = FEATURE_SCALE / (feature_dim as f64).sqrt();
            let b = Array2::from_shape_fn((ANIM_DIM, feature_dim), |_| normal(b_scale));
            // Centre the emotion term so the uniform mixture sits near the
            // middle of tanh's linear range.
            let centre = a.dot(&Array1::from_elem(NUM_EMOTIONS, 1.0 / NUM_EMOTIONS as f64));
            let c = Array1::from_shape_fn(ANIM_DIM, |i| normal(BIAS_SCALE) - centre[i]);
            if column_rank(&a) == NUM_EMOTIONS {
                return Self { seed, a, b, c };
            }
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `B·feature + c` for every frame, after standardizing each feature
    /// column over the track.
    fn feature_terms(&self, feats: &FeatureFrames) -> Result<Array2<f64>> {
        if feats.dim() != self.feature_dim() {
            return Err(Error::LengthMismatch(format!(
                "animator expects {} feature dimensions, got {}",
                self.feature_dim(),
                feats.dim()
            )));
        }
        let data = feats.data();
        let t_len = data.nrows() as f64;
        let mean = data.sum_axis(ndarray::Axis(0)) / t_len;
        let var = data
            .rows()
            .into_iter()
            .fold(Array1::zeros(data.ncols()), |acc: Array1<f64>, r| {
                let d = &r - &mean;
                acc + &d * &d
            })
            / t_len;
        let std = var.mapv(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 });
        let normalized = (data - &mean) / &std;
        Ok(normalized.dot(&self.b.t()) + &self.c)
    }

    fn frame(&self, e: &[f64; NUM_EMOTIONS], base: ArrayView1<f64>) -> Array1<f64> {
        let mut u = base.to_owned();
        for k in 0..ANIM_DIM {
            for j in 0..NUM_EMOTIONS {
                u[k] += self.a[[k, j]] * e[j];
            }
        }
        u.mapv(f64::tanh)
    }
}

/// Animator output, `T × 16`, one row per feature frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimationFrames(pub Array2<f64>);

/// Applies the frozen animator frame by frame.
pub fn animate(animator: &ToyAnimator, emotions: &[EmotionVector], feats: &FeatureFrames) -> Result<AnimationFrames> {
    if emotions.len() != feats.num_frames() {
        return Err(Error::LengthMismatch(format!(
            "{} emotion frames for {} feature frames",
            emotions.len(),
            feats.num_frames()
        )));
    }
    let base = animator.feature_terms(feats)?;
    let mut out = Array2::zeros((emotions.len(), ANIM_DIM));
    for (t, e) in emotions.iter().enumerate() {
        out.row_mut(t).assign(&animator.frame(e.values(), base.row(t)));
    }
    Ok(AnimationFrames(out))
}

fn softmax(z: &[f64; NUM_EMOTIONS]) -> [f64; NUM_EMOTIONS] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = z.map(|v| (v - max).exp());
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Per-frame extraction objective: mean squared error between
/// `animate(softmax(z))` and `target`, with its gradient in `z`.
///
/// `base` is the frame's `B·feature + c`.
pub fn softmax_mse_loss_grad(
    animator: &ToyAnimator,
    z: &[f64; NUM_EMOTIONS],
    base: ArrayView1<f64>,
    target: ArrayView1<f64>,
) -> (f64, [f64; NUM_EMOTIONS]) {
    let p = softmax(z);
    let y = animator.frame(&p, base);
    let n = ANIM_DIM as f64;
    let mut loss = 0.0;
    let mut d_p = [0.0; NUM_EMOTIONS];
    for k in 0..ANIM_DIM {
        let r = y[k] - target[k];
        loss += r * r / n;
        let d_u = 2.0 * r / n * (1.0 - y[k] * y[k]);
        for j in 0..NUM_EMOTIONS {
            d_p[j] += d_u * animator.a[[k, j]];
        }
    }
    let inner: f64 = (0..NUM_EMOTIONS).map(|j| p[j] * d_p[j]).sum();
    let grad = std::array::from_fn(|j| p[j] * (d_p[j] - inner));
    (loss, grad)
}

pub const EXTRACT_LR: f64 = 0.1;
pub const EXTRACT_MAX_STEPS: usize = 500;
pub const EXTRACT_GRAD_TOLERANCE: f64 = 1e-7;

/// Result of [`extract_emotions`].
#[derive(Debug, Clone)]
pub struct Extraction {
    pub sequence: EmotionSequence,
    /// Final reconstruction MSE per frame.
    pub frame_mse: Vec<f64>,
}

/// Recovers per-frame mixtures whose animation best matches `gt_anim`.
///
/// Each frame is optimized independently by gradient descent on softmax
/// logits starting from zero.
pub fn extract_emotions(
    animator: &ToyAnimator,
    feats: &FeatureFrames,
    gt_anim: &AnimationFrames,
) -> Result<Extraction> {
    let target = &gt_anim.0;
    if target.nrows() != feats.num_frames() || target.ncols() != ANIM_DIM {
        return Err(Error::LengthMismatch(format!(
            "animation has shape {:?} for {} feature frames",
            target.dim(),
            feats.num_frames()
        )));
    }
    let base = animator.feature_terms(feats)?;
    let mut emotions = Vec::with_capacity(target.nrows());
    let mut frame_mse = Vec::with_capacity(target.nrows());
    for t in 0..target.nrows() {
        let mut z = [0.0; NUM_EMOTIONS];
        for _ in 0..EXTRACT_MAX_STEPS {
            let (_, g) = softmax_mse_loss_grad(animator, &z, base.row(t), target.row(t));
            if g.iter().map(|v| v * v).sum::<f64>().sqrt() < EXTRACT_GRAD_TOLERANCE {
                break;
            }
            for j in 0..NUM_EMOTIONS {
                z[j] -= EXTRACT_LR * g[j];
            }
        }
        let (final_loss, _) = softmax_mse_loss_grad(animator, &z, base.row(t), target.row(t));
        frame_mse.push(final_loss);
        emotions.push(EmotionVector::from_raw(softmax(&z))?);
    }
    Ok(Extraction {
        sequence: EmotionSequence::on_grid(emotions, feats.frame_rate())?,
        frame_mse,
    })
}

/// The animator's `B·feature + c` rows, exposed for gradient checks.
pub fn animator_feature_terms(animator: &ToyAnimator, feats: &FeatureFrames) -> Result<Array2<f64>> {
    animator.feature_terms(feats)
}
