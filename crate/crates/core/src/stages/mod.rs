//! The three training stages and the sliding-window machinery that links
//! them.

mod losses;
mod train;
mod window;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{augment, AugmentMode, FeatureConfig, FeatureExtractor, FeatureFrames, FeatureStats, Waveform};
use crate::emotion::{EmotionSequence, EmotionVector, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::evalkit::{accuracy, align_to_grid, densify, mae};
use crate::model::{init_model, predict_frames, Head, ModelConfig, ModelParams};

pub use losses::{
    dirichlet_nll, dpo_frame_loss, dpo_loss, dpo_loss_grad, pooled_loss_grad, sequence_loss_grad, soft_cross_entropy,
    ReferenceTerms,
};
pub use train::{in_validation_split, write_log_csv, LogRow, Optim, TrainOutcome};
pub use window::{
    choose_pairs, gen_preference_candidates, gen_seq_dataset, gen_seq_dataset_from_paths, load_audio_16k,
    sliding_window_predict, Candidate, WindowSpec, CANDIDATE_RANGE_S, MAX_WINDOW_S,
};

use train::{train_loop, Validation};

/// Initial output bias of a stage-1 Dirichlet head. Starting every pooled
/// output at 1 (α = 1, the flat Dirichlet) keeps all of them on the same
/// branch of `g(x) = x² + 1e-6`; the loss is infinite at `x = 0`, so an
/// output that starts negative can never cross over.
pub const DIRICHLET_OUTPUT_BIAS_INIT: f64 = 1.0;

/// Default label-smoothing mass for stage-1 targets.
pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    DirichletMle,
    CrossEntropy,
}

impl LossKind {
    pub fn head(self) -> Head {
        match self {
            LossKind::DirichletMle => Head::Dirichlet,
            LossKind::CrossEntropy => Head::Softmax,
        }
    }

    pub fn for_head(head: Head) -> Self {
        match head {
            Head::Dirichlet => LossKind::DirichletMle,
            Head::Softmax => LossKind::CrossEntropy,
        }
    }
}

/// `(1 − ε)·onehot(label) + ε/6`, kept off the simplex boundary.
pub fn smooth_label(label: usize, eps: f64) -> Result<EmotionVector> {
    if label >= NUM_EMOTIONS {
        return Err(Error::Invalid(format!("label {label} outside 0..{NUM_EMOTIONS}")));
    }
    if !(0.0..=0.5).contains(&eps) {
        return Err(Error::Invalid(format!("label smoothing {eps} outside [0, 0.5]")));
    }
    let mut y = [eps / NUM_EMOTIONS as f64; NUM_EMOTIONS];
    y[label] += 1.0 - eps;
    EmotionVector::from_raw(y)
}

fn features(extractor: &FeatureExtractor, wav: &Waveform) -> Result<FeatureFrames> {
    extractor.extract(wav)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub loss: LossKind,
    pub optim: Optim,
    pub label_smoothing: f64,
    pub augment: bool,
    pub hidden: usize,
    /// Smoothing width carried into the sequence head; the pooled head
    /// ignores it.
    pub smoothing_kernel: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            loss: LossKind::DirichletMle,
            optim: Optim::default(),
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            augment: true,
            hidden: 64,
            smoothing_kernel: ModelConfig::default().smoothing_kernel,
            seed: 0,
        }
    }
}

/// `(1 − eps)·y + eps/6`.
pub fn mix_uniform(y: &EmotionVector, eps: f64) -> Result<EmotionVector> {
    if eps == 0.0 {
        return Ok(*y);
    }
    EmotionVector::from_raw(y.values().map(|v| (1.0 - eps) * v + eps / NUM_EMOTIONS as f64))
}

/// A labeled clip with its audio loaded at 16 kHz.
#[derive(Debug, Clone)]
pub struct Stage1Example {
    pub id: String,
    pub wav: Waveform,
    pub label: usize,
}

const AUGMENT_MODES: [AugmentMode; 3] = [AugmentMode::Shift, AugmentMode::Crop, AugmentMode::Noise];

/// Single-emotion training through the pooled head.
///
/// The checkpoint with the lowest held-out loss is returned; held-out
/// accuracy is logged alongside. Augmentation draws one random mode per
/// clip and epoch from a stream derived from the seed, so runs are
/// reproducible.
pub fn train_stage1(data: &[Stage1Example], cfg: &Stage1Config) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyInput("stage-1 dataset is empty".into()));
    }
    for class in 0..NUM_EMOTIONS {
        if !data.iter().any(|e| e.label == class) {
            return Err(Error::MissingLabelClass(class));
        }
    }
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let feats: Vec<FeatureFrames> = data
        .iter()
        .map(|e| features(&extractor, &e.wav))
        .collect::<Result<_>>()?;
    let targets: Vec<EmotionVector> = data
        .iter()
        .map(|e| smooth_label(e.label, cfg.label_smoothing))
        .collect::<Result<_>>()?;
    let (val, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_validation_split(&data[i].id));
    if train.is_empty() {
        return Err(Error::EmptyInput("every clip fell into the validation split".into()));
    }

    let model_cfg = ModelConfig::default()
        .with_head(cfg.loss.head())
        .with_hidden(cfg.hidden)
        .with_smoothing(cfg.smoothing_kernel);
    let norm = FeatureStats::fit(train.iter().map(|&i| &feats[i]))?;
    let mut params = init_model(&model_cfg, cfg.seed)?.with_norm(norm);
    if cfg.loss == LossKind::DirichletMle {
        params.weights.bo.fill(DIRICHLET_OUTPUT_BIAS_INIT);
    }

    let example_grad = |p: &ModelParams, k: usize, epoch: usize| {
        let i = train[k];
        if cfg.augment && epoch > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5a5_5a5a);
            rng.set_stream(((epoch as u64) << 32) | i as u64);
            let mode = AUGMENT_MODES[rand::Rng::random_range(&mut rng, 0..AUGMENT_MODES.len())];
            let wav = augment(&data[i].wav, mode, &mut rng)?;
            let f = features(&extractor, &wav)?;
            pooled_loss_grad(p, &f, &targets[i], cfg.loss)
        } else {
            pooled_loss_grad(p, &feats[i], &targets[i], cfg.loss)
        }
    };
    let validate = |p: &ModelParams| -> Result<Option<Validation>> {
        if val.is_empty() {
            return Ok(None);
        }
        let mut loss = 0.0;
        for &i in &val {
            loss += pooled_loss_grad(p, &feats[i], &targets[i], cfg.loss)?.0;
        }
        loss /= val.len() as f64;
        let acc = accuracy(p, val.iter().map(|&i| (&feats[i], data[i].label)))?;
        Ok(Some(Validation {
            key: (loss, -acc),
            rows: vec![("val", loss), ("val_accuracy", acc)],
        }))
    };
    train_loop(params, train.len(), &cfg.optim, cfg.seed, example_grad, validate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub optim: Optim,
    /// Targets are mixed with the uniform vector by this weight before the
    /// loss, as stage-1 labels are.
    pub target_smoothing: f64,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            optim: Optim::default(),
            target_smoothing: 0.0,
            seed: 0,
        }
    }
}

/// A track with a (possibly sparse) target sequence.
#[derive(Debug, Clone)]
pub struct SeqExample {
    pub id: String,
    pub wav: Waveform,
    pub target: EmotionSequence,
}

/// Sequence training through the per-frame head, starting from `init`.
///
/// Targets are held onto the 100 fps feature grid. The loss follows the
/// head of `init`: Dirichlet NLL or soft-target cross-entropy per frame.
pub fn train_stage2(init: &ModelParams, data: &[SeqExample], cfg: &Stage2Config) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyInput("sequence dataset is empty".into()));
    }
    if !(0.0..=0.5).contains(&cfg.target_smoothing) {
        return Err(Error::Invalid(format!(
            "target smoothing must lie in [0, 0.5], got {}",
            cfg.target_smoothing
        )));
    }
    let kind = LossKind::for_head(init.head());
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let mut feats = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for ex in data {
        let f = features(&extractor, &ex.wav)?;
        let held = align_to_grid(&ex.target, &f.timestamps());
        targets.push(
            held.iter()
                .map(|y| mix_uniform(y, cfg.target_smoothing))
                .collect::<Result<Vec<_>>>()?,
        );
        feats.push(f);
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_validation_split(&data[i].id));
    let (val, train) = if train.is_empty() {
        (Vec::new(), val)
    } else {
        (val, train)
    };

    let example_grad = |p: &ModelParams, k: usize, _epoch: usize| {
        let i = train[k];
        sequence_loss_grad(p, &feats[i], &targets[i], kind)
    };
    let validate = |p: &ModelParams| -> Result<Option<Validation>> {
        if val.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for &i in &val {
            total += sequence_loss_grad(p, &feats[i], &targets[i], kind)?.0;
        }
        Ok(Some(Validation::single("val", total / val.len() as f64)))
    };
    train_loop(init.clone(), train.len(), &cfg.optim, cfg.seed, example_grad, validate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    /// Mass moved toward uniform on both candidates before scoring, which
    /// damps the log-ratio of near-zero components. Off by default.
    pub pair_smoothing: f64,
    pub optim: Optim,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            pair_smoothing: 0.0,
            optim: Optim {
                epochs: 20,
                ..Optim::default()
            },
            seed: 0,
        }
    }
}

/// A judged pair with its audio.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub id: String,
    pub wav: Waveform,
    pub winner: EmotionSequence,
    pub loser: EmotionSequence,
}

/// A track with ground truth, used for validation and evaluation.
#[derive(Debug, Clone)]
pub struct GtTrack {
    pub id: String,
    pub wav: Waveform,
    pub gt: EmotionSequence,
}

/// Holds a sequence onto the feature grid, failing when it starts after
/// the last frame.
pub fn align_to_features(seq: &EmotionSequence, feats: &FeatureFrames) -> Result<Vec<EmotionVector>> {
    let grid = feats.timestamps();
    let last = *grid.last().expect("feature frames are non-empty");
    if seq.first_time() > last {
        return Err(Error::GridMismatch(format!(
            "sequence starts at {:.3} s, after the last frame at {last:.3} s",
            seq.first_time()
        )));
    }
    Ok(align_to_grid(seq, &grid))
}

/// Per-frame mixtures of the sequence head as a 100 fps sequence.
pub fn predict_sequence(params: &ModelParams, feats: &FeatureFrames) -> Result<EmotionSequence> {
    EmotionSequence::on_grid(predict_frames(params, feats)?, feats.frame_rate())
}

/// Ground truth held onto the feature grid of `feats`.
pub fn dense_gt(gt: &EmotionSequence, feats: &FeatureFrames) -> Result<EmotionSequence> {
    densify(gt, feats.frame_rate(), feats.num_frames())
}

/// Mean over tracks of the sequence head's MAE against dense ground truth.
pub fn mean_sequence_mae(params: &ModelParams, tracks: &[(FeatureFrames, EmotionSequence)]) -> Result<f64> {
    if tracks.is_empty() {
        return Err(Error::EmptyInput("no evaluation tracks".into()));
    }
    let mut total = 0.0;
    for (feats, gt) in tracks {
        total += mae(&predict_sequence(params, feats)?, gt)?;
    }
    Ok(total / tracks.len() as f64)
}

/// Features and dense ground truth for each track.
pub fn prepare_gt_tracks(tracks: &[GtTrack]) -> Result<Vec<(FeatureFrames, EmotionSequence)>> {
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    tracks
        .iter()
        .map(|t| {
            let f = features(&extractor, &t.wav)?;
            let gt = dense_gt(&t.gt, &f)?;
            Ok((f, gt))
        })
        .collect()
}

/// Preference fine-tuning of a stage-2 model against its frozen copy.
///
/// The returned checkpoint is the one with the lowest MAE on `validation`,
/// counting the unmodified stage-2 parameters as epoch 0.
pub fn train_stage3(
    stage2: &ModelParams,
    pairs: &[PairExample],
    validation: &[GtTrack],
    cfg: &DpoConfig,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no preference pairs".into()));
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::Invalid(format!("beta must be positive, got {}", cfg.beta)));
    }
    if !(0.0..=0.5).contains(&cfg.pair_smoothing) {
        return Err(Error::Invalid(format!(
            "pair_smoothing must be in [0, 0.5], got {}",
            cfg.pair_smoothing
        )));
    }
    if stage2.head() != Head::Dirichlet {
        return Err(Error::Invalid("preference optimization needs a Dirichlet head".into()));
    }
    let reference = stage2.clone();
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let mut prepared = Vec::with_capacity(pairs.len());
    for p in pairs {
        let f = features(&extractor, &p.wav)?;
        let smooth = |v: Vec<EmotionVector>| -> Result<Vec<EmotionVector>> {
            v.iter().map(|e| mix_uniform(e, cfg.pair_smoothing)).collect()
        };
        let w = smooth(align_to_features(&p.winner, &f)?)?;
        let l = smooth(align_to_features(&p.loser, &f)?)?;
        let terms = ReferenceTerms::compute(&reference, &f, &w, &l)?;
        prepared.push((f, w, l, terms));
    }
    let val_tracks = prepare_gt_tracks(validation)?;

    let example_grad = |p: &ModelParams, i: usize, _epoch: usize| {
        let (f, w, l, terms) = &prepared[i];
        dpo_loss_grad(p, f, w, l, terms, cfg.beta)
    };
    let validate = |p: &ModelParams| -> Result<Option<Validation>> {
        if val_tracks.is_empty() {
            return Ok(None);
        }
        Ok(Some(Validation::single("val_mae", mean_sequence_mae(p, &val_tracks)?)))
    };
    train_loop(
        stage2.clone(),
        prepared.len(),
        &cfg.optim,
        cfg.seed,
        example_grad,
        validate,
    )
}
