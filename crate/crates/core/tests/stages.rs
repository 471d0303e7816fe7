use dser_core::audio::{FeatureConfig, FeatureExtractor, FeatureStats, Waveform};
use dser_core::model::{forward_frames, init_model, ModelConfig};
use dser_core::stages::*;
use dser_core::synth::{gen_corpus, gen_single_emotion_clips, SynthConfig};
use dser_core::{make_emotion_vector, EmotionSequence, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(seconds: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * 16_000.0).round() as usize;
    Waveform::new((0..n).map(|_| rng.random_range(-0.1..0.1)).collect(), 16_000).unwrap()
}

fn small_model(wav: &Waveform) -> dser_core::model::ModelParams {
    let feats = FeatureExtractor::new(FeatureConfig::default()).extract(wav).unwrap();
    let norm = FeatureStats::fit([&feats]).unwrap();
    init_model(&ModelConfig::default().with_hidden(8), 4)
        .unwrap()
        .with_norm(norm)
}

fn stage1_examples(n: usize, seed: u64) -> Vec<Stage1Example> {
    gen_single_emotion_clips(n, 8.0, seed)
        .unwrap()
        .into_iter()
        .map(|c| Stage1Example {
            id: c.id,
            wav: c.wav,
            label: c.label.unwrap(),
        })
        .collect()
}

#[test]
fn sliding_window_centres_on_a_ten_second_track() {
    let wav = noise(10.0, 1);
    let params = small_model(&wav);
    let seq = sliding_window_predict(&params, &wav, WindowSpec::new(1.4, 1.0).unwrap()).unwrap();
    let want: Vec<f64> = (0..9).map(|k| 0.7 + k as f64).collect();
    assert_eq!(seq.len(), 9);
    for (t, w) in seq.timestamps().iter().zip(&want) {
        assert!((t - w).abs() < 1e-12, "{t} vs {w}");
    }
}

#[test]
fn sliding_window_edge_cases() {
    let wav = noise(1.4, 2);
    let params = small_model(&wav);
    let spec = WindowSpec::new(1.4, 1.0).unwrap();
    assert_eq!(sliding_window_predict(&params, &wav, spec).unwrap().len(), 1);
    let short = noise(1.0, 2);
    assert!(matches!(
        sliding_window_predict(&params, &short, spec),
        Err(Error::AudioTooShort { .. })
    ));
    // Timestamps stay within [window/2, duration − window/2].
    let wav = noise(3.3, 3);
    let spec = WindowSpec::new(0.6, 0.35).unwrap();
    let seq = sliding_window_predict(&params, &wav, spec).unwrap();
    assert_eq!(seq.len(), spec.count(3.3));
    for t in seq.timestamps() {
        assert!(t >= 0.3 - 1e-12 && t <= 3.3 - 0.3 + 1e-12);
    }
}

#[test]
fn constant_emotion_audio_gives_steady_windows() {
    let clips = gen_corpus(&SynthConfig {
        n_tracks: 1,
        min_duration_s: 6.0,
        max_duration_s: 6.0,
        mean_segment_s: 100.0,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(clips[0].gt.len(), 1);
    let mut cfg = Stage1Config {
        augment: false,
        hidden: 16,
        ..Stage1Config::default()
    };
    cfg.optim.epochs = 15;
    let params = train_stage1(&stage1_examples(60, 9), &cfg).unwrap().params;
    let seq = sliding_window_predict(&params, &clips[0].wav, WindowSpec::new(1.4, 1.0).unwrap()).unwrap();
    let first = seq.frames()[0].e;
    for f in seq.frames() {
        assert!(f.e.mean_abs_diff(&first) < 0.05, "{:?} vs {:?}", f.e, first);
    }
}

#[test]
fn seq_dataset_matches_window_counts_and_is_deterministic() {
    let tracks: Vec<(String, Waveform)> = (0..5)
        .map(|i| (format!("t{i}"), noise(2.0 + i as f64 * 0.7, i)))
        .collect();
    let params = small_model(&tracks[0].1);
    let spec = WindowSpec::new(1.4, 1.0).unwrap();
    let a = gen_seq_dataset(&params, &tracks, spec).unwrap();
    assert_eq!(a.len(), 5);
    for ((id, seq), (tid, wav)) in a.iter().zip(&tracks) {
        assert_eq!(id, tid);
        assert_eq!(seq.len(), spec.count(wav.duration()));
    }
    assert_eq!(a, gen_seq_dataset(&params, &tracks, spec).unwrap());
    assert!(gen_seq_dataset(&params, &[], spec).is_err());
}

#[test]
fn seq_dataset_from_paths_skips_unreadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.wav");
    dser_core::audio::write_wav_pcm16(&good, &noise(2.0, 1)).unwrap();
    let bad = dir.path().join("bad.wav");
    std::fs::write(&bad, b"junk").unwrap();
    let params = small_model(&noise(2.0, 1));
    let spec = WindowSpec::new(1.4, 1.0).unwrap();
    let out = gen_seq_dataset_from_paths(&params, &[("good".into(), good), ("bad".into(), bad.clone())], spec).unwrap();
    assert_eq!(out.len(), 1);
    assert!(gen_seq_dataset_from_paths(&params, &[("bad".into(), bad)], spec).is_err());
}

#[test]
fn preference_candidates_are_distinct_and_in_range() {
    let wav = noise(4.0, 5);
    let params = small_model(&wav);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gen_preference_candidates(&params, &wav, 5, CANDIDATE_RANGE_S, &mut rng).unwrap()
    };
    let c = draw(3);
    assert_eq!(c.len(), 5);
    for (i, a) in c.iter().enumerate() {
        assert!((0.25..=1.25).contains(&a.spec.window_s));
        assert!(a.spec.stride_s <= a.spec.window_s);
        for b in &c[..i] {
            let near =
                (a.spec.window_s - b.spec.window_s).abs() < 0.05 && (a.spec.stride_s - b.spec.stride_s).abs() < 0.05;
            assert!(!near);
        }
    }
    assert_eq!(c, draw(3));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        gen_preference_candidates(&params, &noise(1.0, 1), 5, CANDIDATE_RANGE_S, &mut rng),
        Err(Error::AudioTooShort { .. })
    ));
}

#[test]
fn stage1_rejects_missing_classes() {
    let data: Vec<Stage1Example> = stage1_examples(12, 1).into_iter().filter(|e| e.label != 4).collect();
    assert!(matches!(
        train_stage1(&data, &Stage1Config::default()),
        Err(Error::MissingLabelClass(4))
    ));
    assert!(train_stage1(&[], &Stage1Config::default()).is_err());
}

#[test]
fn stage1_zero_learning_rate_leaves_parameters_unchanged() {
    let data = stage1_examples(30, 2);
    let mut cfg = Stage1Config {
        augment: false,
        hidden: 8,
        ..Stage1Config::default()
    };
    cfg.optim.epochs = 3;
    cfg.optim.lr_start = 0.0;
    cfg.optim.lr_end = 0.0;
    let out = train_stage1(&data, &cfg).unwrap();
    cfg.optim.epochs = 0;
    let init = train_stage1(&data, &cfg).unwrap();
    assert_eq!(out.params.weights, init.params.weights);
    let train: Vec<f64> = out.log.iter().filter(|r| r.split == "train").map(|r| r.value).collect();
    assert_eq!(train.len(), 4);
    assert!(train.iter().all(|v| (v - train[0]).abs() < 1e-12), "{train:?}");
}

#[test]
fn stage1_first_epoch_lowers_training_loss() {
    let data = stage1_examples(48, 3);
    let mut improved = 0;
    for seed in 0..10 {
        let mut cfg = Stage1Config {
            augment: false,
            hidden: 16,
            seed,
            ..Stage1Config::default()
        };
        cfg.optim.epochs = 1;
        let out = train_stage1(&data, &cfg).unwrap();
        let train: Vec<f64> = out.log.iter().filter(|r| r.split == "train").map(|r| r.value).collect();
        if train[1] < train[0] {
            improved += 1;
        }
    }
    assert!(improved >= 9, "{improved}/10");
}

#[test]
fn stage1_is_deterministic() {
    let data = stage1_examples(24, 4);
    let mut cfg = Stage1Config {
        hidden: 8,
        seed: 5,
        ..Stage1Config::default()
    };
    cfg.optim.epochs = 2;
    let a = train_stage1(&data, &cfg).unwrap();
    let b = train_stage1(&data, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
}

fn stage2_fixture() -> (dser_core::model::ModelParams, Vec<SeqExample>) {
    let corpus = gen_corpus(&SynthConfig {
        n_tracks: 6,
        min_duration_s: 2.0,
        max_duration_s: 3.0,
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    let params = small_model(&corpus[0].wav);
    let spec = WindowSpec::new(1.4, 1.0).unwrap();
    let data = corpus
        .iter()
        .map(|t| SeqExample {
            id: t.id.clone(),
            wav: t.wav.clone(),
            target: sliding_window_predict(&params, &t.wav, spec).unwrap(),
        })
        .collect();
    (params, data)
}

#[test]
fn stage2_reduces_frame_loss() {
    let (params, data) = stage2_fixture();
    let mut cfg = Stage2Config::default();
    cfg.optim.epochs = 5;
    cfg.optim.batch_size = 2;
    let out = train_stage2(&params, &data, &cfg).unwrap();
    let train: Vec<f64> = out.log.iter().filter(|r| r.split == "train").map(|r| r.value).collect();
    assert!(train.last().unwrap() < &train[0], "{train:?}");
}

fn pairs_for(params: &dser_core::model::ModelParams, data: &[SeqExample]) -> Vec<PairExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    data.iter()
        .map(|ex| {
            let c = gen_preference_candidates(params, &ex.wav, 2, CANDIDATE_RANGE_S, &mut rng).unwrap();
            PairExample {
                id: ex.id.clone(),
                wav: ex.wav.clone(),
                winner: c[0].sequence.clone(),
                loser: c[1].sequence.clone(),
            }
        })
        .collect()
}

#[test]
fn dpo_against_itself_is_ln_two() {
    let (params, data) = stage2_fixture();
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    for p in pairs_for(&params, &data) {
        let feats = extractor.extract(&p.wav).unwrap();
        let w = align_to_features(&p.winner, &feats).unwrap();
        let l = align_to_features(&p.loser, &feats).unwrap();
        let (loss, grad) = dpo_loss(&params, &params, &feats, &w, &l, 0.5).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9, "{loss}");
        assert!(grad.is_finite());
    }
}

#[test]
fn zero_epoch_stage3_is_bit_identical() {
    let (params, data) = stage2_fixture();
    let pairs = pairs_for(&params, &data);
    let mut cfg = DpoConfig::default();
    cfg.optim.epochs = 0;
    let out = train_stage3(&params, &pairs, &[], &cfg).unwrap();
    let feats = FeatureExtractor::new(FeatureConfig::default())
        .extract(&data[0].wav)
        .unwrap();
    assert_eq!(
        forward_frames(&out.params, &feats).unwrap(),
        forward_frames(&params, &feats).unwrap()
    );
}

#[test]
fn stage3_validates_its_inputs() {
    let (params, data) = stage2_fixture();
    let pairs = pairs_for(&params, &data);
    let cfg = DpoConfig {
        beta: 0.0,
        ..DpoConfig::default()
    };
    assert!(train_stage3(&params, &pairs, &[], &cfg).is_err());
    assert!(train_stage3(&params, &[], &[], &DpoConfig::default()).is_err());
    let mut ce = params.clone();
    ce.config = ce.config.with_head(dser_core::model::Head::Softmax);
    assert!(train_stage3(&ce, &pairs, &[], &DpoConfig::default()).is_err());
}

#[test]
fn pair_alignment_fails_without_overlap() {
    let (_, data) = stage2_fixture();
    let feats = FeatureExtractor::new(FeatureConfig::default())
        .extract(&data[0].wav)
        .unwrap();
    let late = EmotionSequence::from_pairs([(1000.0, make_emotion_vector([1.0; 6]).unwrap())]).unwrap();
    assert!(matches!(align_to_features(&late, &feats), Err(Error::GridMismatch(_))));
}
