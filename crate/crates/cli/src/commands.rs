use std::path::{Path, PathBuf};
use std::time::Instant;

use dser_annotate::{Manifest, ManifestPair};
use dser_core::audio::{write_wav_f32, FeatureConfig, FeatureExtractor, FeatureFrames, Waveform};
use dser_core::evalkit::{animate, densify, extract_emotions, mae, ToyAnimator};
use dser_core::gradcheck::{self, CheckResult};
use dser_core::model::{load_model, save_model, Head, ModelParams};
use dser_core::stages::{
    choose_pairs, gen_preference_candidates, mean_sequence_mae, prepare_gt_tracks, sliding_window_predict,
    train_stage1, train_stage2, train_stage3, write_log_csv, GtTrack, LossKind, PairExample, SeqExample, Stage1Example,
    TrainOutcome, WindowSpec,
};
use dser_core::synth::{gen_corpus, gen_single_emotion_clips, oracle_prefer, Choice, SynthTrack};
use dser_core::{EmotionSequence, LabeledClip, PreferencePair, NUM_EMOTIONS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{load_audio, read_records, write_csv, write_records, HasWav, SeqRecord, TrackRecord};

impl HasWav for ManifestPair {
    fn wav_mut(&mut self) -> &mut PathBuf {
        &mut self.wav
    }
}

/// Short name used in file names and reports.
pub fn head_tag(head: Head) -> &'static str {
    match head {
        Head::Dirichlet => "dirichlet",
        Head::Softmax => "ce",
    }
}

fn backbone_config(p: &ModelParams) -> String {
    format!(
        "logmel{}-ctx{}-h{}-k{}",
        p.config.input_dim, p.config.context_window, p.config.hidden, p.config.smoothing_kernel
    )
}

fn model_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load(path: &Path) -> CliResult<ModelParams> {
    Ok(load_model(path)?)
}

fn save_outcome(out: &TrainOutcome, model: &Path, log: &Path) -> CliResult<Vec<PathBuf>> {
    save_model(&out.params, model)?;
    write_log_csv(&out.log, log)?;
    log::info!("{}: best epoch {}", model.display(), out.best_epoch);
    Ok(vec![model.to_path_buf(), log.to_path_buf()])
}

// ---------------------------------------------------------------- synth

fn write_tracks(out: &Path, set: &str, tracks: &[SynthTrack]) -> CliResult<Vec<TrackRecord>> {
    let dir = out.join("wav").join(set);
    std::fs::create_dir_all(&dir)?;
    tracks
        .iter()
        .map(|t| {
            let id = format!("{set}-{}", t.id);
            let wav = dir.join(format!("{id}.wav"));
            write_wav_f32(&wav, &t.wav)?;
            Ok(TrackRecord {
                id,
                wav,
                gt: Some(t.gt.clone()),
            })
        })
        .collect()
}

fn labeled(records: &[TrackRecord], tracks: &[SynthTrack]) -> Vec<LabeledClip> {
    records
        .iter()
        .zip(tracks)
        .map(|(r, t)| LabeledClip {
            id: r.id.clone(),
            audio_path: r.wav.clone(),
            label: t.label.expect("single-emotion clips carry a label"),
        })
        .collect()
}

pub fn synth_gen(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let s = &cfg.synth;
    let mut outputs = Vec::new();
    let clip_sets = [("stage1_train", s.stage1_clips), ("stage1_test", s.stage1_test_clips)];
    for (set, n) in clip_sets {
        let clips = gen_single_emotion_clips(n, s.kappa, cfg.seed_for(&format!("synth/{set}")))?;
        let records = write_tracks(out, set, &clips)?;
        let path = out.join(format!("{set}.jsonl"));
        write_records(&path, &labeled(&records, &clips))?;
        outputs.push(path);
    }
    let track_sets = [
        ("seq_tracks", s.seq_tracks),
        ("eval_gt", s.eval_tracks),
        ("pair_tracks", s.pair_tracks),
        ("stage3_val", s.val_tracks),
    ];
    for (set, n) in track_sets {
        if n == 0 {
            continue;
        }
        let tracks = gen_corpus(&s.corpus(n, cfg.seed_for(&format!("synth/{set}"))))?;
        let records = write_tracks(out, set, &tracks)?;
        let path = out.join(format!("{set}.jsonl"));
        write_records(&path, &records)?;
        outputs.push(path);
    }
    outputs.push(out.join("wav"));
    Ok(outputs)
}

// ---------------------------------------------------------------- stage 1

pub fn stage1_train(cfg: &RunConfig, data: &Path, loss: LossKind, out: &Path) -> CliResult<Vec<PathBuf>> {
    let clips: Vec<LabeledClip> = read_records(data)?;
    let examples = clips
        .iter()
        .map(|c| {
            Ok(Stage1Example {
                id: c.id.clone(),
                wav: load_audio(&c.audio_path)?,
                label: c.label,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let stage_cfg = cfg.stage1.to_config(loss, cfg.seed_for("stage1"));
    let outcome = train_stage1(&examples, &stage_cfg)?;
    let tag = head_tag(loss.head());
    save_outcome(
        &outcome,
        &out.join(format!("stage1_{tag}.json")),
        &out.join(format!("stage1_{tag}_log.csv")),
    )
}

#[derive(Debug, Serialize)]
struct AccuracyRow {
    model_id: String,
    approach: &'static str,
    loss: &'static str,
    backbone_config: String,
    accuracy: f64,
}

pub fn stage1_eval(models: &[PathBuf], data: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    if models.is_empty() {
        return Err(CliError::Validation("at least one --model is required".into()));
    }
    let params: Vec<ModelParams> = models.iter().map(|m| load(m)).collect::<CliResult<_>>()?;
    let clips: Vec<LabeledClip> = read_records(data)?;
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let feats = clips
        .iter()
        .map(|c| Ok((extractor.extract(&load_audio(&c.audio_path)?)?, c.label)))
        .collect::<CliResult<Vec<(FeatureFrames, usize)>>>()?;
    let mut rows = Vec::new();
    for (path, p) in models.iter().zip(&params) {
        let acc = dser_core::evalkit::accuracy(p, feats.iter().map(|(f, l)| (f, *l)))?;
        println!("{}\taccuracy {acc:.4}", model_id(path));
        rows.push(AccuracyRow {
            model_id: model_id(path),
            approach: "stage1",
            loss: head_tag(p.head()),
            backbone_config: backbone_config(p),
            accuracy: acc,
        });
    }
    let path = out.join("stage1_eval.csv");
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

// ---------------------------------------------------------------- stage 2

pub fn window_spec(cfg: &RunConfig, window: Option<f64>, stride: Option<f64>) -> CliResult<WindowSpec> {
    Ok(WindowSpec::new(
        window.unwrap_or(cfg.seq.window_s),
        stride.unwrap_or(cfg.seq.stride_s),
    )?)
}

/// The baseline window for `eval-mae`, from `[eval]` unless overridden.
pub fn eval_spec(cfg: &RunConfig, window: Option<f64>, stride: Option<f64>) -> CliResult<WindowSpec> {
    Ok(WindowSpec::new(
        window.unwrap_or(cfg.eval.window_s),
        stride.unwrap_or(cfg.eval.stride_s),
    )?)
}

pub fn seq_gen(model: &Path, tracks: &Path, spec: WindowSpec, output: &Path) -> CliResult<Vec<PathBuf>> {
    let params = load(model)?;
    let tracks: Vec<TrackRecord> = read_records(tracks)?;
    let mut records = Vec::new();
    for t in &tracks {
        let seq = load_audio(&t.wav).and_then(|wav| Ok(sliding_window_predict(&params, &wav, spec)?));
        match seq {
            Ok(sequence) => records.push(SeqRecord {
                id: t.id.clone(),
                wav: t.wav.clone(),
                sequence,
            }),
            Err(e) => log::warn!("skipping {}: {e}", t.wav.display()),
        }
    }
    if records.is_empty() {
        return Err(CliError::Validation("every track was skipped".into()));
    }
    write_records(output, &records)?;
    Ok(vec![output.to_path_buf()])
}

pub fn stage2_train(cfg: &RunConfig, init: &Path, data: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let init = load(init)?;
    let records: Vec<SeqRecord> = read_records(data)?;
    let examples = records
        .iter()
        .map(|r| {
            Ok(SeqExample {
                id: r.id.clone(),
                wav: load_audio(&r.wav)?,
                target: r.sequence.clone(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let outcome = train_stage2(&init, &examples, &cfg.stage2())?;
    let tag = head_tag(init.head());
    save_outcome(
        &outcome,
        &out.join(format!("stage2_{tag}.json")),
        &out.join(format!("stage2_{tag}_log.csv")),
    )
}

// ---------------------------------------------------------------- stage 3

/// Pairs for one track: candidates from random window/stride draws, then
/// `pairs_per_track` distinct index pairs.
fn track_pairs(
    cfg: &RunConfig,
    params: &ModelParams,
    wav: &Waveform,
    index: usize,
) -> CliResult<Vec<((usize, usize), EmotionSequence, EmotionSequence, ChaCha8Rng)>> {
    let p = &cfg.pairs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_for("pairs"));
    rng.set_stream(index as u64);
    let cands = gen_preference_candidates(params, wav, p.candidates, (p.min_window_s, p.max_window_s), &mut rng)?;
    Ok(choose_pairs(p.candidates, p.pairs_per_track, &mut rng)
        .into_iter()
        .map(|(i, j)| {
            (
                (i, j),
                cands[i].sequence.clone(),
                cands[j].sequence.clone(),
                rng.clone(),
            )
        })
        .collect())
}

pub fn pairs_gen(cfg: &RunConfig, model: &Path, tracks: &Path, oracle: bool, out: &Path) -> CliResult<Vec<PathBuf>> {
    let params = load(model)?;
    let tracks: Vec<TrackRecord> = read_records(tracks)?;
    if oracle && tracks.iter().any(|t| t.gt.is_none()) {
        return Err(CliError::Validation(
            "--oracle needs ground truth on every track".into(),
        ));
    }
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let mut judged = Vec::new();
    let mut manifest = Vec::new();
    for (index, t) in tracks.iter().enumerate() {
        let wav = load_audio(&t.wav)?;
        // Judge against ground truth held onto the feature grid.
        let dense_gt = match &t.gt {
            Some(gt) if oracle => {
                let feats = extractor.extract(&wav)?;
                Some(densify(gt, feats.frame_rate(), feats.num_frames())?)
            }
            _ => None,
        };
        for ((i, j), a, b, mut rng) in track_pairs(cfg, &params, &wav, index)? {
            if a == b {
                log::warn!("{}: candidates {i} and {j} coincide; skipped", t.id);
                continue;
            }
            let pair_id = format!("{}-{i}-{j}", t.id);
            if oracle {
                let gt = dense_gt.as_ref().expect("checked above");
                let (w, l) = match oracle_prefer(gt, &a, &b, cfg.pairs.flip_prob, &mut rng)? {
                    Choice::A => (a, b),
                    Choice::B => (b, a),
                };
                judged.push(PreferencePair::new(pair_id, t.wav.clone(), w, l)?);
            } else {
                manifest.push(ManifestPair::new(
                    pair_id,
                    t.id.clone(),
                    t.wav.clone(),
                    [a, b],
                    cfg.seed_for("ab"),
                ));
            }
        }
    }
    let path = if oracle {
        let path = out.join("pairs.jsonl");
        write_records(&path, &judged)?;
        path
    } else {
        // Validates ids and assignments before anything is written.
        Manifest::new(manifest.clone())?;
        let path = out.join("pairs_manifest.jsonl");
        write_records(&path, &manifest)?;
        path
    };
    Ok(vec![path])
}

fn load_pairs(path: &Path) -> CliResult<Vec<PairExample>> {
    let pairs: Vec<PreferencePair> = read_records(path)?;
    let mut cache: Vec<(PathBuf, Waveform)> = Vec::new();
    pairs
        .into_iter()
        .map(|p| {
            let wav = match cache.iter().find(|(w, _)| *w == p.audio_path) {
                Some((_, w)) => w.clone(),
                None => {
                    let w = load_audio(&p.audio_path)?;
                    cache.push((p.audio_path.clone(), w.clone()));
                    w
                }
            };
            Ok(PairExample {
                id: p.id,
                wav,
                winner: p.winner,
                loser: p.loser,
            })
        })
        .collect()
}

fn load_gt(path: &Path) -> CliResult<Vec<GtTrack>> {
    let tracks: Vec<TrackRecord> = read_records(path)?;
    tracks
        .into_iter()
        .map(|t| {
            let gt =
                t.gt.ok_or_else(|| CliError::Validation(format!("track {} has no ground truth", t.id)))?;
            Ok(GtTrack {
                id: t.id,
                wav: load_audio(&t.wav)?,
                gt,
            })
        })
        .collect()
}

pub fn stage3_train(
    cfg: &RunConfig,
    init: &Path,
    pairs: &Path,
    val: Option<&Path>,
    beta: f64,
    out: &Path,
) -> CliResult<Vec<PathBuf>> {
    let init = load(init)?;
    let pairs = load_pairs(pairs)?;
    let val = match val {
        Some(v) => load_gt(v)?,
        None => Vec::new(),
    };
    let outcome = train_stage3(&init, &pairs, &val, &cfg.stage3.to_config(beta, cfg.seed_for("stage3")))?;
    save_outcome(&outcome, &out.join("stage3.json"), &out.join("stage3_log.csv"))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    beta: f64,
    mae: f64,
    best_epoch: usize,
}

pub fn beta_sweep(
    cfg: &RunConfig,
    init: &Path,
    pairs: &Path,
    val: Option<&Path>,
    gt: &Path,
    betas: &[f64],
    out: &Path,
) -> CliResult<Vec<PathBuf>> {
    if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0)) {
        return Err(CliError::Validation("beta values must be positive".into()));
    }
    let init = load(init)?;
    let pairs = load_pairs(pairs)?;
    let val = match val {
        Some(v) => load_gt(v)?,
        None => Vec::new(),
    };
    let eval = prepare_gt_tracks(&load_gt(gt)?)?;
    let dir = out.join("beta_sweep");
    std::fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &beta in betas {
        let outcome = train_stage3(&init, &pairs, &val, &cfg.stage3.to_config(beta, cfg.seed_for("stage3")))?;
        let m = mean_sequence_mae(&outcome.params, &eval)?;
        println!("beta {beta}\tmae {m:.6}");
        outputs.extend(save_outcome(
            &outcome,
            &dir.join(format!("stage3_beta_{beta}.json")),
            &dir.join(format!("stage3_beta_{beta}_log.csv")),
        )?);
        rows.push(SweepRow {
            beta,
            mae: m,
            best_epoch: outcome.best_epoch,
        });
    }
    let path = out.join("beta_sweep.csv");
    write_csv(&path, &rows)?;
    outputs.push(path);
    Ok(outputs)
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Serialize)]
struct MaeRow {
    model_id: String,
    approach: &'static str,
    loss: &'static str,
    backbone_config: String,
    mae: String,
}

/// Checkpoints compared by `eval-mae`; any may be absent.
#[derive(Debug, Default, Clone)]
pub struct MaeModels {
    pub stage1_dirichlet: Option<PathBuf>,
    pub stage1_ce: Option<PathBuf>,
    pub stage2_dirichlet: Option<PathBuf>,
    pub stage2_ce: Option<PathBuf>,
    pub stage3_dirichlet: Option<PathBuf>,
}

/// Mean sliding-window MAE of a whole-clip model against dense ground truth.
pub fn sliding_window_mae(
    params: &ModelParams,
    tracks: &[GtTrack],
    dense: &[(FeatureFrames, EmotionSequence)],
    spec: WindowSpec,
) -> CliResult<f64> {
    let mut total = 0.0;
    for (t, (_, gt)) in tracks.iter().zip(dense) {
        total += mae(&sliding_window_predict(params, &t.wav, spec)?, gt)?;
    }
    Ok(total / tracks.len() as f64)
}

pub fn eval_mae(models: &MaeModels, gt: &Path, spec: WindowSpec, out: &Path) -> CliResult<Vec<PathBuf>> {
    let tracks = load_gt(gt)?;
    let dense = prepare_gt_tracks(&tracks)?;
    let cells: [(&'static str, &'static str, &Option<PathBuf>); 6] = [
        ("sliding_window", "dirichlet", &models.stage1_dirichlet),
        ("sliding_window", "ce", &models.stage1_ce),
        ("stage2", "dirichlet", &models.stage2_dirichlet),
        ("stage2", "ce", &models.stage2_ce),
        ("stage3", "dirichlet", &models.stage3_dirichlet),
        // Preference fine-tuning needs Dirichlet densities; there is no
        // cross-entropy stage-3 model.
        ("stage3", "ce", &None),
    ];
    let mut rows = Vec::new();
    for (approach, loss, path) in cells {
        let row = match path {
            Some(p) => {
                let params = load(p)?;
                if head_tag(params.head()) != loss {
                    return Err(CliError::Validation(format!(
                        "{} has a {} head, expected {loss}",
                        p.display(),
                        head_tag(params.head())
                    )));
                }
                let m = if approach == "sliding_window" {
                    sliding_window_mae(&params, &tracks, &dense, spec)?
                } else {
                    mean_sequence_mae(&params, &dense)?
                };
                MaeRow {
                    model_id: model_id(p),
                    approach,
                    loss,
                    backbone_config: backbone_config(&params),
                    mae: m.to_string(),
                }
            }
            None => MaeRow {
                model_id: "n/a".into(),
                approach,
                loss,
                backbone_config: "n/a".into(),
                mae: "n/a".into(),
            },
        };
        println!("{approach}\t{loss}\t{}", row.mae);
        rows.push(row);
    }
    let path = out.join("eval_mae.csv");
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

#[derive(Debug, Serialize)]
struct ExtractRow {
    id: String,
    target: &'static str,
    mae: f64,
    max_abs_error: f64,
    /// Largest per-component range of the recovered frames.
    spread: f64,
    mean_frame_mse: f64,
}

pub const EXTRACT_MAE_LIMIT: f64 = 0.05;
pub const EXTRACT_CONSTANT_LIMIT: f64 = 0.01;

/// Animates known sequences with the toy animator and recovers them. Each
/// track is tried with its ground truth and with its first mixture held
/// constant. Fails if the mean MAE reaches 0.05 or a constant track is
/// off by 0.01 or more in any component.
pub fn extract_oracle(cfg: &RunConfig, tracks: &Path, out: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let mut tracks = load_gt(tracks)?;
    tracks.truncate(cfg.extract.tracks.max(1));
    let animator = ToyAnimator::new(cfg.seed_for("animator"), dser_core::audio::NUM_MEL_BANDS);
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let mut rows = Vec::new();
    for t in &tracks {
        let feats = extractor.extract(&t.wav)?;
        let constant = EmotionSequence::from_pairs([(0.0, t.gt.frames()[0].e)])?;
        for (target, seq) in [("sequence", &t.gt), ("constant", &constant)] {
            let truth = densify(seq, feats.frame_rate(), feats.num_frames())?;
            let anim = animate(&animator, &truth.emotions(), &feats)?;
            let got = extract_emotions(&animator, &feats, &anim)?;
            let max_abs_error = got
                .sequence
                .frames()
                .iter()
                .zip(truth.frames())
                .flat_map(|(a, b)| a.e.values().iter().zip(b.e.values()).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
            let spread = (0..NUM_EMOTIONS)
                .map(|i| {
                    let (lo, hi) = got
                        .sequence
                        .frames()
                        .iter()
                        .map(|f| f.e.values()[i])
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    hi - lo
                })
                .fold(0.0, f64::max);
            rows.push(ExtractRow {
                id: t.id.clone(),
                target,
                mae: mae(&got.sequence, &truth)?,
                max_abs_error,
                spread,
                mean_frame_mse: got.frame_mse.iter().sum::<f64>() / got.frame_mse.len() as f64,
            });
        }
    }
    let seq_rows: Vec<&ExtractRow> = rows.iter().filter(|r| r.target == "sequence").collect();
    let mean_mae = seq_rows.iter().map(|r| r.mae).sum::<f64>() / seq_rows.len() as f64;
    let constant_rows = rows.iter().filter(|r| r.target == "constant");
    let worst_spread = constant_rows.clone().map(|r| r.spread).fold(0.0, f64::max);
    let worst_constant = constant_rows.map(|r| r.max_abs_error).fold(0.0, f64::max);
    println!(
        "tracks {}\tmean mae {mean_mae:.6}\tworst constant spread {worst_spread:.6}\tworst constant error {worst_constant:.6}",
        seq_rows.len()
    );
    let mut outputs = Vec::new();
    if let Some(out) = out {
        let path = out.join("extract_oracle.csv");
        write_csv(&path, &rows)?;
        outputs.push(path);
    }
    if mean_mae >= EXTRACT_MAE_LIMIT || worst_constant >= EXTRACT_CONSTANT_LIMIT {
        return Err(CliError::Validation(format!(
            "oracle extraction outside tolerance: mean mae {mean_mae:.6}, worst constant error {worst_constant:.6}"
        )));
    }
    Ok(outputs)
}

pub fn grad_check(instances: u64, out: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let start = Instant::now();
    let results: Vec<CheckResult> = gradcheck::run_all(instances);
    for r in &results {
        println!(
            "{}\t{}\tinstances {}\tmax relative error {:.3e}",
            if r.passed { "ok" } else { "FAIL" },
            r.name,
            r.instances,
            r.max_error
        );
    }
    println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    let mut outputs = Vec::new();
    if let Some(out) = out {
        let path = out.join("grad_check.csv");
        write_csv(&path, &results)?;
        outputs.push(path);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if !failed.is_empty() {
        return Err(CliError::Validation(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )));
    }
    Ok(outputs)
}

// ---------------------------------------------------------------- annotation

pub fn annotate_export(log: &Path, manifest: &Path, output: &Path) -> CliResult<Vec<PathBuf>> {
    let export = dser_annotate::export_files(log, manifest)?;
    for o in &export.orphans {
        log::warn!("orphan judgment: pair {} by {}", o.pair_id, o.annotator);
    }
    write_records(output, &export.pairs)?;
    println!(
        "{}",
        serde_json::json!({ "pairs": export.pairs.len(), "orphans": export.orphans.len() })
    );
    Ok(vec![output.to_path_buf()])
}

// ---------------------------------------------------------------- everything

/// The whole benchmark under one directory.
pub fn run_all(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    let step = |name: &str, t: Instant| log::info!("{name} done in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    outputs.extend(synth_gen(cfg, out)?);
    step("synth-gen", t);

    let mut heads = vec![LossKind::DirichletMle];
    if cfg.run.cross_entropy {
        heads.push(LossKind::CrossEntropy);
    }
    let spec = window_spec(cfg, None, None)?;
    let mut models = MaeModels::default();
    let mut stage1_models = Vec::new();
    for &loss in &heads {
        let tag = head_tag(loss.head());
        let t = Instant::now();
        outputs.extend(stage1_train(cfg, &out.join("stage1_train.jsonl"), loss, out)?);
        let s1 = out.join(format!("stage1_{tag}.json"));
        step("stage1-train", t);
        let seq = out.join(format!("seq_{tag}.jsonl"));
        outputs.extend(seq_gen(&s1, &out.join("seq_tracks.jsonl"), spec, &seq)?);
        let t = Instant::now();
        outputs.extend(stage2_train(cfg, &s1, &seq, out)?);
        step("stage2-train", t);
        let s2 = out.join(format!("stage2_{tag}.json"));
        match loss {
            LossKind::DirichletMle => {
                models.stage1_dirichlet = Some(s1.clone());
                models.stage2_dirichlet = Some(s2);
            }
            LossKind::CrossEntropy => {
                models.stage1_ce = Some(s1.clone());
                models.stage2_ce = Some(s2);
            }
        }
        stage1_models.push(s1);
    }
    outputs.extend(stage1_eval(&stage1_models, &out.join("stage1_test.jsonl"), out)?);

    let s1 = models.stage1_dirichlet.clone().expect("dirichlet head always runs");
    let s2 = models.stage2_dirichlet.clone().expect("dirichlet head always runs");
    outputs.extend(pairs_gen(cfg, &s1, &out.join("pair_tracks.jsonl"), true, out)?);
    let val = out.join("stage3_val.jsonl");
    let val = val.exists().then_some(val);
    let t = Instant::now();
    outputs.extend(stage3_train(
        cfg,
        &s2,
        &out.join("pairs.jsonl"),
        val.as_deref(),
        cfg.stage3.beta,
        out,
    )?);
    step("stage3-train", t);
    models.stage3_dirichlet = Some(out.join("stage3.json"));
    outputs.extend(eval_mae(
        &models,
        &out.join("eval_gt.jsonl"),
        eval_spec(cfg, None, None)?,
        out,
    )?);

    if cfg.run.beta_sweep {
        let t = Instant::now();
        outputs.extend(beta_sweep(
            cfg,
            &s2,
            &out.join("pairs.jsonl"),
            val.as_deref(),
            &out.join("eval_gt.jsonl"),
            &cfg.stage3.sweep,
            out,
        )?);
        step("beta-sweep", t);
    }
    if cfg.run.extract_oracle {
        match extract_oracle(cfg, &out.join("eval_gt.jsonl"), Some(out)) {
            Ok(o) => outputs.extend(o),
            Err(CliError::Validation(m)) if out.join("extract_oracle.csv").exists() => {
                log::warn!("{m}");
                outputs.push(out.join("extract_oracle.csv"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outputs)
}
