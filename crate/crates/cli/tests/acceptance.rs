//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! Runs the full benchmark for five root seeds through the `dser` binary,
//! so expect it to take a while. Set `DSER_ACCEPTANCE_DIR` to keep the
//! outputs.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use dser_annotate::{Manifest, ManifestPair};
use dser_cli::io::{load_audio, read_records, write_records, TrackRecord};
use dser_core::audio::{FeatureConfig, FeatureExtractor};
use dser_core::dirichlet::{dir_expectation, dir_log_density, dir_sample, fit_mle, DirichletSampleSet};
use dser_core::model::{forward_frames, load_model};
use dser_core::stages::{align_to_features, dpo_loss};
use dser_core::{AlphaVector, EmotionVector, PreferencePair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SWEEP_SEEDS: usize = 3;

type Check = Result<String, String>;

fn dser() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dser"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Result<Output, String> {
    let out = cmd.output().map_err(|e| format!("spawn: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "{:?} exited with {:?}: {}",
            cmd.get_args().collect::<Vec<_>>(),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out)
}

fn csv_rows(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    row.get(key)
        .ok_or_else(|| format!("missing column {key}"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------------ 1, 2

fn gradient_integrity() -> Check {
    let start = Instant::now();
    let out = run(dser().arg("grad-check"))?;
    let secs = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let suites = text.lines().filter(|l| l.starts_with("ok\t")).count();
    ensure(secs < 60.0 && suites >= 6, format!("{suites} suites ok in {secs:.1}s"))
}

fn dirichlet_machinery() -> Check {
    let start = Instant::now();
    let truth = [3.0, 1.0, 0.5, 2.0, 4.0, 1.5];
    let alpha = AlphaVector::new(truth).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples = (0..5000).map(|_| dir_sample(&alpha, &mut rng)).collect();
    let fitted = fit_mle(&DirichletSampleSet::new(samples).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let worst_rel = fitted
        .values()
        .iter()
        .zip(truth)
        .map(|(f, t)| (f - t).abs() / t)
        .fold(0.0, f64::max);

    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        let a = AlphaVector::new(std::array::from_fn(|_| rng.random_range(1e-3..50.0))).map_err(|e| e.to_string())?;
        let s: f64 = dir_expectation(&a).values().iter().sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
    }

    let flat = AlphaVector::new([1.0; 6]).map_err(|e| e.to_string())?;
    let x = EmotionVector::new([0.1, 0.2, 0.3, 0.15, 0.05, 0.2]).map_err(|e| e.to_string())?;
    let flat_err = (dir_log_density(&x, &flat) - 120f64.ln()).abs();
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst_rel <= 0.10 && worst_sum <= 1e-9 && flat_err <= 1e-9 && secs < 30.0,
        format!(
            "fit worst relative error {worst_rel:.4}, expectation sum error {worst_sum:.1e}, flat density error {flat_err:.1e}, {secs:.1}s"
        ),
    )
}

// ------------------------------------------------------------------ 3

fn stage1_learnability(dir: &Path) -> Check {
    let start = Instant::now();
    let out = dir.join("stage1");
    let o = out.to_str().unwrap();
    run(dser().args(["synth-gen", "--out", o]))?;
    for loss in ["dirichlet", "ce"] {
        run(dser()
            .args(["stage1-train", "--out", o, "--loss", loss])
            .arg("--data")
            .arg(out.join("stage1_train.jsonl")))?;
    }
    run(dser()
        .args(["stage1-eval", "--out", o])
        .arg("--model")
        .arg(out.join("stage1_dirichlet.json"))
        .arg("--model")
        .arg(out.join("stage1_ce.json"))
        .arg("--data")
        .arg(out.join("stage1_test.jsonl")))?;
    let secs = start.elapsed().as_secs_f64();
    let rows = csv_rows(&out.join("stage1_eval.csv"))?;
    let mut ok = rows.len() == 2 && secs < 600.0;
    let mut parts = Vec::new();
    for r in &rows {
        let acc = num(r, "accuracy")?;
        ok &= acc >= 0.95;
        parts.push(format!("{} {acc:.3}", r["loss"]));
    }
    ensure(
        ok,
        format!("{}, {secs:.0}s including corpus synthesis", parts.join(", ")),
    )
}

// ------------------------------------------------------------------ 4, 5, 6

struct SeedRun {
    seed: u64,
    dir: PathBuf,
    sliding: f64,
    stage2: f64,
    stage3: f64,
    sweep: Vec<(f64, f64)>,
}

fn run_all(dir: &Path, seed: u64, sweep: bool) -> Result<SeedRun, String> {
    let out = dir.join(format!("seed{seed}"));
    std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let config = out.join("run.toml");
    std::fs::write(&config, format!("[run]\nbeta_sweep = {sweep}\n")).map_err(|e| e.to_string())?;
    let start = Instant::now();
    run(dser()
        .env("DSER_SEED", seed.to_string())
        .args(["run-all", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out))?;
    eprintln!("  seed {seed}: run-all took {:.0}s", start.elapsed().as_secs_f64());
    let rows = csv_rows(&out.join("eval_mae.csv"))?;
    let cell = |approach: &str| -> Result<f64, String> {
        let r = rows
            .iter()
            .find(|r| r["approach"] == approach && r["loss"] == "dirichlet")
            .ok_or_else(|| format!("no {approach} row"))?;
        num(r, "mae")
    };
    let sweep = if sweep {
        csv_rows(&out.join("beta_sweep.csv"))?
            .iter()
            .map(|r| Ok((num(r, "beta")?, num(r, "mae")?)))
            .collect::<Result<_, String>>()?
    } else {
        Vec::new()
    };
    Ok(SeedRun {
        seed,
        sliding: cell("sliding_window")?,
        stage2: cell("stage2")?,
        stage3: cell("stage3")?,
        sweep,
        dir: out,
    })
}

fn table3_seq2seq(runs: &[SeedRun]) -> Check {
    let n = runs.len() as f64;
    let sliding = runs.iter().map(|r| r.sliding).sum::<f64>() / n;
    let stage2 = runs.iter().map(|r| r.stage2).sum::<f64>() / n;
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{}: {:.4}/{:.4}", r.seed, r.stage2, r.sliding))
        .collect();
    ensure(
        runs.len() == SEEDS.len() && stage2 <= sliding,
        format!(
            "mean stage-2 {stage2:.4} vs sliding window {sliding:.4} (per seed stage-2/sliding {})",
            per_seed.join(", ")
        ),
    )
}

fn table3_dpo(runs: &[SeedRun]) -> Check {
    let wins = runs.iter().filter(|r| r.stage3 < r.stage2).count();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{}: {:.4}/{:.4}", r.seed, r.stage3, r.stage2))
        .collect();
    ensure(
        runs.len() == SEEDS.len() && wins >= 4,
        format!(
            "stage 3 better in {wins}/{} seeds (stage-3/stage-2 {})",
            runs.len(),
            per_seed.join(", ")
        ),
    )
}

fn table4_pattern(runs: &[SeedRun]) -> Check {
    let swept: Vec<&SeedRun> = runs.iter().filter(|r| !r.sweep.is_empty()).collect();
    if swept.len() < SWEEP_SEEDS {
        return Err(format!("only {} swept seeds", swept.len()));
    }
    let betas: Vec<f64> = swept[0].sweep.iter().map(|(b, _)| *b).collect();
    let means: Vec<(f64, f64)> = betas
        .iter()
        .enumerate()
        .map(|(i, &b)| (b, swept.iter().map(|r| r.sweep[i].1).sum::<f64>() / swept.len() as f64))
        .collect();
    let at = |b: f64| means.iter().find(|(x, _)| *x == b).map(|(_, m)| *m);
    let (Some(low), true) = (at(0.01), betas == [0.01, 0.1, 0.5, 10.0]) else {
        return Err(format!("unexpected sweep grid {betas:?}"));
    };
    let worst = means.iter().filter(|(b, _)| *b != 0.01).all(|(_, m)| low > *m);
    let best = means
        .iter()
        .copied()
        .fold((f64::NAN, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let table: Vec<String> = means.iter().map(|(b, m)| format!("{b}: {m:.4}")).collect();
    ensure(
        worst && (best.0 == 0.1 || best.0 == 0.5),
        format!("3-seed means {}; best beta {}", table.join(", "), best.0),
    )
}

// ------------------------------------------------------------------ 7

fn oracle_extraction(seed_run: &SeedRun) -> Check {
    let start = Instant::now();
    let out = run(dser()
        .arg("extract-oracle")
        .arg("--tracks")
        .arg(seed_run.dir.join("eval_gt.jsonl")));
    let secs = start.elapsed().as_secs_f64();
    let (ok, text) = match out {
        Ok(o) => (true, String::from_utf8_lossy(&o.stdout).trim().to_string()),
        Err(e) => (false, e),
    };
    ensure(ok && secs < 300.0, format!("{text}, {secs:.1}s"))
}

// ------------------------------------------------------------------ 8

fn dpo_identity(seed_run: &SeedRun, dir: &Path) -> Check {
    let model = load_model(seed_run.dir.join("stage2_dirichlet.json")).map_err(|e| e.to_string())?;
    let pairs: Vec<PreferencePair> = read_records(&seed_run.dir.join("pairs.jsonl")).map_err(|e| e.to_string())?;
    let extractor = FeatureExtractor::new(FeatureConfig::default());
    let mut worst = 0.0f64;
    for p in &pairs {
        let feats = extractor
            .extract(&load_audio(&p.audio_path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let w = align_to_features(&p.winner, &feats).map_err(|e| e.to_string())?;
        let l = align_to_features(&p.loser, &feats).map_err(|e| e.to_string())?;
        let (loss, _) = dpo_loss(&model, &model, &feats, &w, &l, 0.5).map_err(|e| e.to_string())?;
        worst = worst.max((loss - std::f64::consts::LN_2).abs());
    }

    let out = dir.join("zero_step");
    std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let config = out.join("zero.toml");
    std::fs::write(&config, "[stage3]\nepochs = 0\n").map_err(|e| e.to_string())?;
    run(dser()
        .arg("stage3-train")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .arg("--init")
        .arg(seed_run.dir.join("stage2_dirichlet.json"))
        .arg("--pairs")
        .arg(seed_run.dir.join("pairs.jsonl")))?;
    let tuned = load_model(out.join("stage3.json")).map_err(|e| e.to_string())?;
    let tracks: Vec<TrackRecord> = read_records(&seed_run.dir.join("eval_gt.jsonl")).map_err(|e| e.to_string())?;
    let mut identical = true;
    for t in &tracks {
        let feats = extractor
            .extract(&load_audio(&t.wav).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let a = forward_frames(&model, &feats).map_err(|e| e.to_string())?;
        let b = forward_frames(&tuned, &feats).map_err(|e| e.to_string())?;
        identical &= a == b;
    }
    ensure(
        worst <= 1e-9 && identical,
        format!(
            "max |loss - ln 2| {worst:.1e} over {} pairs; zero-step outputs identical on {} tracks: {identical}",
            pairs.len(),
            tracks.len()
        ),
    )
}

// ------------------------------------------------------------------ 9

fn tree(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(files)
}

fn determinism(first: &SeedRun, dir: &Path) -> Check {
    let again = run_all(&dir.join("rerun"), first.seed, !first.sweep.is_empty())?;
    let a = tree(&first.dir)?;
    let b = tree(&again.dir)?;
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    ensure(
        differing.is_empty() && !a.is_empty(),
        if differing.is_empty() {
            format!(
                "{} files byte-identical across two runs with DSER_SEED={}",
                a.len(),
                first.seed
            )
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

// ------------------------------------------------------------------ 10

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(manifest: &Path, log: &Path) -> Result<Self, String> {
        let port = TcpListener::bind("127.0.0.1:0")
            .and_then(|l| l.local_addr())
            .map_err(|e| e.to_string())?
            .port();
        let mut child = dser()
            .env("RUST_LOG", "info")
            .arg("annotate-serve")
            .arg("--manifest")
            .arg(manifest)
            .arg("--log")
            .arg(log)
            .args(["--port", &port.to_string()])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())?;
        let stderr = child.stderr.take().unwrap();
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                if line.contains("listening on") {
                    let _ = tx.send(());
                }
            }
        });
        if rx.recv_timeout(Duration::from_secs(30)).is_err() {
            let _ = child.kill();
            return Err("service did not start".into());
        }
        Ok(Self {
            child,
            base: format!("http://127.0.0.1:{port}"),
        })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn next(client: &reqwest::blocking::Client, base: &str) -> Result<Option<Value>, String> {
    let resp = client
        .get(format!("{base}/api/pairs/next?annotator=acceptance"))
        .send()
        .map_err(|e| e.to_string())?;
    match resp.status().as_u16() {
        204 => Ok(None),
        200 => resp.json().map(Some).map_err(|e| e.to_string()),
        s => Err(format!("next returned {s}")),
    }
}

fn post(client: &reqwest::blocking::Client, base: &str, pair_id: &str, choice: &str) -> Result<u16, String> {
    client
        .post(format!("{base}/api/judgments"))
        .json(&json!({
            "pair_id": pair_id,
            "choice": choice,
            "annotator": "acceptance",
        }))
        .send()
        .map(|r| r.status().as_u16())
        .map_err(|e| e.to_string())
}

fn annotation_backend(seed_run: &SeedRun, dir: &Path) -> Check {
    let out = dir.join("annotate");
    std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let tracks: Vec<TrackRecord> = read_records(&seed_run.dir.join("pair_tracks.jsonl")).map_err(|e| e.to_string())?;
    let oracle: Vec<PreferencePair> = read_records(&seed_run.dir.join("pairs.jsonl")).map_err(|e| e.to_string())?;
    // Three oracle pairs, each stored with the winner as candidate 0 or 1
    // at random so the export must undo the A/B shuffle.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut manifest = Vec::new();
    let mut truth = BTreeMap::new();
    for (i, p) in oracle.iter().take(3).enumerate() {
        let track = tracks
            .iter()
            .find(|t| t.wav == p.audio_path)
            .ok_or_else(|| format!("no track for {}", p.id))?;
        let cands = if rng.random::<bool>() {
            [p.winner.clone(), p.loser.clone()]
        } else {
            [p.loser.clone(), p.winner.clone()]
        };
        let pair_id = format!("pair-{i}");
        truth.insert(pair_id.clone(), (p.winner.clone(), p.loser.clone()));
        manifest.push(ManifestPair::new(
            pair_id,
            track.id.clone(),
            p.audio_path.clone(),
            cands,
            11,
        ));
    }
    Manifest::new(manifest.clone()).map_err(|e| e.to_string())?;
    let manifest_path = out.join("manifest.jsonl");
    write_records(&manifest_path, &manifest).map_err(|e| e.to_string())?;
    let log = out.join("judgments.jsonl");
    let client = reqwest::blocking::Client::new();

    // Judge the first pair for its true winner, then kill without warning.
    let server = Server::start(&manifest_path, &log)?;
    let pick = |task: &Value| -> Result<(String, &'static str), String> {
        let id = task["pair_id"].as_str().ok_or("task without pair_id")?.to_string();
        let p = manifest.iter().find(|m| m.pair_id == id).ok_or("unknown task")?;
        let winner = &truth[&id].0;
        Ok((id, if p.shown().0 == winner { "A" } else { "B" }))
    };
    let mut judged = Vec::new();
    let task = next(&client, &server.base)?.ok_or("no first task")?;
    let (id, choice) = pick(&task)?;
    let first = post(&client, &server.base, &id, choice)?;
    judged.push(id.clone());
    let before = std::fs::read(&log).map_err(|e| e.to_string())?;
    let repeat = post(&client, &server.base, &id, choice)?;
    let after = std::fs::read(&log).map_err(|e| e.to_string())?;
    let idempotent = first == 201 && repeat == 200 && before == after;
    server.kill();

    // Restart; the acknowledged judgment must survive and not be served again.
    let server = Server::start(&manifest_path, &log)?;
    let task = next(&client, &server.base)?.ok_or("no second task")?;
    let (id2, choice2) = pick(&task)?;
    let survived = std::fs::read(&log).map_err(|e| e.to_string())? == after && id2 != id;
    let second = post(&client, &server.base, &id2, choice2)?;
    judged.push(id2);
    let task = next(&client, &server.base)?.ok_or("no third task")?;
    let id3 = task["pair_id"].as_str().ok_or("task without pair_id")?.to_string();
    let skipped = post(&client, &server.base, &id3, "skip")?;
    let done = next(&client, &server.base)?.is_none();
    server.kill();

    run(dser()
        .arg("annotate-export")
        .arg("--out")
        .arg(&out)
        .arg("--manifest")
        .arg(&manifest_path)
        .arg("--log")
        .arg(&log))?;
    let exported: Vec<PreferencePair> = read_records(&out.join("pairs.jsonl")).map_err(|e| e.to_string())?;
    let correct = exported.iter().all(|p| {
        let pair_id = p.id.split('@').next().unwrap_or_default();
        truth.get(pair_id).is_some_and(|(w, l)| *w == p.winner && *l == p.loser)
    });
    ensure(
        exported.len() == 2 && correct && idempotent && survived && second == 201 && skipped == 201 && done,
        format!(
            "exported {} pairs, winners correct: {correct}, idempotent repeat: {idempotent}, judgment survived kill: {survived}",
            exported.len()
        ),
    )
}

// ------------------------------------------------------------------

fn report(n: usize, title: &str, result: &Check) -> bool {
    match result {
        Ok(detail) => println!("PASS criterion {n} ({title}): {detail}"),
        Err(detail) => println!("FAIL criterion {n} ({title}): {detail}"),
    }
    result.is_ok()
}

fn main() {
    // `cargo test -- --list` and filters from other harnesses pass through here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let keep = std::env::var_os("DSER_ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&dir).expect("acceptance directory");

    let mut results: Vec<(usize, &str, Check)> = vec![
        (1, "gradient integrity", gradient_integrity()),
        (2, "Dirichlet machinery", dirichlet_machinery()),
        (3, "stage-1 learnability", stage1_learnability(&dir)),
    ];

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (i, &seed) in SEEDS.iter().enumerate() {
        match run_all(&dir.join("runs"), seed, i < SWEEP_SEEDS) {
            Ok(r) => runs.push(r),
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let pipeline_err = |what: &str| -> Check { Err(format!("{what}: {}", failures.join("; "))) };
    results.push((
        4,
        "seq2seq beats sliding window",
        if failures.is_empty() {
            table3_seq2seq(&runs)
        } else {
            pipeline_err("pipeline failed")
        },
    ));
    results.push((
        5,
        "preference tuning improves stage 2",
        if failures.is_empty() {
            table3_dpo(&runs)
        } else {
            pipeline_err("pipeline failed")
        },
    ));
    results.push((
        6,
        "beta sweep pattern",
        if failures.is_empty() {
            table4_pattern(&runs)
        } else {
            pipeline_err("pipeline failed")
        },
    ));
    match runs.first() {
        Some(first) => {
            results.push((7, "oracle extraction", oracle_extraction(first)));
            results.push((8, "DPO identity", dpo_identity(first, &dir)));
            results.push((9, "determinism", determinism(first, &dir)));
            results.push((10, "annotation backend", annotation_backend(first, &dir)));
        }
        None => {
            for (n, title) in [
                (7, "oracle extraction"),
                (8, "DPO identity"),
                (9, "determinism"),
                (10, "annotation backend"),
            ] {
                results.push((n, title, pipeline_err("no pipeline run")));
            }
        }
    }

    results.sort_by_key(|(n, _, _)| *n);
    let passed = results.iter().filter(|(n, title, r)| report(*n, title, r)).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
