use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dser_cli::commands::{self, MaeModels};
use dser_cli::io::{create_out_dir, existing, record_run};
use dser_cli::{CliError, CliResult, RunConfig};
use dser_core::gradcheck::DEFAULT_INSTANCES;
use dser_core::stages::LossKind;

/// Dynamic speech emotion recognition: synthetic corpus, three training
/// stages, evaluation and preference annotation.
#[derive(Debug, Parser)]
#[command(name = "dser", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory. Created if missing; manifest.json inside records
    /// every run.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Dirichlet,
    Ce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Dirichlet => LossKind::DirichletMle,
            LossArg::Ce => LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic corpus (WAVs plus JSONL datasets).
    SynthGen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a whole-clip classifier on single-emotion clips.
    Stage1Train {
        #[command(flatten)]
        common: Common,
        /// Labeled clips (JSONL with id, wav, label).
        #[arg(long)]
        data: PathBuf,
        /// Output head and loss.
        #[arg(long, value_enum, default_value = "dirichlet")]
        loss: LossArg,
    },
    /// Held-out accuracy report for one or more whole-clip models.
    Stage1Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Labeled clips (JSONL).
        #[arg(long)]
        data: PathBuf,
    },
    /// Sliding-window predictions of a whole-clip model, used as sequence
    /// targets.
    SeqGen {
        #[command(flatten)]
        common: Common,
        /// Stage-1 checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Tracks (JSONL with id, wav and optional gt).
        #[arg(long)]
        tracks: PathBuf,
        /// Window length in seconds [default: 1.4 or the `[seq]` value].
        #[arg(long)]
        window: Option<f64>,
        /// Hop between windows in seconds; must not exceed the window
        /// [default: 0.1 or the `[seq]` value].
        #[arg(long)]
        stride: Option<f64>,
        /// Output file name inside --out.
        #[arg(long, default_value = "seq.jsonl")]
        name: String,
    },
    /// Fine-tune a stage-1 model into a per-frame sequence model.
    Stage2Train {
        #[command(flatten)]
        common: Common,
        /// Stage-1 checkpoint to start from.
        #[arg(long)]
        init: PathBuf,
        /// Sequence targets from seq-gen.
        #[arg(long)]
        data: PathBuf,
    },
    /// Candidate timelines per track, either oracle-judged pairs or an
    /// annotation manifest.
    PairsGen {
        #[command(flatten)]
        common: Common,
        /// Stage-1 checkpoint that produces the candidates.
        #[arg(long)]
        model: PathBuf,
        /// Tracks (JSONL); --oracle needs gt on each.
        #[arg(long)]
        tracks: PathBuf,
        /// Judge each pair against ground truth and write pairs.jsonl.
        /// Without it, write pairs_manifest.jsonl for annotate-serve.
        #[arg(long)]
        oracle: bool,
        /// Pairs drawn per track from its candidates [default: 5 or the
        /// config value].
        #[arg(long)]
        pairs_per_track: Option<usize>,
    },
    /// Preference fine-tuning of a stage-2 model.
    Stage3Train {
        #[command(flatten)]
        common: Common,
        /// Stage-2 checkpoint; also the frozen reference.
        #[arg(long)]
        init: PathBuf,
        /// Judged pairs (JSONL).
        #[arg(long)]
        pairs: PathBuf,
        /// Tracks with gt for checkpoint selection.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Preference temperature [default: 0.5 or the config value].
        #[arg(long)]
        beta: Option<f64>,
    },
    /// MAE table: sliding window, stage 2 and stage 3 for each head.
    EvalMae {
        #[command(flatten)]
        common: Common,
        /// Tracks with dense ground truth.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        stage1_dirichlet: Option<PathBuf>,
        #[arg(long)]
        stage1_ce: Option<PathBuf>,
        #[arg(long)]
        stage2_dirichlet: Option<PathBuf>,
        #[arg(long)]
        stage2_ce: Option<PathBuf>,
        #[arg(long)]
        stage3_dirichlet: Option<PathBuf>,
        /// Sliding window length in seconds [default: 1.4 or the `[eval]` value].
        #[arg(long)]
        window: Option<f64>,
        /// Sliding window hop in seconds [default: 1.0 or the `[eval]` value].
        #[arg(long)]
        stride: Option<f64>,
    },
    /// Stage-3 MAE as a function of beta.
    BetaSweep {
        #[command(flatten)]
        common: Common,
        /// Stage-2 checkpoint.
        #[arg(long)]
        init: PathBuf,
        /// Judged pairs (JSONL).
        #[arg(long)]
        pairs: PathBuf,
        /// Tracks with gt for checkpoint selection.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Tracks with gt to score each beta on.
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated beta values [default: 0.01,0.1,0.5,10 or the
        /// config value].
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Recover known emotion sequences from toy-animator output.
    ExtractOracle {
        /// TOML run configuration.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Output directory for extract_oracle.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Tracks with gt.
        #[arg(long)]
        tracks: PathBuf,
    },
    /// Finite-difference checks of every analytic gradient.
    GradCheck {
        /// Random instances per suite.
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: u64,
        /// Output directory for grad_check.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Serve the annotation API and UI.
    AnnotateServe {
        /// Pairs manifest from pairs-gen.
        #[arg(long)]
        manifest: PathBuf,
        /// Judgment log (JSONL); created if missing.
        #[arg(long)]
        log: PathBuf,
        /// Built UI bundle served at /.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = dser_annotate::DEFAULT_PORT)]
        port: u16,
    },
    /// Turn a judgment log into judged pairs for stage3-train.
    AnnotateExport {
        #[command(flatten)]
        common: Common,
        /// Pairs manifest the log refers to.
        #[arg(long)]
        manifest: PathBuf,
        /// Judgment log.
        #[arg(long)]
        log: PathBuf,
    },
    /// Every step from synth-gen to extract-oracle in one output directory.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
}

struct Prepared {
    cfg: RunConfig,
    out: PathBuf,
}

fn prepare(common: &Common) -> CliResult<Prepared> {
    let config = common.config.as_deref().map(existing).transpose()?;
    let cfg = RunConfig::load(config.as_deref())?;
    let out = create_out_dir(&common.out)?;
    Ok(Prepared { cfg, out })
}

fn finish(p: &Prepared, name: &str, outputs: CliResult<Vec<PathBuf>>) -> CliResult<()> {
    record_run(&p.out, name, &p.cfg, &outputs?)
}

fn opt(path: &Option<PathBuf>) -> CliResult<Option<PathBuf>> {
    path.as_deref().map(existing).transpose()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthGen { common } => {
            let p = prepare(&common)?;
            finish(&p, "synth-gen", commands::synth_gen(&p.cfg, &p.out))
        }
        Command::Stage1Train { common, data, loss } => {
            let data = existing(&data)?;
            let p = prepare(&common)?;
            let name = format!("stage1-train-{}", commands::head_tag(LossKind::from(loss).head()));
            finish(&p, &name, commands::stage1_train(&p.cfg, &data, loss.into(), &p.out))
        }
        Command::Stage1Eval { common, models, data } => {
            let models = models.iter().map(|m| existing(m)).collect::<CliResult<Vec<_>>>()?;
            let data = existing(&data)?;
            let p = prepare(&common)?;
            finish(&p, "stage1-eval", commands::stage1_eval(&models, &data, &p.out))
        }
        Command::SeqGen {
            common,
            model,
            tracks,
            window,
            stride,
            name,
        } => {
            let cfg = RunConfig::load(common.config.as_deref().map(existing).transpose()?.as_deref())?;
            let spec = commands::window_spec(&cfg, window, stride)?;
            let model = existing(&model)?;
            let tracks = existing(&tracks)?;
            if Path::new(&name).components().count() != 1 {
                return Err(CliError::Validation(format!(
                    "--name {name:?} must be a plain file name"
                )));
            }
            let p = prepare(&common)?;
            let output = p.out.join(&name);
            finish(&p, "seq-gen", commands::seq_gen(&model, &tracks, spec, &output))
        }
        Command::Stage2Train { common, init, data } => {
            let init = existing(&init)?;
            let data = existing(&data)?;
            let p = prepare(&common)?;
            finish(&p, "stage2-train", commands::stage2_train(&p.cfg, &init, &data, &p.out))
        }
        Command::PairsGen {
            common,
            model,
            tracks,
            oracle,
            pairs_per_track,
        } => {
            let model = existing(&model)?;
            let tracks = existing(&tracks)?;
            let mut p = prepare(&common)?;
            if let Some(n) = pairs_per_track {
                p.cfg.pairs.pairs_per_track = n;
            }
            finish(
                &p,
                "pairs-gen",
                commands::pairs_gen(&p.cfg, &model, &tracks, oracle, &p.out),
            )
        }
        Command::Stage3Train {
            common,
            init,
            pairs,
            val,
            beta,
        } => {
            let init = existing(&init)?;
            let pairs = existing(&pairs)?;
            let val = opt(&val)?;
            let mut p = prepare(&common)?;
            if let Some(b) = beta {
                p.cfg.stage3.beta = b;
            }
            let beta = p.cfg.stage3.beta;
            finish(
                &p,
                "stage3-train",
                commands::stage3_train(&p.cfg, &init, &pairs, val.as_deref(), beta, &p.out),
            )
        }
        Command::EvalMae {
            common,
            gt,
            stage1_dirichlet,
            stage1_ce,
            stage2_dirichlet,
            stage2_ce,
            stage3_dirichlet,
            window,
            stride,
        } => {
            let models = MaeModels {
                stage1_dirichlet: opt(&stage1_dirichlet)?,
                stage1_ce: opt(&stage1_ce)?,
                stage2_dirichlet: opt(&stage2_dirichlet)?,
                stage2_ce: opt(&stage2_ce)?,
                stage3_dirichlet: opt(&stage3_dirichlet)?,
            };
            let gt = existing(&gt)?;
            let p = prepare(&common)?;
            let spec = commands::eval_spec(&p.cfg, window, stride)?;
            finish(&p, "eval-mae", commands::eval_mae(&models, &gt, spec, &p.out))
        }
        Command::BetaSweep {
            common,
            init,
            pairs,
            val,
            gt,
            betas,
        } => {
            let init = existing(&init)?;
            let pairs = existing(&pairs)?;
            let val = opt(&val)?;
            let gt = existing(&gt)?;
            let mut p = prepare(&common)?;
            if let Some(b) = betas {
                p.cfg.stage3.sweep = b;
            }
            let betas = p.cfg.stage3.sweep.clone();
            finish(
                &p,
                "beta-sweep",
                commands::beta_sweep(&p.cfg, &init, &pairs, val.as_deref(), &gt, &betas, &p.out),
            )
        }
        Command::ExtractOracle { config, out, tracks } => {
            let tracks = existing(&tracks)?;
            let cfg = RunConfig::load(config.as_deref().map(existing).transpose()?.as_deref())?;
            match out {
                Some(out) => {
                    let p = Prepared {
                        cfg,
                        out: create_out_dir(&out)?,
                    };
                    finish(
                        &p,
                        "extract-oracle",
                        commands::extract_oracle(&p.cfg, &tracks, Some(&p.out)),
                    )
                }
                None => commands::extract_oracle(&cfg, &tracks, None).map(|_| ()),
            }
        }
        Command::GradCheck { instances, out } => {
            if instances == 0 {
                return Err(CliError::Validation("--instances must be positive".into()));
            }
            match out {
                Some(out) => {
                    let p = Prepared {
                        cfg: RunConfig::load(None)?,
                        out: create_out_dir(&out)?,
                    };
                    finish(&p, "grad-check", commands::grad_check(instances, Some(&p.out)))
                }
                None => commands::grad_check(instances, None).map(|_| ()),
            }
        }
        Command::AnnotateServe {
            manifest,
            log,
            ui_dir,
            host,
            port,
        } => {
            let cfg = dser_annotate::ServiceConfig {
                manifest: existing(&manifest)?,
                log,
                ui_dir: opt(&ui_dir)?,
                host,
                port,
            };
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(dser_annotate::serve(cfg))?;
            Ok(())
        }
        Command::AnnotateExport { common, manifest, log } => {
            let manifest = existing(&manifest)?;
            let log = existing(&log)?;
            let p = prepare(&common)?;
            let output = p.out.join("pairs.jsonl");
            finish(
                &p,
                "annotate-export",
                commands::annotate_export(&log, &manifest, &output),
            )
        }
        Command::RunAll { common } => {
            let p = prepare(&common)?;
            finish(&p, "run-all", commands::run_all(&p.cfg, &p.out))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
