use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use voxmargin::audio::load_wav_at;
use voxmargin::features::{write_matrix, Stft};
use voxmargin::nn::Checkpoint;
use voxmargin::pipeline::gradcheck::{format_table, gradcheck_table, max_error};
use voxmargin::pipeline::sweep::{sweep_csv, sweep_table};
use voxmargin::pipeline::{
    embed_utterances, evaluate_ident, read_trials, run_sweep, verify, write_scores, Manifest, RunConfig, Split,
    SweepAxis, SweepData, SweepOptions, SynthCorpus, SyntheticSpec, TrainOptions, Trainer, Utterances,
};
use voxmargin::{DcfParams, LossConfig};

#[derive(Parser)]
#[command(name = "voxmargin", version, about = "Speaker embeddings with margin losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Plain single-policy test crops (no repeat-extension or reversal).
    #[arg(long)]
    no_test_augment: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus with manifest and trials.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        speakers: usize,
        /// Extra unseen speakers for the verification split.
        #[arg(long, default_value_t = 10)]
        heldout: usize,
        #[arg(long, default_value_t = 20)]
        utts: usize,
        #[arg(long, default_value_t = 4.0)]
        min_secs: f64,
        #[arg(long, default_value_t = 4.0)]
        max_secs: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Write normalized spectrograms as matrix files.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        /// WAV files; each is written to `<out>/<stem>.feat`.
        inputs: Vec<PathBuf>,
        /// Featurize every manifest entry instead, mirroring its path under `--out`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder and classification head.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Softmax checkpoint to initialize from.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Continue an interrupted run from its checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Let margin losses train without a warm start.
        #[arg(long)]
        allow_cold_start: bool,
        /// Stop after this many completed iterations.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Multi-crop embeddings for one manifest split.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        n_crops: Option<usize>,
        /// Embedding store path; ids go to `<out>.ids`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine-score a trial list against an embedding store.
    ScoreTrials {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Score file (`<enroll> <test> <score>` lines).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-1/Top-5 identification over a manifest split.
    EvaluateIdent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Precomputed embeddings; extracted on the fly when absent.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Finite-difference check of a loss head on random instances.
    Gradcheck {
        #[arg(long, default_value = "softmax")]
        loss: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate one cell per axis value.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trials: Option<PathBuf>,
        /// dim, loss, dropout or augment.
        #[arg(long)]
        axis: String,
        /// Comma-separated values (not used by the augment axis).
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Run cells on separate threads.
        #[arg(long)]
        parallel: bool,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => bail!(voxmargin::Error::InvalidArgument(format!("unknown split {other:?}"))),
    })
}

/// Loads the run configuration: `--config`, else `config.toml` beside the
/// checkpoint, else the desk preset.
fn load_config(common: &Common, checkpoint: Option<&Path>) -> Result<RunConfig> {
    let beside = checkpoint.and_then(|c| c.parent()).map(|d| d.join("config.toml"));
    let mut cfg = match (&common.config, beside) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.exists() => RunConfig::load(&p)?,
        _ => RunConfig::desk()?,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.no_test_augment {
        cfg.eval.augment = false;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            out,
            seed,
            speakers,
            heldout,
            utts,
            min_secs,
            max_secs,
            noise,
        } => {
            let spec = SyntheticSpec {
                n_speakers: speakers,
                heldout_speakers: heldout,
                utts_per_speaker: utts,
                min_secs,
                max_secs,
                noise,
                ..Default::default()
            };
            create_dir(&out)?;
            let SynthCorpus { manifest, trials, .. } = voxmargin::pipeline::synth_data(&spec, &out, seed)?;
            println!(
                "wrote {} utterances ({} classes) and {} trials to {}",
                manifest.len(),
                manifest.classes().len(),
                trials.len(),
                out.display()
            );
        }
        Command::ExtractFeatures {
            common,
            inputs,
            manifest,
            out,
        } => {
            let cfg = load_config(&common, None)?;
            let stft = Stft::new(cfg.features)?;
            create_dir(&out)?;
            let mut jobs: Vec<(PathBuf, PathBuf)> = Vec::new();
            if let Some(m) = manifest {
                let m = Manifest::read(&m)?;
                for r in m.records() {
                    jobs.push((m.resolve(r), out.join(format!("{}.feat", r.path))));
                }
            }
            for p in inputs {
                let stem = p.file_stem().context("input has no file name")?.to_owned();
                jobs.push((p, out.join(stem).with_extension("feat")));
            }
            if jobs.is_empty() {
                bail!(voxmargin::Error::InvalidArgument("no inputs given".into()));
            }
            for (src, dst) in &jobs {
                let w = load_wav_at(src, cfg.features.sample_rate)?;
                let s = stft.normalized(&w)?;
                if let Some(d) = dst.parent() {
                    create_dir(d)?;
                }
                write_matrix(dst, s.frames(), s.bins(), s.values())?;
            }
            println!("wrote {} feature files", jobs.len());
        }
        Command::Train {
            common,
            manifest,
            out,
            warm_start,
            resume,
            allow_cold_start,
            stop_at,
        } => {
            let mut cfg = load_config(&common, None)?;
            cfg.warm_start.allow_cold_start |= allow_cold_start;
            let m = Manifest::read(&manifest)?;
            let rate = cfg.features.sample_rate;
            let train = Utterances::load(&m, Split::Train, rate)?;
            let val = Utterances::load(&m, Split::Val, rate)?;
            let opts = TrainOptions {
                warm_start: warm_start.map(Checkpoint::load).transpose()?,
                resume: resume.map(Checkpoint::load).transpose()?,
                stop_at,
            };
            create_dir(&out)?;
            cfg.save(out.join("config.toml"))?;
            let ckpt_path = out.join("checkpoint.ckpt");
            let log_path = out.join("train_log.csv");
            let mut log = String::from("step,iteration,lr,mean_loss,val_top1\n");
            let trainer = Trainer::new(&cfg, &train, Some(&val), m.classes().len())?;
            let outcome = trainer.run(&opts, |s, ck| {
                let top1 = s.val_top1.map_or(String::new(), |v| format!("{v:.6}"));
                println!(
                    "step {:>3} iter {:>7} lr {:.6} loss {:.6} val_top1 {}",
                    s.step, s.iteration, s.lr, s.mean_loss, top1
                );
                log.push_str(&format!("{},{},{},{:.6},{}\n", s.step, s.iteration, s.lr, s.mean_loss, top1));
                ck.save(&ckpt_path)
            })?;
            outcome.checkpoint.save(&ckpt_path)?;
            fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
            println!(
                "checkpoint {} at iteration {}",
                ckpt_path.display(),
                outcome.checkpoint.header.iteration
            );
        }
        Command::Embed {
            common,
            checkpoint,
            manifest,
            split,
            n_crops,
            out,
        } => {
            let cfg = load_config(&common, Some(&checkpoint))?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let m = Manifest::read(&manifest)?;
            let utts = Utterances::load(&m, parse_split(&split)?, cfg.features.sample_rate)?;
            let stft = Stft::new(cfg.features)?;
            let n = n_crops.unwrap_or(cfg.eval.n_crops);
            let store = embed_utterances(&ckpt.encoder()?, &ckpt.params, &stft, &utts, n, &cfg.test_policy(), cfg.seed)?;
            if let Some(d) = out.parent() {
                create_dir(d)?;
            }
            store.save(&out)?;
            println!("wrote {} embeddings of dimension {} to {}", store.len(), store.dim(), out.display());
        }
        Command::ScoreTrials { store, trials, out } => {
            let store = voxmargin::pipeline::EmbeddingStore::load(&store)?;
            let trials = read_trials(&trials)?;
            let (scores, report) = verify(&store, &trials, &DcfParams::default())?;
            if let Some(p) = out {
                write_scores(&p, &trials, &scores)?;
            }
            println!("trials_target={}", report.n_target);
            println!("trials_nontarget={}", report.n_nontarget);
            println!("eer={:.6}", report.eer);
            println!("eer_threshold={:.6}", report.eer_threshold);
            println!("min_dcf={:.6}", report.min_dcf);
            println!("min_dcf_threshold={:.6}", report.dcf_threshold);
        }
        Command::EvaluateIdent {
            common,
            checkpoint,
            manifest,
            store,
            split,
        } => {
            let cfg = load_config(&common, Some(&checkpoint))?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let m = Manifest::read(&manifest)?;
            let utts = Utterances::load(&m, parse_split(&split)?, cfg.features.sample_rate)?;
            let labels = utts.known_labels()?;
            let store = match store {
                Some(p) => voxmargin::pipeline::EmbeddingStore::load(&p)?,
                None => {
                    let stft = Stft::new(cfg.features)?;
                    embed_utterances(&ckpt.encoder()?, &ckpt.params, &stft, &utts, cfg.eval.n_crops, &cfg.test_policy(), cfg.seed)?
                }
            };
            let r = evaluate_ident(&ckpt.header.loss, &ckpt.head, &store, &utts.ids, &labels)?;
            println!("utterances={}", r.n);
            println!("top1={:.6}", r.top1);
            if let Some(t5) = r.top5 {
                println!("top5={t5:.6}");
            }
        }
        Command::Gradcheck { loss, trials, seed } => {
            let loss = LossConfig::from_name(&loss)?;
            let rows = gradcheck_table(&loss, trials, seed)?;
            print!("{}", format_table(&loss, &rows));
            let bound = if loss == LossConfig::Softmax { 1e-6 } else { 1e-4 };
            if max_error(&rows) > bound {
                bail!(GradcheckFailed(format!("gradient error {:.3e} exceeds {bound:e}", max_error(&rows))));
            }
        }
        Command::Sweep {
            common,
            manifest,
            trials,
            axis,
            values,
            out,
            parallel,
        } => {
            let cfg = load_config(&common, None)?;
            let axis = SweepAxis::parse(&axis, values.as_deref())?;
            let m = Manifest::read(&manifest)?;
            let rate = cfg.features.sample_rate;
            let train = Utterances::load(&m, Split::Train, rate)?;
            let val = Utterances::load(&m, Split::Val, rate)?;
            let test = Utterances::load(&m, Split::Test, rate)?;
            let trials = trials.map(read_trials).transpose()?.unwrap_or_default();
            let data = SweepData {
                train: &train,
                val: &val,
                test: Some(&test),
                trials: &trials,
                classes: m.classes().len(),
            };
            create_dir(&out)?;
            cfg.save(out.join("config.toml"))?;
            let opts = SweepOptions {
                out_dir: Some(out.clone()),
                parallel,
            };
            let rows = run_sweep(&cfg, &axis, &data, &opts)?;
            let csv_path = out.join("sweep.csv");
            fs::write(&csv_path, sweep_csv(&axis, &rows)).with_context(|| format!("writing {}", csv_path.display()))?;
            print!("{}", sweep_table(&axis, &rows));
        }
    }
    Ok(())
}

#[derive(Debug)]
struct GradcheckFailed(String);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

/// `error kind=<tag> message="<text>"` on stderr.
fn report(err: &anyhow::Error) {
    let kind = err
        .chain()
        .find_map(|e| {
            e.downcast_ref::<voxmargin::Error>()
                .map(|e| e.kind())
                .or_else(|| e.downcast_ref::<GradcheckFailed>().map(|_| "gradcheck-failed"))
        })
        .unwrap_or("internal");
    let message = format!("{err:#}").replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    let _ = writeln!(std::io::stderr(), "error kind={kind} message=\"{message}\"");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(
                std::io::stderr(),
                "error kind=usage message=\"{}\"",
                first.replace('"', "\\\"")
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
