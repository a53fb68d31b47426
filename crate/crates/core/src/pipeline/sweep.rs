//! One-axis experiment grids: train, embed and score every cell, then emit a
//! results table and CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::embed::embed_utterances;
use super::ident::{evaluate_ident, IdentReport};
use super::manifest::Utterances;
use super::score::{verify, write_scores, VerificationReport};
use super::train::{TrainOptions, Trainer};
use crate::error::{Error, Result};
use crate::eval::{DcfParams, TrialPair};
use crate::features::Stft;
use crate::losses::LossConfig;
use crate::nn::Checkpoint;

/// The four train/test augmentation combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentStage {
    None,
    Testing,
    Training,
    Both,
}

impl AugmentStage {
    pub const ALL: [AugmentStage; 4] = [Self::None, Self::Testing, Self::Training, Self::Both];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "None",
            Self::Testing => "Testing",
            Self::Training => "Training",
            Self::Both => "Both",
        }
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.augment.enabled = matches!(self, Self::Training | Self::Both);
        c.eval.augment = matches!(self, Self::Testing | Self::Both);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Dim(Vec<usize>),
    Loss(Vec<LossConfig>),
    Dropout(Vec<f64>),
    Augment,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dim(_) => "dim",
            Self::Loss(_) => "loss",
            Self::Dropout(_) => "dropout",
            Self::Augment => "augment",
        }
    }

    /// Axis from a name and a comma-separated value list (ignored for `augment`).
    pub fn parse(name: &str, values: Option<&str>) -> Result<Self> {
        let list = || -> Result<Vec<&str>> {
            let v = values.ok_or_else(|| Error::InvalidArgument(format!("axis {name} needs values")))?;
            Ok(v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
        };
        fn num<T: FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::InvalidArgument(format!("bad axis value {s:?}")))
        }
        let axis = match name {
            "dim" => Self::Dim(list()?.into_iter().map(num).collect::<Result<_>>()?),
            "dropout" => Self::Dropout(list()?.into_iter().map(num).collect::<Result<_>>()?),
            "loss" => Self::Loss(
                list()?
                    .into_iter()
                    .map(LossConfig::from_name)
                    .collect::<Result<_>>()?,
            ),
            "augment" => Self::Augment,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown sweep axis {other:?} (dim, loss, dropout, augment)"
                )))
            }
        };
        if axis.len() == 0 {
            return Err(Error::InvalidArgument("sweep axis has no values".into()));
        }
        Ok(axis)
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Dim(v) => v.len(),
            Self::Loss(v) => v.len(),
            Self::Dropout(v) => v.len(),
            Self::Augment => 4,
        }
    }

    /// `(label, config)` per cell.
    fn cells(&self, template: &RunConfig) -> Vec<(String, Result<RunConfig>)> {
        match self {
            Self::Dim(dims) => dims
                .iter()
                .map(|&d| (d.to_string(), template.with_embedding_dim(d)))
                .collect(),
            Self::Dropout(ps) => ps
                .iter()
                .map(|&p| (p.to_string(), template.with_dropout(p)))
                .collect(),
            Self::Loss(losses) => losses
                .iter()
                .map(|l| {
                    let mut c = template.clone();
                    c.loss = *l;
                    (l.name().to_string(), Ok(c))
                })
                .collect(),
            Self::Augment => AugmentStage::ALL
                .iter()
                .map(|s| (s.name().to_string(), Ok(s.apply(template))))
                .collect(),
        }
    }
}

/// Utterances and trials shared by every cell.
#[derive(Debug, Clone, Copy)]
pub struct SweepData<'a> {
    pub train: &'a Utterances,
    /// Identification set (utterances of training speakers).
    pub val: &'a Utterances,
    /// Verification set; `trials` refer to its ids.
    pub test: Option<&'a Utterances>,
    pub trials: &'a [TrialPair],
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub ident: IdentReport,
    pub verification: Option<VerificationReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub result: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Per-cell output directories are created under this one.
    pub out_dir: Option<PathBuf>,
    pub parallel: bool,
}

/// Identification on `data.val` and, when trials exist, verification on `data.test`.
pub fn evaluate_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint, data: &SweepData, out_dir: Option<&Path>) -> Result<CellMetrics> {
    let encoder = ckpt.encoder()?;
    let stft = Stft::new(cfg.features)?;
    let policy = cfg.test_policy();
    let val = embed_utterances(&encoder, &ckpt.params, &stft, data.val, cfg.eval.n_crops, &policy, cfg.seed)?;
    let ident = evaluate_ident(&ckpt.header.loss, &ckpt.head, &val, &data.val.ids, &data.val.known_labels()?)?;
    let verification = match data.test {
        Some(test) if !data.trials.is_empty() => {
            let store = embed_utterances(&encoder, &ckpt.params, &stft, test, cfg.eval.n_crops, &policy, cfg.seed)?;
            let (scores, report) = verify(&store, data.trials, &DcfParams::default())?;
            if let Some(dir) = out_dir {
                store.save(dir.join("test_embeddings.bin"))?;
                write_scores(dir.join("scores.txt"), data.trials, &scores)?;
            }
            Some(report)
        }
        _ => None,
    };
    if let Some(dir) = out_dir {
        val.save(dir.join("val_embeddings.bin"))?;
    }
    Ok(CellMetrics { ident, verification })
}

fn train_cell(cfg: &RunConfig, data: &SweepData, warm: Option<&Checkpoint>, dir: Option<&Path>) -> Result<Checkpoint> {
    let opts = TrainOptions {
        warm_start: warm.cloned(),
        ..Default::default()
    };
    let trainer = Trainer::new(cfg, data.train, Some(data.val), data.classes)?;
    let out = trainer.run(&opts, |_, _| Ok(()))?;
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        cfg.save(d.join("config.toml"))?;
        out.checkpoint.save(d.join("checkpoint.ckpt"))?;
    }
    Ok(out.checkpoint)
}

/// Training configuration with the test-time settings blanked, used to share
/// checkpoints between cells that differ only at evaluation.
fn training_key(cfg: &RunConfig) -> RunConfig {
    let mut k = cfg.clone();
    k.eval = RunConfig::desk().map(|d| d.eval).unwrap_or(k.eval);
    k
}

fn map_jobs<T: Send, U: Send>(jobs: Vec<T>, parallel: bool, f: impl Fn(T) -> U + Sync) -> Vec<U> {
    if !parallel {
        return jobs.into_iter().map(f).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.into_iter().map(|j| s.spawn(|| f(j))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

/// Runs every cell; failures are recorded in their row and the sweep goes on.
///
/// On the loss axis a softmax run is trained first and every margin cell
/// warm-starts from it.
pub fn run_sweep(template: &RunConfig, axis: &SweepAxis, data: &SweepData, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    template.validate()?;
    let cells = axis.cells(template);
    let cell_dir = |label: &str| opts.out_dir.as_ref().map(|d| d.join(format!("{}_{}", axis.name(), label)));

    let base = if let SweepAxis::Loss(_) = axis {
        let mut base_cfg = template.clone();
        base_cfg.loss = LossConfig::Softmax;
        let dir = opts.out_dir.as_ref().map(|d| d.join("loss_base_softmax"));
        Some(train_cell(&base_cfg, data, None, dir.as_deref()).map_err(|e| e.to_string()))
    } else {
        None
    };

    // distinct trainings, first occurrence order
    let mut keys: Vec<RunConfig> = Vec::new();
    let mut cell_key = Vec::with_capacity(cells.len());
    for (_, cfg) in &cells {
        cell_key.push(match cfg {
            Ok(c) => {
                let k = training_key(c);
                let idx = keys.iter().position(|x| *x == k).unwrap_or_else(|| {
                    keys.push(k);
                    keys.len() - 1
                });
                Some(idx)
            }
            Err(_) => None,
        });
    }
    let jobs: Vec<(usize, RunConfig)> = keys.into_iter().enumerate().collect();
    let trained: Vec<std::result::Result<Checkpoint, String>> = map_jobs(jobs, opts.parallel, |(k, cfg)| {
        let label = &cells[cell_key.iter().position(|&c| c == Some(k)).unwrap()].0;
        let dir = cell_dir(label);
        let warm = match (&base, cfg.loss) {
            (Some(_), LossConfig::Softmax) => return base.clone().unwrap(),
            (Some(Ok(b)), _) => Some(b),
            (Some(Err(e)), _) => return Err(format!("softmax base run failed: {e}")),
            (None, _) => None,
        };
        train_cell(&cfg, data, warm, dir.as_deref()).map_err(|e| e.to_string())
    });

    let evals: Vec<(usize, &String, &Result<RunConfig>)> =
        cells.iter().enumerate().map(|(i, (l, c))| (i, l, c)).collect();
    let rows = map_jobs(evals, opts.parallel, |(i, label, cfg)| {
        let result = match (cfg, cell_key[i]) {
            (Ok(cfg), Some(k)) => match &trained[k] {
                Ok(ckpt) => {
                    let dir = cell_dir(label);
                    if let Some(d) = &dir {
                        let _ = fs::create_dir_all(d);
                    }
                    evaluate_checkpoint(cfg, ckpt, data, dir.as_deref()).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.clone()),
            },
            (Err(e), _) => Err(e.to_string()),
            (Ok(_), None) => unreachable!(),
        };
        SweepRow {
            value: label.clone(),
            result,
        }
    });
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// Columns: axis value, Top-1, Top-5, EER, minimum detection cost, error.
pub fn sweep_csv(axis: &SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,top1,top5,eer,min_dcf,error\n");
    for r in rows {
        match &r.result {
            Ok(m) => writeln!(
                out,
                "{},{},{:.6},{},{},{},",
                axis.name(),
                r.value,
                m.ident.top1,
                opt(m.ident.top5),
                opt(m.verification.map(|v| v.eer)),
                opt(m.verification.map(|v| v.min_dcf)),
            ),
            Err(e) => writeln!(out, "{},{},,,,,\"{}\"", axis.name(), r.value, e.replace('"', "'")),
        }
        .unwrap();
    }
    out
}

pub fn sweep_table(axis: &SweepAxis, rows: &[SweepRow]) -> String {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut out = format!(
        "{:<12} {:>9} {:>9} {:>8} {:>9}\n",
        axis.name(),
        "Top-1(%)",
        "Top-5(%)",
        "EER(%)",
        "minDCF"
    );
    for r in rows {
        match &r.result {
            Ok(m) => writeln!(
                out,
                "{:<12} {:>9} {:>9} {:>8} {:>9}",
                r.value,
                pct(Some(m.ident.top1)),
                pct(m.ident.top5),
                pct(m.verification.map(|v| v.eer)),
                m.verification.map_or("-".into(), |v| format!("{:.4}", v.min_dcf)),
            ),
            Err(e) => writeln!(out, "{:<12} failed: {e}", r.value),
        }
        .unwrap();
    }
    out
}
