//! The SGD training loop, warm starts from a softmax checkpoint, and
//! bit-exact resumption.
//!
//! All randomness of iteration `t` (batch indices, crops, dropout masks) is
//! drawn from streams derived from `(seed, t)`, so a run stopped and resumed
//! from its checkpoint replays exactly what an unbroken run would.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::embed::embed_utterances;
use super::ident::evaluate_ident;
use super::manifest::Utterances;
use crate::audio::sample_training_crop;
use crate::error::{Error, Result};
use crate::features::Stft;
use crate::losses::{ClassificationHead, LossConfig};

use crate::nn::{
    init_params, lr_at, sgd_step, LrSchedule, TensorEntry, Checkpoint, CheckpointHeader, Encoder, Mode, OptimizerState, Params, Tensor,
    CHECKPOINT_VERSION,
};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Softmax-trained checkpoint to initialize the encoder (and head) from.
    pub warm_start: Option<Checkpoint>,
    /// Checkpoint of this same run to continue from.
    pub resume: Option<Checkpoint>,
    /// Stop once this many iterations are complete (before the schedule ends).
    pub stop_at: Option<u64>,
}

/// Summary of one learning-rate step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u32,
    /// Iterations completed at the end of the step.
    pub iteration: u64,
    pub lr: f64,
    pub mean_loss: f64,
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

struct State {
    params: Params<f32>,
    head: ClassificationHead<f32>,
    opt: OptimizerState<f32>,
    iteration: u64,
    warm_start_seed: Option<u64>,
    schedule: LrSchedule,
}

fn is_margin(loss: &LossConfig) -> bool {
    !matches!(loss, LossConfig::Softmax)
}

/// Builds the head for `loss` out of a checkpoint's head.
///
/// Angular softmax gets a fresh Xavier head; additive margin keeps the class
/// vectors and drops the bias; logistic margin keeps their directions at norm
/// `logistic_scale` with zero biases; softmax copies everything.
pub fn transfer_head(
    source: &ClassificationHead<f32>,
    cfg: &RunConfig,
    classes: usize,
) -> Result<ClassificationHead<f32>> {
    let d = cfg.encoder.embedding_dim;
    if source.dim() != d {
        return Err(Error::ConfigMismatch(format!(
            "warm-start head has dimension {} but the run uses {d}",
            source.dim()
        )));
    }
    if let LossConfig::ASoftmax { .. } = cfg.loss {
        let mut r = rng::stream(cfg.seed, &[domain::HEAD]);
        return ClassificationHead::xavier(classes, d, false, &mut r);
    }
    if source.classes() != classes {
        return Err(Error::ConfigMismatch(format!(
            "warm-start head has {} classes but the corpus has {classes}",
            source.classes()
        )));
    }
    let weight = source.weight.clone();
    match cfg.loss {
        LossConfig::Softmax => {
            let bias = source.bias.clone().unwrap_or_else(|| Tensor::zeros(vec![classes]));
            ClassificationHead::new(weight, Some(bias))
        }
        LossConfig::AMSoftmax { .. } => ClassificationHead::new(weight, None),
        LossConfig::LogisticMargin { .. } => {
            let mut weight = weight;
            let scale = cfg.warm_start.logistic_scale;
            for j in 0..classes {
                let row = weight.row_mut(j);
                let n = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                if n == 0.0 {
                    return Err(Error::ZeroNorm(format!("warm-start class vector {j}")));
                }
                row.iter_mut().for_each(|v| *v = (*v as f64 * scale / n) as f32);
            }
            ClassificationHead::new(weight, Some(Tensor::zeros(vec![classes])))
        }
        LossConfig::ASoftmax { .. } => unreachable!(),
    }
}

pub struct Trainer<'a> {
    cfg: &'a RunConfig,
    encoder: Encoder,
    stft: Stft,
    train: &'a Utterances,
    labels: Vec<usize>,
    val: Option<(&'a Utterances, Vec<usize>)>,
    classes: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &'a RunConfig,
        train: &'a Utterances,
        val: Option<&'a Utterances>,
        classes: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Manifest("no training utterances".into()));
        }
        let labels = train.known_labels()?;
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        let val = match val {
            Some(v) if !v.is_empty() => Some((v, v.known_labels()?)),
            _ => None,
        };
        Ok(Self {
            cfg,
            encoder: Encoder::new(cfg.encoder.clone())?,
            stft: Stft::new(cfg.features)?,
            train,
            labels,
            val,
            classes,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    fn initial_state(&self, opts: &TrainOptions) -> Result<State> {
        let cfg = self.cfg;
        let schedule_for = |warm: bool| match (&cfg.warm_start.finetune, warm) {
            (Some(s), true) => *s,
            _ => cfg.schedule,
        };
        let opt = OptimizerState::new(0.0, cfg.optimizer.momentum, cfg.optimizer.weight_decay);
        if let Some(ck) = &opts.resume {
            let h = &ck.header;
            if h.encoder != cfg.encoder || h.loss != cfg.loss || h.seed != cfg.seed || h.classes != self.classes {
                return Err(Error::ConfigMismatch(
                    "resume checkpoint was produced by a different run configuration".into(),
                ));
            }
            self.encoder.check_params(&ck.params)?;
            let mut opt = opt;
            opt.velocity = ck.velocity.clone();
            return Ok(State {
                params: ck.params.clone(),
                head: ck.head.clone(),
                opt,
                iteration: h.iteration,
                warm_start_seed: h.warm_start_seed,
                schedule: schedule_for(h.warm_start_seed.is_some()),
            });
        }
        if let Some(src) = &opts.warm_start {
            self.encoder.check_params(&src.params).map_err(|e| {
                Error::ConfigMismatch(format!("warm-start encoder does not fit the run: {e}"))
            })?;
            if src.header.encoder.embedding_dim != cfg.encoder.embedding_dim {
                return Err(Error::ConfigMismatch(format!(
                    "warm-start embedding dimension {} but the run uses {}",
                    src.header.encoder.embedding_dim, cfg.encoder.embedding_dim
                )));
            }
            return Ok(State {
                params: src.params.clone(),
                head: transfer_head(&src.head, cfg, self.classes)?,
                opt,
                iteration: 0,
                warm_start_seed: Some(src.header.seed),
                schedule: schedule_for(true),
            });
        }
        if is_margin(&cfg.loss) && !cfg.warm_start.allow_cold_start {
            return Err(Error::Config(format!(
                "{} training needs a softmax warm-start checkpoint (or warm_start.allow_cold_start)",
                cfg.loss.name()
            )));
        }
        let params = init_params(&self.encoder, cfg.init, &mut rng::stream(cfg.seed, &[domain::INIT]));
        let head = ClassificationHead::xavier(
            self.classes,
            cfg.encoder.embedding_dim,
            cfg.loss.uses_bias(),
            &mut rng::stream(cfg.seed, &[domain::HEAD]),
        )?;
        Ok(State {
            params,
            head,
            opt,
            iteration: 0,
            warm_start_seed: None,
            schedule: cfg.schedule,
        })
    }

    /// Normalized features of a batch of training crops for iteration `iter`.
    pub fn batch(&self, iter: u64) -> Result<(Tensor<f32>, Vec<usize>)> {
        let cfg = self.cfg;
        let (frames, bins) = cfg.encoder.input_shape;
        let mut pick = rng::stream(cfg.seed, &[domain::BATCH, iter]);
        let mut data = Vec::with_capacity(cfg.batch_size * frames * bins);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for b in 0..cfg.batch_size {
            let i = pick.random_range(0..self.train.len());
            let mut r = rng::stream(cfg.seed, &[domain::CROP, iter, b as u64]);
            let crop = sample_training_crop(&self.train.waveforms[i], &cfg.augment, &mut r)?;
            let spec = self.stft.normalized(&crop)?;
            data.extend(spec.values().iter().map(|&v| v as f32));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![cfg.batch_size, frames, bins], data)?, labels))
    }

    fn val_top1(&self, st: &State) -> Result<Option<f64>> {
        let Some((val, labels)) = &self.val else {
            return Ok(None);
        };
        let policy = self.cfg.augment.with_enabled(false);
        let store = embed_utterances(&self.encoder, &st.params, &self.stft, val, 1, &policy, self.cfg.seed)?;
        let r = evaluate_ident(&self.cfg.loss, &st.head, &store, &val.ids, labels)?;
        Ok(Some(r.top1))
    }

    fn checkpoint(&self, st: &State) -> Checkpoint {
        let velocity = if st.opt.velocity.is_empty() {
            st.params
                .tensors()
                .iter()
                .chain(st.head.tensors())
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect()
        } else {
            st.opt.velocity.clone()
        };
        let mut tensors: Vec<TensorEntry> = st
            .params
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        for (n, t) in st.head.param_names().into_iter().zip(st.head.tensors()) {
            tensors.push(TensorEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            });
        }
        for (i, t) in velocity.iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("velocity.{i}"),
                shape: t.shape().to_vec(),
            });
        }
        Checkpoint {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                iteration: st.iteration,
                seed: self.cfg.seed,
                warm_start_seed: st.warm_start_seed,
                classes: self.classes,
                lr: lr_at(&st.schedule, st.iteration),
                momentum: self.cfg.optimizer.momentum,
                weight_decay: self.cfg.optimizer.weight_decay,
                encoder: self.cfg.encoder.clone(),
                loss: self.cfg.loss,
                tensors,
            },
            params: st.params.clone(),
            head: st.head.clone(),
            velocity,
        }
    }

    /// Runs the schedule, calling `on_step` with the step summary and a
    /// checkpoint after every learning-rate step.
    pub fn run(
        &self,
        opts: &TrainOptions,
        mut on_step: impl FnMut(&StepLog, &Checkpoint) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let mut st = self.initial_state(opts)?;
        let total = st.schedule.total_iters();
        let end = opts.stop_at.map_or(total, |s| s.min(total));
        let ips = st.schedule.iters_per_step;
        let mut log = Vec::new();
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        while st.iteration < end {
            let iter = st.iteration;
            st.opt.lr = lr_at(&st.schedule, iter);
            let (x, labels) = self.batch(iter)?;
            let mut drop = rng::stream(cfg.seed, &[domain::DROPOUT, iter]);
            let (emb, cache) = match self.encoder.forward(&st.params, &x, Mode::Train, &mut drop) {
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        iteration: iter,
                        loss: f64::NAN,
                    })
                }
                r => r?,
            };
            let out = cfg.loss.compute(&emb, &labels, &st.head, iter)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged {
                    iteration: iter,
                    loss: out.loss,
                });
            }
            let grads = self.encoder.backward(&st.params, &cache, &out.grad_embedding)?;
            let grad_list: Vec<&Tensor<f32>> = grads.tensors().iter().chain(out.grad_tensors()).collect();
            let param_list = st.params.tensors_mut().iter_mut().chain(st.head.tensors_mut());
            sgd_step(param_list, grad_list, &mut st.opt)?;
            if !st.params.all_finite() {
                return Err(Error::Diverged {
                    iteration: iter,
                    loss: f64::NAN,
                });
            }
            st.iteration += 1;
            loss_sum += out.loss;
            loss_n += 1;
            if st.iteration % ips == 0 || st.iteration == end {
                let entry = StepLog {
                    step: ((st.iteration - 1) / ips) as u32,
                    iteration: st.iteration,
                    lr: st.opt.lr,
                    mean_loss: loss_sum / loss_n as f64,
                    val_top1: self.val_top1(&st)?,
                };
                on_step(&entry, &self.checkpoint(&st))?;
                log.push(entry);
                loss_sum = 0.0;
                loss_n = 0;
            }
        }
        Ok(TrainOutcome {
            checkpoint: self.checkpoint(&st),
            log,
        })
    }
}

/// Trains without per-step callbacks.
pub fn train(
    cfg: &RunConfig,
    train: &Utterances,
    val: Option<&Utterances>,
    classes: usize,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    Trainer::new(cfg, train, val, classes)?.run(opts, |_, _| Ok(()))
}
