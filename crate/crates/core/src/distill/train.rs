use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoder::TokenId;
use crate::error::{DseError, Result};
use crate::numkernel::{adam_step, AdamConfig, Parameterized, SeededRng};
use crate::student::{SentenceEmbedding, StudentModel};
use crate::teacher::TaskKind;

use super::{compute_metrics, distill_loss_with_grad, LossConfig, TrainingExample};

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            freeze_encoder: false,
            dev_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DseError::Config("batch size must be at least 1".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(DseError::Config(format!(
                "dev fraction must lie in (0, 1), got {}",
                self.dev_fraction
            )));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Seeded shuffle of `0..len` into sorted train and dev index lists. The dev
/// split holds `round(len · fraction)` items, at least one, and leaves at
/// least one training item.
pub fn dev_split(len: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if len < 2 {
        return Err(DseError::Input(format!(
            "need at least 2 examples to split off a dev set, got {len}"
        )));
    }
    let mut perm: Vec<usize> = (0..len).collect();
    SeededRng::new(seed).fork(SPLIT_STREAM).shuffle(&mut perm);
    let dev_count = ((len as f64 * fraction).round() as usize).clamp(1, len - 1);
    let mut dev = perm[..dev_count].to_vec();
    let mut train = perm[dev_count..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    Ok((train, dev))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_metric: Option<f64>,
}

/// Per-epoch losses. Epoch 0 is the model at initialization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_loss,dev_metric\n");
        for r in &self.records {
            let metric = r
                .dev_metric
                .map_or_else(|| "undefined".to_string(), |m| m.to_string());
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.dev_loss, metric);
        }
        out
    }

    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }
}

/// Per-example loss and gradient plumbing for [`run_training`].
pub(crate) trait Objective {
    type Model: Clone;

    /// Forward and backward on one example; gradients are scaled by `scale`
    /// and accumulated into the model's parameters. Returns the loss.
    fn accumulate(&mut self, ex: &TrainingExample, scale: f64) -> Result<f64>;

    /// Loss and logits without touching gradients.
    fn evaluate(&mut self, ex: &TrainingExample) -> Result<(f64, Vec<f64>)>;

    /// Applies one optimizer step to the trainable parameters.
    fn step(&mut self, adam: &AdamConfig);

    fn model(&self) -> &Self::Model;

    fn task(&self) -> TaskKind;
}

fn evaluate_split<O: Objective>(
    obj: &mut O,
    data: &[TrainingExample],
    idx: &[usize],
) -> Result<(f64, Option<f64>)> {
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let (loss, logits) = obj.evaluate(&data[i])?;
        total += loss;
        preds.push(logits);
        labels.push(data[i].label);
    }
    let metrics = compute_metrics(&preds, &labels, obj.task())?;
    Ok((total / idx.len() as f64, metrics.headline()))
}

/// Minibatch Adam over the train split; returns the checkpoint with the
/// lowest dev loss (the initialization counts as epoch 0).
pub(crate) fn run_training<O: Objective>(
    obj: &mut O,
    data: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(O::Model, TrainTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DseError::Input("training set is empty".into()));
    }
    let task = obj.task();
    for (i, ex) in data.iter().enumerate() {
        ex.validate(task)
            .map_err(|e| DseError::Input(format!("example {i}: {e}")))?;
    }
    let (mut train_idx, dev_idx) = dev_split(data.len(), cfg.dev_fraction, cfg.seed)?;
    let adam = cfg.adam();

    let (init_train, _) = evaluate_split(obj, data, &train_idx)?;
    let (init_dev, init_metric) = evaluate_split(obj, data, &dev_idx)?;
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_loss: init_train,
        dev_loss: init_dev,
        dev_metric: init_metric,
    }];
    let mut best = obj.model().clone();
    let mut best_epoch = 0;
    let mut best_dev = init_dev;

    let mut rng = SeededRng::new(cfg.seed).fork(SHUFFLE_STREAM);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut train_idx);
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += obj.accumulate(&data[i], scale)?;
            }
            obj.step(&adam);
        }
        let train_loss = total / train_idx.len() as f64;
        if !train_loss.is_finite() {
            return Err(DseError::NonFinite(format!(
                "training loss diverged in epoch {epoch}"
            )));
        }
        let (dev_loss, dev_metric) = evaluate_split(obj, data, &dev_idx)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_metric,
        });
        if dev_loss < best_dev {
            best_dev = dev_loss;
            best_epoch = epoch;
            best = obj.model().clone();
        }
    }
    Ok((best, TrainTrace { records, best_epoch }))
}

#[derive(Debug, Clone)]
pub struct TrainedStudent {
    pub model: StudentModel,
    pub trace: TrainTrace,
}

/// Loss for one example through both encoder passes, with `scale` times its
/// gradient accumulated into `model`.
fn student_example_grad(
    model: &mut StudentModel,
    ex: &TrainingExample,
    loss: &LossConfig,
    scale: f64,
) -> Result<f64> {
    let (u, cu) = model.embed_forward(&ex.sentence_a)?;
    let (v, cv) = model.embed_forward(&ex.sentence_b)?;
    let (logits, head_cache) = model.head_forward(&u, &v)?;
    let (l, mut d) = distill_loss_with_grad(&logits, ex.teacher_logits.as_deref(), &ex.label, loss)?;
    d.iter_mut().for_each(|g| *g *= scale);
    let (du, dv) = model.head_backward(&head_cache, &d);
    model.embed_backward(&cu, &du);
    model.embed_backward(&cv, &dv);
    Ok(l)
}

struct StudentObjective {
    model: StudentModel,
    loss: LossConfig,
    /// Present when the encoder is frozen: embeddings never change, so each
    /// sentence is embedded once.
    frozen: Option<HashMap<Vec<TokenId>, SentenceEmbedding>>,
}

impl StudentObjective {
    fn frozen_embedding(&mut self, y: &[TokenId]) -> Result<SentenceEmbedding> {
        let cache = self.frozen.as_mut().expect("frozen mode");
        if let Some(e) = cache.get(y) {
            return Ok(e.clone());
        }
        let e = self.model.embed(y)?;
        cache.insert(y.to_vec(), e.clone());
        Ok(e)
    }
}

impl Objective for StudentObjective {
    type Model = StudentModel;

    fn accumulate(&mut self, ex: &TrainingExample, scale: f64) -> Result<f64> {
        let teacher = ex.teacher_logits.as_deref();
        if self.frozen.is_some() {
            let u = self.frozen_embedding(&ex.sentence_a)?;
            let v = self.frozen_embedding(&ex.sentence_b)?;
            let (logits, head_cache) = self.model.head_forward(&u, &v)?;
            let (loss, mut d) = distill_loss_with_grad(&logits, teacher, &ex.label, &self.loss)?;
            d.iter_mut().for_each(|g| *g *= scale);
            self.model.head_backward(&head_cache, &d);
            return Ok(loss);
        }
        student_example_grad(&mut self.model, ex, &self.loss, scale)
    }

    fn evaluate(&mut self, ex: &TrainingExample) -> Result<(f64, Vec<f64>)> {
        let logits = if self.frozen.is_some() {
            let u = self.frozen_embedding(&ex.sentence_a)?;
            let v = self.frozen_embedding(&ex.sentence_b)?;
            self.model.similarity(&u, &v)?
        } else {
            self.model.score(&ex.sentence_a, &ex.sentence_b)?
        };
        let (loss, _) = distill_loss_with_grad(&logits, ex.teacher_logits.as_deref(), &ex.label, &self.loss)?;
        Ok((loss, logits))
    }

    fn step(&mut self, adam: &AdamConfig) {
        if self.frozen.is_some() {
            for (_, p) in self.model.head_parameters_mut() {
                adam_step(p, adam);
            }
        } else {
            for (_, p) in self.model.parameters_mut() {
                adam_step(p, adam);
            }
        }
    }

    fn model(&self) -> &StudentModel {
        &self.model
    }

    fn task(&self) -> TaskKind {
        self.model.task
    }
}

/// Summed mixed loss over `examples`.
pub fn student_loss(model: &StudentModel, examples: &[TrainingExample], loss: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let s = model.score(&ex.sentence_a, &ex.sentence_b)?;
        total += super::distill_loss(&s, ex.teacher_logits.as_deref(), &ex.label, loss)?;
    }
    Ok(total)
}

/// Summed mixed loss over `examples`; its gradient replaces whatever the
/// model's parameter gradients held.
pub fn student_loss_gradient(
    model: &mut StudentModel,
    examples: &[TrainingExample],
    loss: &LossConfig,
) -> Result<f64> {
    model.zero_grad();
    let mut total = 0.0;
    for ex in examples {
        total += student_example_grad(model, ex, loss, 1.0)?;
    }
    Ok(total)
}

/// Trains `student` on `dataset` to minimize the mixed distillation loss.
///
/// Teacher logits are read from the examples; the teacher itself is never
/// run here. With `freeze_encoder`, only the similarity head is updated.
pub fn train_student(
    dataset: &[TrainingExample],
    student: StudentModel,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainedStudent> {
    if dataset.is_empty() {
        return Err(DseError::Input("training set is empty".into()));
    }
    if loss_cfg.task != student.task {
        return Err(DseError::Config(format!(
            "loss configured for {} but student predicts {}",
            loss_cfg.task, student.task
        )));
    }
    if loss_cfg.alpha > 0.0 {
        if let Some(i) = dataset.iter().position(|e| e.teacher_logits.is_none()) {
            return Err(DseError::Config(format!(
                "alpha = {} needs cached teacher logits, example {i} has none",
                loss_cfg.alpha
            )));
        }
    }
    let mut obj = StudentObjective {
        model: student,
        loss: *loss_cfg,
        frozen: train_cfg.freeze_encoder.then(HashMap::new),
    };
    let (model, trace) = run_training(&mut obj, dataset, train_cfg)?;
    Ok(TrainedStudent { model, trace })
}
