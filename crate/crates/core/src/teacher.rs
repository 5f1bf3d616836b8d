//! The cross-attentive teacher: both sentences go through one encoder pass
//! and a linear head on the final CLS state produces the logits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::{
    label_loss_with_grad, run_training, Objective, TrainConfig, TrainTrace, TrainingExample,
};
use crate::encoder::{build_pair_input, EncoderCache, EncoderConfig, EncoderWeights, TokenId};
use crate::error::{DseError, Result};
use crate::numkernel::ops::{dot, mm_at_b_acc};
use crate::numkernel::{adam_step, AdamConfig, Parameter, Parameterized, SeededRng, Tensor};

/// The kind of pair task, which fixes the number of output logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Regression,
}

impl TaskKind {
    pub fn outputs(self) -> usize {
        match self {
            TaskKind::Binary => 2,
            TaskKind::Multiclass => 3,
            TaskKind::Regression => 1,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, TaskKind::Regression)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Binary => "binary",
            TaskKind::Multiclass => "multiclass",
            TaskKind::Regression => "regression",
        })
    }
}

impl FromStr for TaskKind {
    type Err = DseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TaskKind::Binary),
            "multiclass" => Ok(TaskKind::Multiclass),
            "regression" => Ok(TaskKind::Regression),
            other => Err(DseError::Input(format!("unknown task kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub encoder: EncoderConfig,
    pub task: TaskKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub encoder: EncoderWeights,
    /// `H × n`
    pub head: Parameter,
    pub bias: Parameter,
    pub task: TaskKind,
}

pub(crate) struct TeacherCache {
    encoder: EncoderCache,
    cls: Vec<f64>,
}

impl TeacherModel {
    pub fn new(config: &TeacherConfig, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let encoder = EncoderWeights::new(config.encoder.clone(), &mut rng)?;
        let (h, n) = (config.encoder.hidden, config.task.outputs());
        Ok(Self {
            encoder,
            head: Parameter::new(Tensor::randn(&[h, n], config.encoder.init_std, &mut rng)),
            bias: Parameter::new(Tensor::zeros(&[n])),
            task: config.task,
        })
    }

    pub fn config(&self) -> TeacherConfig {
        TeacherConfig {
            encoder: self.encoder.config.clone(),
            task: self.task,
        }
    }

    fn head_logits(&self, cls: &[f64]) -> Vec<f64> {
        let n = self.task.outputs();
        let w = self.head.value.data();
        (0..n)
            .map(|j| {
                let col: f64 = cls.iter().enumerate().map(|(i, x)| x * w[i * n + j]).sum();
                col + self.bias.value.data()[j]
            })
            .collect()
    }

    pub(crate) fn forward(&self, a: &[TokenId], b: &[TokenId]) -> Result<(Vec<f64>, TeacherCache)> {
        // Padding cannot affect real positions, so only the real prefix is run.
        let input = build_pair_input(a, b, self.encoder.config.max_len)?.trimmed();
        let (outputs, encoder) = self.encoder.forward(&input)?;
        let h = self.encoder.config.hidden;
        let cls = outputs.last().expect("final layer")[..h].to_vec();
        Ok((self.head_logits(&cls), TeacherCache { encoder, cls }))
    }

    pub(crate) fn backward(&mut self, cache: &TeacherCache, d_logits: &[f64]) {
        let cfg = &self.encoder.config;
        let (h, n, layers) = (cfg.hidden, self.task.outputs(), cfg.num_layers);
        mm_at_b_acc(&cache.cls, d_logits, 1, h, n, self.head.grad.data_mut());
        for (g, d) in self.bias.grad.data_mut().iter_mut().zip(d_logits) {
            *g += d;
        }
        let w = self.head.value.data();
        let mut d_final = vec![0.0; cache.encoder.seq_len() * h];
        for (i, slot) in d_final[..h].iter_mut().enumerate() {
            *slot = dot(&w[i * n..(i + 1) * n], d_logits);
        }
        let mut d_outputs = vec![None; layers + 1];
        d_outputs[layers] = Some(d_final);
        self.encoder.backward(&cache.encoder, &d_outputs);
    }

    /// Raw logits for the pair `(a, b)`, no softmax.
    pub fn score(&self, a: &[TokenId], b: &[TokenId]) -> Result<Vec<f64>> {
        self.forward(a, b).map(|(logits, _)| logits)
    }
}

impl Parameterized for TeacherModel {
    fn parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out: Vec<(String, &Parameter)> = self
            .encoder
            .parameters()
            .into_iter()
            .map(|(n, p)| (format!("encoder.{n}"), p))
            .collect();
        out.push(("head.weight".into(), &self.head));
        out.push(("head.bias".into(), &self.bias));
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut out: Vec<(String, &mut Parameter)> = self
            .encoder
            .parameters_mut()
            .into_iter()
            .map(|(n, p)| (format!("encoder.{n}"), p))
            .collect();
        out.push(("head.weight".into(), &mut self.head));
        out.push(("head.bias".into(), &mut self.bias));
        out
    }
}

/// Teacher logits `T(a, b)`: one encoder pass over `[CLS a SEP b SEP]`, head
/// applied to the final CLS state.
pub fn teacher_score(t: &TeacherModel, a: &[TokenId], b: &[TokenId]) -> Result<Vec<f64>> {
    t.score(a, b)
}

/// Label loss and its gradient for one example, accumulated into `t`.
pub(crate) fn teacher_example_grad(t: &mut TeacherModel, ex: &TrainingExample, scale: f64) -> Result<f64> {
    let (logits, cache) = t.forward(&ex.sentence_a, &ex.sentence_b)?;
    let (loss, mut d) = label_loss_with_grad(&logits, &ex.label, t.task)?;
    d.iter_mut().for_each(|g| *g *= scale);
    t.backward(&cache, &d);
    Ok(loss)
}

/// Summed label loss over `examples`.
pub fn teacher_loss(t: &TeacherModel, examples: &[TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let logits = t.score(&ex.sentence_a, &ex.sentence_b)?;
        total += label_loss_with_grad(&logits, &ex.label, t.task)?.0;
    }
    Ok(total)
}

/// Summed label loss over `examples`; its gradient replaces whatever the
/// model's parameter gradients held.
pub fn teacher_loss_gradient(t: &mut TeacherModel, examples: &[TrainingExample]) -> Result<f64> {
    t.zero_grad();
    let mut total = 0.0;
    for ex in examples {
        total += teacher_example_grad(t, ex, 1.0)?;
    }
    Ok(total)
}

struct TeacherObjective {
    model: TeacherModel,
}

impl Objective for TeacherObjective {
    type Model = TeacherModel;

    fn accumulate(&mut self, ex: &TrainingExample, scale: f64) -> Result<f64> {
        teacher_example_grad(&mut self.model, ex, scale)
    }

    fn evaluate(&mut self, ex: &TrainingExample) -> Result<(f64, Vec<f64>)> {
        let logits = self.model.score(&ex.sentence_a, &ex.sentence_b)?;
        let (loss, _) = label_loss_with_grad(&logits, &ex.label, self.model.task)?;
        Ok((loss, logits))
    }

    fn step(&mut self, adam: &AdamConfig) {
        for (_, p) in self.model.parameters_mut() {
            adam_step(p, adam);
        }
    }

    fn model(&self) -> &TeacherModel {
        &self.model
    }

    fn task(&self) -> TaskKind {
        self.model.task
    }
}

/// Trains a teacher from a seeded random initialization on ground-truth
/// labels (cross-entropy for classification, squared error for regression).
pub fn fine_tune_teacher(
    dataset: &[TrainingExample],
    config: &TeacherConfig,
    train: &TrainConfig,
) -> Result<(TeacherModel, TrainTrace)> {
    if dataset.is_empty() {
        return Err(DseError::Input("training set is empty".into()));
    }
    let mut obj = TeacherObjective {
        model: TeacherModel::new(config, train.seed)?,
    };
    run_training(&mut obj, dataset, train)
}

/// Copies `dataset` with every example's `teacher_logits` set to `T(a, b)`.
pub fn cache_teacher_scores(t: &TeacherModel, dataset: &[TrainingExample]) -> Result<Vec<TrainingExample>> {
    dataset
        .iter()
        .map(|ex| {
            let mut scored = ex.clone();
            scored.teacher_logits = Some(t.score(&ex.sentence_a, &ex.sentence_b)?);
            Ok(scored)
        })
        .collect()
}
