//! Pairwise distillation: the combined loss, the training loop shared by
//! teacher fine-tuning and student training, and evaluation metrics.

mod loss;
mod metrics;
mod train;

use serde::{Deserialize, Serialize};

use crate::encoder::TokenId;
use crate::error::{DseError, Result};
use crate::teacher::TaskKind;

pub use loss::{distill_loss, distill_loss_with_grad, label_loss_with_grad, LossConfig};
pub use metrics::{argmax, compute_metrics, Correlation, Metrics};
pub use train::{
    dev_split, student_loss, student_loss_gradient, train_student, EpochRecord, TrainConfig, TrainTrace,
    TrainedStudent,
};
pub(crate) use train::{run_training, Objective};

/// Ground truth `R` for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Real(f64),
}

impl Label {
    pub fn validate(&self, task: TaskKind) -> Result<()> {
        match (*self, task) {
            (Label::Class(c), TaskKind::Binary | TaskKind::Multiclass) if c < task.outputs() => Ok(()),
            (Label::Real(r), TaskKind::Regression) if r.is_finite() => Ok(()),
            (label, task) => Err(DseError::Input(format!(
                "label {label:?} is not valid for a {task} task"
            ))),
        }
    }
}

/// A tokenized sentence pair with its label and, once scored, the teacher's
/// logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub sentence_a: Vec<TokenId>,
    pub sentence_b: Vec<TokenId>,
    pub label: Label,
    pub teacher_logits: Option<Vec<f64>>,
}

impl TrainingExample {
    pub fn new(sentence_a: Vec<TokenId>, sentence_b: Vec<TokenId>, label: Label) -> Self {
        Self {
            sentence_a,
            sentence_b,
            label,
            teacher_logits: None,
        }
    }

    pub fn validate(&self, task: TaskKind) -> Result<()> {
        self.label.validate(task)?;
        if let Some(t) = &self.teacher_logits {
            if t.len() != task.outputs() {
                return Err(DseError::Input(format!(
                    "teacher logits have {} entries, task {task} needs {}",
                    t.len(),
                    task.outputs()
                )));
            }
        }
        Ok(())
    }
}
