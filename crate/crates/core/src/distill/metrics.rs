use serde::{Serialize, Serializer};

use crate::error::{DseError, Result};
use crate::teacher::TaskKind;

use super::Label;

/// A correlation coefficient, which does not exist when either sequence has
/// zero variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Value(f64),
    Undefined,
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(*v),
            Correlation::Undefined => None,
        }
    }
}

impl Serialize for Correlation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Correlation::Value(v) => s.serialize_f64(*v),
            Correlation::Undefined => s.serialize_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson: Option<Correlation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman: Option<Correlation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

impl Metrics {
    /// Accuracy for classification, Pearson for regression.
    pub fn headline(&self) -> Option<f64> {
        self.accuracy.or_else(|| self.pearson.and_then(|c| c.value()))
    }
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Classification: accuracy, plus F1 with class 1 as positive for binary
/// tasks. Regression: MSE, Pearson and Spearman (average ranks for ties).
pub fn compute_metrics(predictions: &[Vec<f64>], labels: &[Label], task: TaskKind) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(DseError::Input(format!(
            "need equal-length nonempty sequences, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    for p in predictions {
        if p.len() != task.outputs() {
            return Err(DseError::Shape(format!(
                "prediction has {} logits, task {task} needs {}",
                p.len(),
                task.outputs()
            )));
        }
    }
    for l in labels {
        l.validate(task)?;
    }

    match task {
        TaskKind::Binary | TaskKind::Multiclass => {
            let pairs: Vec<(usize, usize)> = predictions
                .iter()
                .zip(labels)
                .map(|(p, l)| match l {
                    Label::Class(c) => (argmax(p), *c),
                    Label::Real(_) => unreachable!("validated above"),
                })
                .collect();
            let correct = pairs.iter().filter(|(p, l)| p == l).count();
            let accuracy = correct as f64 / pairs.len() as f64;
            let f1 = (task == TaskKind::Binary).then(|| binary_f1(&pairs));
            Ok(Metrics {
                accuracy: Some(accuracy),
                f1,
                ..Default::default()
            })
        }
        TaskKind::Regression => {
            let x: Vec<f64> = predictions.iter().map(|p| p[0]).collect();
            let y: Vec<f64> = labels
                .iter()
                .map(|l| match l {
                    Label::Real(v) => *v,
                    Label::Class(_) => unreachable!("validated above"),
                })
                .collect();
            let mse = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
            Ok(Metrics {
                mse: Some(mse),
                pearson: Some(pearson(&x, &y)),
                spearman: Some(spearman(&x, &y)),
                ..Default::default()
            })
        }
    }
}

fn binary_f1(pairs: &[(usize, usize)]) -> f64 {
    let tp = pairs.iter().filter(|&&(p, l)| p == 1 && l == 1).count() as f64;
    let fp = pairs.iter().filter(|&&(p, l)| p == 1 && l != 1).count() as f64;
    let fn_ = pairs.iter().filter(|&&(p, l)| p != 1 && l == 1).count() as f64;
    if fp == 0.0 && fn_ == 0.0 {
        // No errors on the positive class, including the all-negative case.
        return 1.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Undefined;
    }
    Correlation::Value((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties receive the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Correlation {
    pearson(&average_ranks(x), &average_ranks(y))
}
