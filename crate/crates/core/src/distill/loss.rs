use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::teacher::TaskKind;

use super::Label;

/// Mixing of distillation and label supervision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub task: TaskKind,
}

impl LossConfig {
    pub fn new(alpha: f64, task: TaskKind) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(DseError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha, task })
    }
}

/// `α·‖S − T‖² + (1 − α)·l_lbl(S, R)`.
///
/// The label term is softmax cross-entropy against class `R` for
/// classification tasks and `(S − R)²` for regression. `T` may be absent only
/// when `α = 0`.
pub fn distill_loss(s: &[f64], t: Option<&[f64]>, r: &Label, cfg: &LossConfig) -> Result<f64> {
    distill_loss_with_grad(s, t, r, cfg).map(|(l, _)| l)
}

/// The loss and its gradient with respect to the student logits.
pub fn distill_loss_with_grad(
    s: &[f64],
    t: Option<&[f64]>,
    r: &Label,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = cfg.task.outputs();
    if s.len() != n {
        return Err(DseError::Shape(format!(
            "student logits have {} entries, need {n}",
            s.len()
        )));
    }
    let (lbl, d_lbl) = label_loss_with_grad(s, r, cfg.task)?;
    let (dstl, d_dstl) = match t {
        Some(t) => {
            if t.len() != n {
                return Err(DseError::Shape(format!(
                    "teacher logits have {} entries, need {n}",
                    t.len()
                )));
            }
            let diff: Vec<f64> = s.iter().zip(t).map(|(a, b)| a - b).collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>();
            (loss, diff.into_iter().map(|d| 2.0 * d).collect())
        }
        None if cfg.alpha > 0.0 => {
            return Err(DseError::Config(
                "alpha > 0 requires cached teacher logits".into(),
            ))
        }
        None => (0.0, vec![0.0; n]),
    };
    let a = cfg.alpha;
    let loss = a * dstl + (1.0 - a) * lbl;
    let grad = d_dstl
        .iter()
        .zip(&d_lbl)
        .map(|(x, y)| a * x + (1.0 - a) * y)
        .collect();
    Ok((loss, grad))
}

/// Supervised term alone.
pub fn label_loss_with_grad(s: &[f64], r: &Label, task: TaskKind) -> Result<(f64, Vec<f64>)> {
    r.validate(task)?;
    match *r {
        Label::Class(c) => {
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let loss = sum.ln() - (s[c] - max);
            let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            grad[c] -= 1.0;
            Ok((loss, grad))
        }
        Label::Real(y) => {
            let d = s[0] - y;
            Ok((d * d, vec![2.0 * d]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_values() {
        let reg = LossConfig::new(1.0, TaskKind::Regression).unwrap();
        let l = distill_loss(&[1.0], Some(&[3.0]), &Label::Real(0.0), &reg).unwrap();
        assert!((l - 4.0).abs() < 1e-9);

        let bin = LossConfig::new(0.0, TaskKind::Binary).unwrap();
        let l = distill_loss(&[0.0, 0.0], None, &Label::Class(0), &bin).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9);

        // Both cases in one call: the teacher sits at squared distance 4 and
        // the label term is the uniform-softmax cross-entropy.
        let half = LossConfig::new(0.5, TaskKind::Binary).unwrap();
        let l = distill_loss(&[0.0, 0.0], Some(&[2.0, 0.0]), &Label::Class(0), &half).unwrap();
        assert!((l - (2.0 + 0.5 * std::f64::consts::LN_2)).abs() < 1e-9);
        assert!((l - 2.346_574).abs() < 1e-6);
    }

    #[test]
    fn missing_teacher_with_positive_alpha_is_config_error() {
        let cfg = LossConfig::new(0.3, TaskKind::Binary).unwrap();
        let err = distill_loss(&[0.0, 1.0], None, &Label::Class(1), &cfg).unwrap_err();
        assert!(matches!(err, DseError::Config(_)));
        assert!(LossConfig::new(1.5, TaskKind::Binary).is_err());
        assert!(LossConfig::new(-0.1, TaskKind::Binary).is_err());
    }

    #[test]
    fn label_must_match_task() {
        let cfg = LossConfig::new(0.0, TaskKind::Binary).unwrap();
        assert!(distill_loss(&[0.0, 0.0], None, &Label::Class(2), &cfg).is_err());
        assert!(distill_loss(&[0.0, 0.0], None, &Label::Real(0.5), &cfg).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = [0.3, -1.1, 0.8];
        let t = [1.0, 0.2, -0.4];
        for alpha in [0.0, 0.5, 1.0] {
            let cfg = LossConfig::new(alpha, TaskKind::Multiclass).unwrap();
            let r = Label::Class(2);
            let (_, g) = distill_loss_with_grad(&s, Some(&t), &r, &cfg).unwrap();
            for i in 0..3 {
                let h = 1e-6;
                let mut p = s;
                p[i] += h;
                let mut m = s;
                m[i] -= h;
                let num = (distill_loss(&p, Some(&t), &r, &cfg).unwrap()
                    - distill_loss(&m, Some(&t), &r, &cfg).unwrap())
                    / (2.0 * h);
                assert!((num - g[i]).abs() < 1e-8, "alpha={alpha} i={i}");
            }
        }
    }

    proptest! {
        #[test]
        fn alpha_zero_ignores_teacher(s0 in -5.0f64..5.0, s1 in -5.0f64..5.0, t0 in -50.0f64..50.0, t1 in -50.0f64..50.0) {
            let cfg = LossConfig::new(0.0, TaskKind::Binary).unwrap();
            let r = Label::Class(1);
            let a = distill_loss(&[s0, s1], Some(&[t0, t1]), &r, &cfg).unwrap();
            let b = distill_loss(&[s0, s1], Some(&[t1 * 3.0, -t0]), &r, &cfg).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn alpha_one_ignores_label(s in -5.0f64..5.0, t in -5.0f64..5.0, r1 in -9.0f64..9.0, r2 in -9.0f64..9.0) {
            let cfg = LossConfig::new(1.0, TaskKind::Regression).unwrap();
            let a = distill_loss(&[s], Some(&[t]), &Label::Real(r1), &cfg).unwrap();
            let b = distill_loss(&[s], Some(&[t]), &Label::Real(r2), &cfg).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn continuous_in_alpha(alpha in 0.0f64..0.999, s0 in -5.0f64..5.0, s1 in -5.0f64..5.0, t0 in -5.0f64..5.0, t1 in -5.0f64..5.0) {
            let s = [s0, s1];
            let t = [t0, t1];
            let r = Label::Class(0);
            let lo = LossConfig::new(alpha, TaskKind::Binary).unwrap();
            let hi = LossConfig::new(alpha + 1e-9, TaskKind::Binary).unwrap();
            let a = distill_loss(&s, Some(&t), &r, &lo).unwrap();
            let b = distill_loss(&s, Some(&t), &r, &hi).unwrap();
            let dstl = distill_loss(&s, Some(&t), &r, &LossConfig::new(1.0, TaskKind::Binary).unwrap()).unwrap();
            let lbl = distill_loss(&s, Some(&t), &r, &LossConfig::new(0.0, TaskKind::Binary).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-6 * (dstl.abs() + lbl.abs()) + 1e-15);
        }
    }
}
