use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Tensor;

/// A trainable tensor with its gradient and Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Drops optimizer state and gradient, keeping the value.
    pub fn reset_state(&mut self) {
        self.grad.fill(0.0);
        self.adam_m.fill(0.0);
        self.adam_v.fill(0.0);
        self.step_count = 0;
    }
}

/// Anything that owns a fixed, ordered set of named parameters.
///
/// The order and names are part of the checkpoint format.
pub trait Parameterized {
    fn parameters(&self) -> Vec<(String, &Parameter)>;
    fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Hex SHA-256 over parameter names, shapes and value bits.
    fn parameter_checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.parameters() {
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::DseError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// One bias-corrected Adam update. Clears the gradient afterwards.
pub fn adam_step(p: &mut Parameter, cfg: &AdamConfig) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let value = p.value.data_mut();
    let grad = p.grad.data_mut();
    let m = p.adam_m.data_mut();
    let v = p.adam_v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        grad[i] = 0.0;
    }
}
