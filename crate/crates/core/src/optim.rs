//! AdamW: adaptive moment estimation with decoupled weight decay.
//!
//! ```text
//! θ ← θ · (1 − lr·λ)
//! m ← β₁ m + (1 − β₁) g
//! v ← β₂ v + (1 − β₂) g²
//! θ ← θ − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//! ```

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("gradient has {got} entries, parameters have {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite gradient entry at index {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F> {
    pub params: AdamWParams,
    pub step: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Real> AdamW<F> {
    pub fn new(n: usize, params: AdamWParams) -> Self {
        Self {
            params,
            step: 0,
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
        }
    }

    /// One update with the configured learning rate.
    pub fn step(&mut self, theta: &mut [F], grad: &[F]) -> Result<(), OptimError> {
        let lr = self.params.lr;
        self.step_with_lr(theta, grad, lr)
    }

    /// One update with an explicit learning rate (for schedules). Rejects the
    /// whole step, leaving state untouched, if any gradient entry is not finite.
    pub fn step_with_lr(&mut self, theta: &mut [F], grad: &[F], lr: f64) -> Result<(), OptimError> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(OptimError::ShapeMismatch {
                expected: self.m.len(),
                got: if theta.len() != self.m.len() { theta.len() } else { grad.len() },
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFinite { index });
        }
        self.step += 1;
        let p = self.params;
        let t = self.step as i32;
        let b1 = F::lit(p.beta1);
        let b2 = F::lit(p.beta2);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let lr = F::lit(lr);
        let decay = F::one() - lr * F::lit(p.weight_decay);
        let eps = F::lit(p.eps);
        for (((th, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *th *= decay;
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *th -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
