//! Adam with decoupled weight decay.
//!
//! Per parameter θ with gradient g at step t:
//!
//! ```text
//! m ← β₁ m + (1 − β₁) g          m̂ = m / (1 − β₁ᵗ)
//! v ← β₂ v + (1 − β₂) g²         v̂ = v / (1 − β₂ᵗ)
//! θ ← θ − lr · m̂ / (√v̂ + ε) − lr · λ · θ
//! ```
//!
//! The decay term acts on the parameter directly, independent of the
//! gradient moments. A step with any non-finite gradient is rejected
//! without touching parameters or state.

use crate::tensor::{Scalar, Tensor};
use crate::NnError;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over `(parameter, gradient)` pairs. Pair order and shapes
    /// must stay stable across calls; moments are allocated on first use.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [(&mut Tensor<T>, &mut Tensor<T>)],
    ) -> Result<(), NnError> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(NnError::InvalidSpec(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(NnError::InvalidSpec(format!(
                    "parameter {i} changed size: {} vs {}",
                    p.len(),
                    self.m[i].len()
                )));
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGradient { tensor: i });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gf = gv.to_f64c();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gf;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gf * gf;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let theta = pv.to_f64c();
                let update = self.lr * m_hat / (v_hat.sqrt() + self.eps)
                    + self.lr * self.weight_decay * theta;
                *pv = T::from_f64c(theta - update);
            }
        }
        Ok(())
    }
}
