//! Linear variance schedule for the diffusion chain.
//!
//! β_t runs linearly from β_start to β_end inclusive over T steps,
//! α_t = 1 − β_t, ᾱ_t = ∏ α_s, and the reverse-step noise is σ_t² = β_t.
//! With the training default (T = 200, β from 5e−4 to 0.05) the terminal
//! ᾱ_T ≈ 5.88e−3, so y_T is almost pure noise.

use serde::{Deserialize, Serialize};

use crate::ModelError;

pub const DEFAULT_T: usize = 200;
pub const DEFAULT_BETA_START: f64 = 5e-4;
pub const DEFAULT_BETA_END: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Parameters that round-trip through model files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

/// Builds the β/α/ᾱ/σ tables.
pub fn make_schedule(
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, ModelError> {
    if t_max < 1 {
        return Err(ModelError::BadSchedule("T must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(ModelError::BadSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let mut beta = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let frac = if t_max == 1 {
            0.0
        } else {
            t as f64 / (t_max - 1) as f64
        };
        beta.push(beta_start + frac * (beta_end - beta_start));
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    for w in alpha_bar.windows(2) {
        if w[1] >= w[0] || !w[1].is_finite() {
            return Err(ModelError::BadSchedule(
                "alpha_bar must strictly decrease".into(),
            ));
        }
    }
    let sigma: Vec<f64> = beta.iter().map(|b| b.sqrt()).collect();
    Ok(NoiseSchedule {
        t_max,
        beta,
        alpha,
        alpha_bar,
        sigma,
    })
}

impl NoiseSchedule {
    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self, ModelError> {
        make_schedule(spec.t_max, spec.beta_start, spec.beta_end)
    }

    fn check_t(&self, t: usize) -> Result<(), ModelError> {
        if t < 1 || t > self.t_max {
            return Err(ModelError::TimestepOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        Ok(())
    }

    /// One-shot forward noising: y_t = √ᾱ_t · y₀ + √(1 − ᾱ_t) · ε.
    pub fn q_sample(&self, y0: f64, t: usize, eps: f64) -> Result<f64, ModelError> {
        self.check_t(t)?;
        let ab = self.alpha_bar[t - 1];
        Ok(ab.sqrt() * y0 + (1.0 - ab).sqrt() * eps)
    }

    /// Algebraic inverse of `q_sample` for a known ε.
    pub fn reconstruct_y0(&self, y_t: f64, t: usize, eps: f64) -> Result<f64, ModelError> {
        self.check_t(t)?;
        let ab = self.alpha_bar[t - 1];
        Ok((y_t - (1.0 - ab).sqrt() * eps) / ab.sqrt())
    }

    /// One reverse step: y_{t−1} = (y_t − β_t/√(1−ᾱ_t) · ε̂)/√α_t + σ_t·z.
    pub fn reverse_step(
        &self,
        y_t: f64,
        t: usize,
        eps_hat: f64,
        z: f64,
    ) -> Result<f64, ModelError> {
        self.check_t(t)?;
        let idx = t - 1;
        let mean = (y_t - self.beta[idx] / (1.0 - self.alpha_bar[idx]).sqrt() * eps_hat)
            / self.alpha[idx].sqrt();
        Ok(mean + self.sigma[idx] * z)
    }
}
