//! Huber loss.
//!
//! For residual r = pred − target and threshold δ:
//!
//! ```text
//! L(r) = r²/2            for |r| ≤ δ
//!      = δ|r| − δ²/2     otherwise
//! ```
//!
//! The reported value is the mean over elements; the gradient w.r.t. the
//! prediction carries the same 1/m factor and is clipped to ±δ/m in the
//! linear regime.

use crate::tensor::Scalar;
use crate::NnError;

pub fn huber_loss<T: Scalar>(
    pred: &[T],
    target: &[T],
    delta: f64,
) -> Result<(f64, Vec<T>), NnError> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(NnError::InvalidSpec(format!(
            "huber delta must be > 0, got {delta}"
        )));
    }
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::shape(
            format!("{} targets", target.len()),
            &[pred.len()],
        ));
    }
    let m = pred.len() as f64;
    let d = delta;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let r = p.to_f64c() - t.to_f64c();
        if r.abs() <= d {
            total += 0.5 * r * r;
            grad.push(T::from_f64c(r / m));
        } else {
            total += d * r.abs() - 0.5 * d * d;
            grad.push(T::from_f64c(d * r.signum() / m));
        }
    }
    Ok((total / m, grad))
}
