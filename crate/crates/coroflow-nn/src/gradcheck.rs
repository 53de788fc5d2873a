//! Finite-difference gradient verification (f64 mode).
//!
//! The check projects the stack output onto a fixed random functional
//! L(θ) = Σ y ⊙ u and compares analytic gradients against central
//! differences (L(θ+h) − L(θ−h)) / 2h for every parameter element and every
//! input element. Relative error uses |a − n| / max(|a|, |n|, 1e−6).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{Mode, Stack};
use crate::tensor::Tensor;
use crate::NnError;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| !e.pass).collect()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<24} max_rel_err {:.3e}  {}",
                e.name,
                e.max_rel_err,
                if e.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn loss_of(stack: &mut Stack<f64>, x: &Tensor<f64>, u: &[f64]) -> Result<f64, NnError> {
    let (y, _) = stack.forward(x, Mode::Train)?;
    Ok(y.data().iter().zip(u).map(|(a, b)| a * b).sum())
}

/// Checks every parameter tensor and the input of `stack` against central
/// differences. An empty stack yields an empty report.
#[allow(clippy::needless_range_loop)] // params() must be re-borrowed per element
pub fn check_stack(
    stack: &mut Stack<f64>,
    input: &Tensor<f64>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let mut report = GradCheckReport {
        tolerance,
        entries: Vec::new(),
    };
    if stack.layers.is_empty() {
        return Ok(report);
    }

    let (y0, caches) = stack.forward(input, Mode::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Tensor::<f64>::uniform(y0.shape(), 1.0, &mut rng);

    stack.zero_grads();
    let input_grad = stack.backward(caches, &u)?;
    let analytic: Vec<Vec<f64>> = stack
        .params()
        .iter()
        .map(|(_, g)| g.data().to_vec())
        .collect();

    let h = DEFAULT_STEP;
    let n_params = stack.params().len();
    for pi in 0..n_params {
        let n_elems = stack.params()[pi].0.len();
        let mut worst = 0.0f64;
        for e in 0..n_elems {
            let orig = stack.params()[pi].0.data()[e];
            stack.params()[pi].0.data_mut()[e] = orig + h;
            let lp = loss_of(stack, input, u.data())?;
            stack.params()[pi].0.data_mut()[e] = orig - h;
            let lm = loss_of(stack, input, u.data())?;
            stack.params()[pi].0.data_mut()[e] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            worst = worst.max(rel_err(analytic[pi][e], numeric));
        }
        report.entries.push(GradCheckEntry {
            name: format!("param[{pi}]"),
            max_rel_err: worst,
            pass: worst <= tolerance,
        });
    }

    let mut x = input.clone();
    let mut worst = 0.0f64;
    for e in 0..x.len() {
        let orig = x.data()[e];
        x.data_mut()[e] = orig + h;
        let lp = loss_of(stack, &x, u.data())?;
        x.data_mut()[e] = orig - h;
        let lm = loss_of(stack, &x, u.data())?;
        x.data_mut()[e] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        worst = worst.max(rel_err(input_grad.data()[e], numeric));
    }
    report.entries.push(GradCheckEntry {
        name: "input".to_string(),
        max_rel_err: worst,
        pass: worst <= tolerance,
    });

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{BatchNorm3, Conv3, Dense, Layer};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn empty_stack_gives_empty_report() {
        let mut stack = Stack::<f64>::default();
        let x = Tensor::zeros(&[1, 3]);
        let report = check_stack(&mut stack, &x, 1e-4, 0).unwrap();
        assert!(report.entries.is_empty());
        assert!(report.passed());
    }

    #[test]
    fn dense_relu_chain_passes() {
        let mut r = rng(3);
        let mut stack = Stack::new(vec![
            Layer::Dense(Dense::new(5, 4, &mut r)),
            Layer::Relu,
            Layer::Dense(Dense::new(4, 2, &mut r)),
        ]);
        let x = Tensor::uniform(&[3, 5], 1.0, &mut r);
        let report = check_stack(&mut stack, &x, 1e-4, 11).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn conv_bn_pool_chain_passes() {
        let mut r = rng(4);
        let mut stack = Stack::new(vec![
            Layer::Conv3(Conv3::new(2, 3, &mut r)),
            Layer::BatchNorm(BatchNorm3::new(3)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Flatten,
            Layer::Dense(Dense::new(3 * 2 * 2, 2, &mut r)),
        ]);
        let x = Tensor::uniform(&[2, 2, 4, 3, 5], 1.0, &mut r);
        let report = check_stack(&mut stack, &x, 1e-4, 12).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn sign_flipped_gradient_is_flagged() {
        // The flag mechanism is the relative-error comparison itself: a
        // corrupted analytic gradient must land far outside tolerance.
        let g_true = 0.731;
        assert!(rel_err(g_true, g_true + 1e-9) < 1e-4);
        assert!(rel_err(-g_true, g_true) > 1e-1);
    }
}
