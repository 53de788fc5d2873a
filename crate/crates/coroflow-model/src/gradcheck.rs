//! Finite-difference verification of the full model gradient paths, run in
//! f64 on reduced architectures (the layer algebra is identical at every
//! size; only widths shrink).

use rand_distr::{Distribution, StandardNormal};

use coroflow_core::seed::{derive_seed, rng_from_seed};
use coroflow_nn::gradcheck::{rel_err, GradCheckEntry, GradCheckReport, DEFAULT_STEP};
use coroflow_nn::tensor::Tensor;

use crate::baseline::{BaselineConfig, BaselineModel};
use crate::icd::{IcdConfig, IcdModel};
use crate::schedule::ScheduleSpec;
use crate::ModelError;

/// Reduced diffusion architecture for checking.
pub fn small_icd_config() -> IcdConfig {
    IcdConfig {
        patch_shape: [8, 8, 8],
        encoder_channels: vec![2, 3, 4],
        image_embed_dim: 8,
        coord_embed_dim: 4,
        time_embed_dim: 4,
        hidden_dim: 16,
        schedule: ScheduleSpec {
            t_max: 10,
            beta_start: 1e-3,
            beta_end: 0.2,
        },
        inference_samples: 1,
    }
}

/// Reduced baseline architecture for checking.
pub fn small_baseline_config() -> BaselineConfig {
    BaselineConfig {
        patch_shape: [8, 8, 8],
        encoder_channels: vec![2, 3, 4],
        image_embed_dim: 8,
        coord_embed_dim: 4,
        head_hidden_dim: 16,
    }
}

/// Checks the full ε-prediction path (encoder → condition → denoiser)
/// against central differences.
pub fn grad_check_icd(tolerance: f64, seed: u64) -> Result<GradCheckReport, ModelError> {
    let config = small_icd_config();
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let mut model = IcdModel::<f64>::new(config.clone(), &mut rng)?;

    let n = 2usize;
    let patches = Tensor::uniform(
        &[
            n,
            1,
            config.patch_shape[0],
            config.patch_shape[1],
            config.patch_shape[2],
        ],
        1.0,
        &mut rng,
    );
    let coords = Tensor::uniform(&[n, 3], 1.0, &mut rng);
    let y_t = Tensor::uniform(&[n, 1], 1.0, &mut rng);
    let timesteps = vec![3usize, 7];
    let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    let loss = |model: &mut IcdModel<f64>| -> Result<f64, ModelError> {
        let (eps_hat, _) = model.forward_train(&patches, &coords, &y_t, &timesteps)?;
        Ok(eps_hat.data().iter().zip(&u).map(|(a, b)| a * b).sum())
    };

    let (eps_hat, cache) = model.forward_train(&patches, &coords, &y_t, &timesteps)?;
    debug_assert_eq!(eps_hat.shape(), &[n, 1]);
    model.zero_grads();
    let du = Tensor::from_vec(&[n, 1], u.clone())?;
    model.backward_train(cache, &du)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|(_, g)| g.data().to_vec())
        .collect();

    finite_difference_report(tolerance, analytic, &mut model, loss, |m| m.params())
}

/// Checks the baseline regression path against central differences.
pub fn grad_check_baseline(tolerance: f64, seed: u64) -> Result<GradCheckReport, ModelError> {
    let config = small_baseline_config();
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    let mut model = BaselineModel::<f64>::new(config.clone(), &mut rng)?;

    let n = 2usize;
    let patches = Tensor::uniform(
        &[
            n,
            1,
            config.patch_shape[0],
            config.patch_shape[1],
            config.patch_shape[2],
        ],
        1.0,
        &mut rng,
    );
    let coords = Tensor::uniform(&[n, 3], 1.0, &mut rng);
    let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    let loss = |model: &mut BaselineModel<f64>| -> Result<f64, ModelError> {
        let (pred, _) = model.forward_train(&patches, &coords)?;
        Ok(pred.data().iter().zip(&u).map(|(a, b)| a * b).sum())
    };

    let (pred, cache) = model.forward_train(&patches, &coords)?;
    debug_assert_eq!(pred.shape(), &[n, 1]);
    model.zero_grads();
    let du = Tensor::from_vec(&[n, 1], u.clone())?;
    model.backward_train(cache, &du)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|(_, g)| g.data().to_vec())
        .collect();

    finite_difference_report(tolerance, analytic, &mut model, loss, |m| m.params())
}

/// Dispatch by model kind.
pub fn grad_check_report(
    kind: crate::serialize::ModelKind,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    match kind {
        crate::serialize::ModelKind::Icd => grad_check_icd(tolerance, seed),
        crate::serialize::ModelKind::CnnMlp => grad_check_baseline(tolerance, seed),
    }
}

#[allow(clippy::needless_range_loop)] // params_of() must be re-borrowed per element
fn finite_difference_report<M>(
    tolerance: f64,
    analytic: Vec<Vec<f64>>,
    model: &mut M,
    mut loss: impl FnMut(&mut M) -> Result<f64, ModelError>,
    mut params_of: impl FnMut(&mut M) -> Vec<(&mut Tensor<f64>, &mut Tensor<f64>)>,
) -> Result<GradCheckReport, ModelError> {
    let h = DEFAULT_STEP;
    let mut entries = Vec::with_capacity(analytic.len());
    for (pi, grads) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for e in 0..grads.len() {
            let orig = params_of(model)[pi].0.data()[e];
            params_of(model)[pi].0.data_mut()[e] = orig + h;
            let lp = loss(model)?;
            params_of(model)[pi].0.data_mut()[e] = orig - h;
            let lm = loss(model)?;
            params_of(model)[pi].0.data_mut()[e] = orig;
            worst = worst.max(rel_err(grads[e], (lp - lm) / (2.0 * h)));
        }
        entries.push(GradCheckEntry {
            name: format!("param[{pi}] ({} values)", grads.len()),
            max_rel_err: worst,
            pass: worst <= tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icd_eps_path_passes_at_1e4() {
        let report = grad_check_icd(1e-4, 42).unwrap();
        assert!(
            report.passed(),
            "max {:.3e}\n{report}",
            report.max_rel_err()
        );
    }

    #[test]
    fn baseline_passes_at_1e4() {
        let report = grad_check_baseline(1e-4, 43).unwrap();
        assert!(
            report.passed(),
            "max {:.3e}\n{report}",
            report.max_rel_err()
        );
    }
}
