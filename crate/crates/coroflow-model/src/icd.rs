//! The inverted conditional diffusion regressor.
//!
//! Labels (not images) carry the diffusion: training noises the normalized
//! pressure y₀ through the forward chain and fits ε̂(y_t, t, c) to the
//! injected noise, conditioned on c = [image embedding ⊕ coordinate
//! embedding]. Inference starts from pure noise and runs the learned
//! reverse chain back to a pressure estimate.
//!
//! Condition encoder: three blocks of (Conv3 → BatchNorm → ReLU → MaxPool)
//! over the patch (28³ → 14³ → 7³ → 3³ with the defaults), flattened and
//! projected to the image embedding; a linear map takes the standardized
//! (x, y, z) to the coordinate embedding. Denoiser: two hidden ReLU layers
//! and a final linear scalar head over [y_t ⊕ c ⊕ timestep embedding].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use coroflow_nn::layers::{BatchNorm3, Conv3, Dense, Layer, LayerCache, Mode, Stack};
use coroflow_nn::tensor::{concat_cols, split_cols, Tensor};
use coroflow_nn::Scalar;

use crate::schedule::ScheduleSpec;
use crate::ModelError;

/// Coordinate standardization statistics (training split, per axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl CoordStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn standardize(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.mean[0]) / self.std[0],
            (p[1] - self.mean[1]) / self.std[1],
            (p[2] - self.mean[2]) / self.std[2],
        ]
    }

    /// Per-axis mean/std over a set of points; degenerate axes fall back to
    /// unit scale.
    pub fn fit(points: &[[f64; 3]]) -> Self {
        if points.is_empty() {
            return Self::identity();
        }
        let n = points.len() as f64;
        let mut mean = [0.0; 3];
        for p in points {
            for a in 0..3 {
                mean[a] += p[a];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 3];
        for p in points {
            for a in 0..3 {
                var[a] += (p[a] - mean[a]).powi(2);
            }
        }
        let std = var.map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-9 {
                s
            } else {
                1.0
            }
        });
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcdConfig {
    pub patch_shape: [usize; 3],
    /// Output channels of the conv blocks; input is single-channel.
    pub encoder_channels: Vec<usize>,
    pub image_embed_dim: usize,
    pub coord_embed_dim: usize,
    pub time_embed_dim: usize,
    pub hidden_dim: usize,
    pub schedule: ScheduleSpec,
    /// Reverse-process samples averaged per point at inference.
    pub inference_samples: usize,
}

impl Default for IcdConfig {
    fn default() -> Self {
        Self {
            patch_shape: [28, 28, 28],
            encoder_channels: vec![8, 16, 32],
            image_embed_dim: 256,
            coord_embed_dim: 32,
            time_embed_dim: 32,
            hidden_dim: 128,
            schedule: ScheduleSpec::default(),
            inference_samples: 1,
        }
    }
}

impl IcdConfig {
    /// Width of the fused conditioning vector.
    pub fn condition_dim(&self) -> usize {
        self.image_embed_dim + self.coord_embed_dim
    }

    /// Denoiser input width: y_t ⊕ condition ⊕ timestep embedding.
    pub fn denoiser_input_dim(&self) -> usize {
        1 + self.condition_dim() + self.time_embed_dim
    }

    /// Spatial dims after the pooled conv blocks, and the flattened width.
    pub fn encoder_flat_dim(&self) -> Result<usize, ModelError> {
        let mut spatial = self.patch_shape;
        for (i, _) in self.encoder_channels.iter().enumerate() {
            if spatial.iter().any(|&s| s < 2) {
                return Err(ModelError::BadConfig(format!(
                    "patch shape {:?} too small for pool block {i}",
                    self.patch_shape
                )));
            }
            spatial = spatial.map(|s| s / 2);
        }
        let last = *self.encoder_channels.last().unwrap_or(&0);
        Ok(last * spatial.iter().product::<usize>())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(ModelError::BadConfig(
                "encoder channels must be positive".into(),
            ));
        }
        let dims = [
            self.image_embed_dim,
            self.coord_embed_dim,
            self.time_embed_dim,
            self.hidden_dim,
            self.inference_samples,
        ];
        if dims.contains(&0) {
            return Err(ModelError::BadConfig("all dims must be positive".into()));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(ModelError::BadConfig(
                "time embedding dim must be even".into(),
            ));
        }
        self.encoder_flat_dim()?;
        Ok(())
    }
}

/// Builds the patch encoder trunk: conv blocks then a dense projection.
pub fn build_trunk<T: Scalar>(
    config: &IcdConfig,
    image_embed_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Stack<T>, ModelError> {
    config.validate()?;
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for &out_ch in &config.encoder_channels {
        layers.push(Layer::Conv3(Conv3::new(in_ch, out_ch, rng)));
        layers.push(Layer::BatchNorm(BatchNorm3::new(out_ch)));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool);
        in_ch = out_ch;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(Dense::new(
        config.encoder_flat_dim()?,
        image_embed_dim,
        rng,
    )));
    Ok(Stack::new(layers))
}

pub struct IcdModel<T> {
    pub config: IcdConfig,
    pub trunk: Stack<T>,
    pub coord_fc: Dense<T>,
    pub denoiser: Stack<T>,
}

/// Cache trail from a train-mode conditional forward.
pub struct IcdForwardCache<T> {
    trunk: Vec<LayerCache<T>>,
    coords: Tensor<T>,
    denoiser: Vec<LayerCache<T>>,
}

impl<T: Scalar> IcdModel<T> {
    pub fn new(config: IcdConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let trunk = build_trunk(&config, config.image_embed_dim, rng)?;
        let coord_fc = Dense::new(3, config.coord_embed_dim, rng);
        let denoiser = Stack::new(vec![
            Layer::Dense(Dense::new(
                config.denoiser_input_dim(),
                config.hidden_dim,
                rng,
            )),
            Layer::Relu,
            Layer::Dense(Dense::new(config.hidden_dim, config.hidden_dim, rng)),
            Layer::Relu,
            Layer::Dense(Dense::new(config.hidden_dim, 1, rng)),
        ]);
        Ok(Self {
            config,
            trunk,
            coord_fc,
            denoiser,
        })
    }

    pub fn check_patch_tensor(&self, patches: &Tensor<T>) -> Result<usize, ModelError> {
        let [d, h, w] = self.config.patch_shape;
        let s = patches.shape();
        if s.len() != 5 || s[1] != 1 || s[2] != d || s[3] != h || s[4] != w {
            return Err(ModelError::PatchShape {
                expected: self.config.patch_shape,
                actual: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Eval-mode conditioning: image ⊕ coordinate embedding, one row per
    /// sample. Pure; identical inputs give identical vectors in any batch.
    pub fn encode_condition(
        &self,
        patches: &Tensor<T>,
        coords_std: &Tensor<T>,
    ) -> Result<Tensor<T>, ModelError> {
        self.check_patch_tensor(patches)?;
        let img = self.trunk.forward_eval(patches)?;
        let coord = self.coord_fc.forward(coords_std)?;
        Ok(concat_cols(&[&img, &coord])?)
    }

    /// Eval-mode ε̂ for a batch of (y_t, condition, t) rows.
    pub fn eps_predict(
        &self,
        y_t: &Tensor<T>,
        conditions: &Tensor<T>,
        timesteps: &[usize],
    ) -> Result<Tensor<T>, ModelError> {
        let temb = self.time_embed_tensor(timesteps)?;
        let den_in = concat_cols(&[y_t, conditions, &temb])?;
        Ok(self.denoiser.forward_eval(&den_in)?)
    }

    pub fn time_embed_tensor(&self, timesteps: &[usize]) -> Result<Tensor<T>, ModelError> {
        let dim = self.config.time_embed_dim;
        let mut data = Vec::with_capacity(timesteps.len() * dim);
        for &t in timesteps {
            data.extend(
                crate::embed::sinusoidal_embed(t, dim)
                    .into_iter()
                    .map(T::from_f64c),
            );
        }
        Ok(Tensor::from_vec(&[timesteps.len(), dim], data)?)
    }

    /// Train-mode ε̂ with the cache trail needed for backward.
    pub fn forward_train(
        &mut self,
        patches: &Tensor<T>,
        coords_std: &Tensor<T>,
        y_t: &Tensor<T>,
        timesteps: &[usize],
    ) -> Result<(Tensor<T>, IcdForwardCache<T>), ModelError> {
        self.check_patch_tensor(patches)?;
        let (img, trunk_cache) = self.trunk.forward(patches, Mode::Train)?;
        let coord = self.coord_fc.forward(coords_std)?;
        let cond = concat_cols(&[&img, &coord])?;
        let temb = self.time_embed_tensor(timesteps)?;
        let den_in = concat_cols(&[y_t, &cond, &temb])?;
        let (eps_hat, den_cache) = self.denoiser.forward(&den_in, Mode::Train)?;
        Ok((
            eps_hat,
            IcdForwardCache {
                trunk: trunk_cache,
                coords: coords_std.clone(),
                denoiser: den_cache,
            },
        ))
    }

    /// Backpropagates d(loss)/d(ε̂) through denoiser, encoder, and
    /// coordinate path, accumulating parameter gradients.
    pub fn backward_train(
        &mut self,
        cache: IcdForwardCache<T>,
        d_eps_hat: &Tensor<T>,
    ) -> Result<(), ModelError> {
        let d_den_in = self.denoiser.backward(cache.denoiser, d_eps_hat)?;
        let parts = split_cols(
            &d_den_in,
            &[1, self.config.condition_dim(), self.config.time_embed_dim],
        )?;
        // parts[0] is the y_t input gradient and parts[2] the timestep
        // featurization gradient; neither reaches a parameter.
        let d_cond = &parts[1];
        let cond_parts = split_cols(
            d_cond,
            &[self.config.image_embed_dim, self.config.coord_embed_dim],
        )?;
        self.trunk.backward(cache.trunk, &cond_parts[0])?;
        self.coord_fc.backward(&cache.coords, &cond_parts[1])?;
        Ok(())
    }

    pub fn params(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        let mut out = self.trunk.params();
        out.push((&mut self.coord_fc.w, &mut self.coord_fc.gw));
        out.push((&mut self.coord_fc.b, &mut self.coord_fc.gb));
        out.extend(self.denoiser.params());
        out
    }

    pub fn zero_grads(&mut self) {
        self.trunk.zero_grads();
        self.coord_fc.gw.fill(T::zero());
        self.coord_fc.gb.fill(T::zero());
        self.denoiser.zero_grads();
    }

    /// Persistent tensors in declaration order (trunk, coordinate path,
    /// denoiser), as serialized.
    pub fn state_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = self.trunk.state_tensors();
        out.push(&self.coord_fc.w);
        out.push(&self.coord_fc.b);
        out.extend(self.denoiser.state_tensors());
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.trunk.state_tensors_mut();
        out.push(&mut self.coord_fc.w);
        out.push(&mut self.coord_fc.b);
        out.extend(self.denoiser.state_tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use coroflow_core::seed::rng_from_seed;

    fn small_config() -> IcdConfig {
        IcdConfig {
            patch_shape: [8, 8, 8],
            encoder_channels: vec![2, 3, 4],
            image_embed_dim: 8,
            coord_embed_dim: 4,
            time_embed_dim: 4,
            hidden_dim: 16,
            schedule: ScheduleSpec {
                t_max: 20,
                beta_start: 1e-3,
                beta_end: 0.2,
            },
            inference_samples: 1,
        }
    }

    #[test]
    fn default_condition_width_is_288() {
        let c = IcdConfig::default();
        assert_eq!(c.condition_dim(), 288);
        assert_eq!(c.denoiser_input_dim(), 321);
        assert_eq!(c.encoder_flat_dim().unwrap(), 32 * 27);
    }

    #[test]
    fn condition_vector_has_configured_width() {
        let config = small_config();
        let model = IcdModel::<f32>::new(config.clone(), &mut rng_from_seed(1)).unwrap();
        let patches = Tensor::uniform(&[3, 1, 8, 8, 8], 1.0, &mut rng_from_seed(2));
        let coords = Tensor::uniform(&[3, 3], 1.0, &mut rng_from_seed(3));
        let c = model.encode_condition(&patches, &coords).unwrap();
        assert_eq!(c.shape(), &[3, config.condition_dim()]);
    }

    #[test]
    fn condition_is_pure_across_batch_contexts() {
        let model = IcdModel::<f32>::new(small_config(), &mut rng_from_seed(4)).unwrap();
        let patches = Tensor::uniform(&[2, 1, 8, 8, 8], 1.0, &mut rng_from_seed(5));
        let coords = Tensor::uniform(&[2, 3], 1.0, &mut rng_from_seed(6));
        let both = model.encode_condition(&patches, &coords).unwrap();

        // Re-encode the second sample alone.
        let p1 = Tensor::from_vec(&[1, 1, 8, 8, 8], patches.data()[512..1024].to_vec()).unwrap();
        let c1 = Tensor::from_vec(&[1, 3], coords.data()[3..6].to_vec()).unwrap();
        let solo = model.encode_condition(&p1, &c1).unwrap();
        let w = both.shape()[1];
        assert_eq!(&both.data()[w..2 * w], solo.data());
    }

    #[test]
    fn eps_predict_is_scalar_per_row_and_zero_for_zero_params() {
        let mut model = IcdModel::<f32>::new(small_config(), &mut rng_from_seed(7)).unwrap();
        for t in model.denoiser.state_tensors_mut() {
            t.fill(0.0);
        }
        let n = 4;
        let cond = Tensor::uniform(
            &[n, model.config.condition_dim()],
            1.0,
            &mut rng_from_seed(8),
        );
        let y_t = Tensor::uniform(&[n, 1], 1.0, &mut rng_from_seed(9));
        let eps = model.eps_predict(&y_t, &cond, &[1, 5, 9, 20]).unwrap();
        assert_eq!(eps.shape(), &[n, 1]);
        assert!(eps.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn patch_shape_mismatch_is_reported() {
        let model = IcdModel::<f32>::new(small_config(), &mut rng_from_seed(10)).unwrap();
        let bad = Tensor::zeros(&[1, 1, 6, 8, 8]);
        let coords = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            model.encode_condition(&bad, &coords),
            Err(ModelError::PatchShape { .. })
        ));
    }

    #[test]
    fn coord_stats_fit_and_standardize() {
        let pts = vec![[0.0, 10.0, -4.0], [2.0, 10.0, 4.0]];
        let stats = CoordStats::fit(&pts);
        assert_eq!(stats.mean, [1.0, 10.0, 0.0]);
        // Degenerate y axis falls back to unit std.
        assert_eq!(stats.std[1], 1.0);
        let z = stats.standardize([1.0, 10.0, 0.0]);
        assert_eq!(z, [0.0, 0.0, 0.0]);
    }
}
