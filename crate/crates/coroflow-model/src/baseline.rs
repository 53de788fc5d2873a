//! Deterministic CNN-MLP baseline.
//!
//! Same conv trunk as the diffusion model but with a 128-wide image
//! embedding, a 32-wide coordinate embedding, and a two-layer regression
//! head (160 → 64 → 1) trained directly on normalized labels. One forward
//! pass at inference; no sampling.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use coroflow_nn::layers::{Dense, Layer, LayerCache, Mode, Stack};
use coroflow_nn::tensor::{concat_cols, split_cols, Tensor};
use coroflow_nn::Scalar;

use crate::icd::{build_trunk, IcdConfig};
use crate::schedule::ScheduleSpec;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub patch_shape: [usize; 3],
    pub encoder_channels: Vec<usize>,
    pub image_embed_dim: usize,
    pub coord_embed_dim: usize,
    pub head_hidden_dim: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            patch_shape: [28, 28, 28],
            encoder_channels: vec![8, 16, 32],
            image_embed_dim: 128,
            coord_embed_dim: 32,
            head_hidden_dim: 64,
        }
    }
}

impl BaselineConfig {
    pub fn fused_dim(&self) -> usize {
        self.image_embed_dim + self.coord_embed_dim
    }

    /// Borrow the trunk-building machinery via an equivalent encoder spec.
    fn as_icd(&self) -> IcdConfig {
        IcdConfig {
            patch_shape: self.patch_shape,
            encoder_channels: self.encoder_channels.clone(),
            image_embed_dim: self.image_embed_dim,
            coord_embed_dim: self.coord_embed_dim,
            time_embed_dim: 2,
            hidden_dim: self.head_hidden_dim,
            schedule: ScheduleSpec::default(),
            inference_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.as_icd().validate()
    }
}

pub struct BaselineModel<T> {
    pub config: BaselineConfig,
    pub trunk: Stack<T>,
    pub coord_fc: Dense<T>,
    pub head: Stack<T>,
}

pub struct BaselineCache<T> {
    trunk: Vec<LayerCache<T>>,
    coords: Tensor<T>,
    head: Vec<LayerCache<T>>,
}

impl<T: Scalar> BaselineModel<T> {
    pub fn new(config: BaselineConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let icd_like = config.as_icd();
        let trunk = build_trunk(&icd_like, config.image_embed_dim, rng)?;
        let coord_fc = Dense::new(3, config.coord_embed_dim, rng);
        let head = Stack::new(vec![
            Layer::Dense(Dense::new(config.fused_dim(), config.head_hidden_dim, rng)),
            Layer::Relu,
            Layer::Dense(Dense::new(config.head_hidden_dim, 1, rng)),
        ]);
        Ok(Self {
            config,
            trunk,
            coord_fc,
            head,
        })
    }

    fn check_patches(&self, patches: &Tensor<T>) -> Result<usize, ModelError> {
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

    /// Deterministic prediction of normalized labels, one per row.
    pub fn predict(
        &self,
        patches: &Tensor<T>,
        coords_std: &Tensor<T>,
    ) -> Result<Tensor<T>, ModelError> {
        self.check_patches(patches)?;
        let img = self.trunk.forward_eval(patches)?;
        let coord = self.coord_fc.forward(coords_std)?;
        let fused = concat_cols(&[&img, &coord])?;
        Ok(self.head.forward_eval(&fused)?)
    }

    pub fn forward_train(
        &mut self,
        patches: &Tensor<T>,
        coords_std: &Tensor<T>,
    ) -> Result<(Tensor<T>, BaselineCache<T>), ModelError> {
        self.check_patches(patches)?;
        let (img, trunk_cache) = self.trunk.forward(patches, Mode::Train)?;
        let coord = self.coord_fc.forward(coords_std)?;
        let fused = concat_cols(&[&img, &coord])?;
        let (pred, head_cache) = self.head.forward(&fused, Mode::Train)?;
        Ok((
            pred,
            BaselineCache {
                trunk: trunk_cache,
                coords: coords_std.clone(),
                head: head_cache,
            },
        ))
    }

    pub fn backward_train(
        &mut self,
        cache: BaselineCache<T>,
        d_pred: &Tensor<T>,
    ) -> Result<(), ModelError> {
        let d_fused = self.head.backward(cache.head, d_pred)?;
        let parts = split_cols(
            &d_fused,
            &[self.config.image_embed_dim, self.config.coord_embed_dim],
        )?;
        self.trunk.backward(cache.trunk, &parts[0])?;
        self.coord_fc.backward(&cache.coords, &parts[1])?;
        Ok(())
    }

    pub fn params(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        let mut out = self.trunk.params();
        out.push((&mut self.coord_fc.w, &mut self.coord_fc.gw));
        out.push((&mut self.coord_fc.b, &mut self.coord_fc.gb));
        out.extend(self.head.params());
        out
    }

    pub fn zero_grads(&mut self) {
        self.trunk.zero_grads();
        self.coord_fc.gw.fill(T::zero());
        self.coord_fc.gb.fill(T::zero());
        self.head.zero_grads();
    }

    pub fn state_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = self.trunk.state_tensors();
        out.push(&self.coord_fc.w);
        out.push(&self.coord_fc.b);
        out.extend(self.head.state_tensors());
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.trunk.state_tensors_mut();
        out.push(&mut self.coord_fc.w);
        out.push(&mut self.coord_fc.b);
        out.extend(self.head.state_tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use coroflow_core::seed::rng_from_seed;

    fn small_config() -> BaselineConfig {
        BaselineConfig {
            patch_shape: [8, 8, 8],
            encoder_channels: vec![2, 3],
            image_embed_dim: 8,
            coord_embed_dim: 4,
            head_hidden_dim: 8,
        }
    }

    #[test]
    fn default_fuses_to_160() {
        assert_eq!(BaselineConfig::default().fused_dim(), 160);
    }

    #[test]
    fn prediction_is_deterministic_single_pass() {
        let model = BaselineModel::<f32>::new(small_config(), &mut rng_from_seed(1)).unwrap();
        let patches = Tensor::uniform(&[2, 1, 8, 8, 8], 1.0, &mut rng_from_seed(2));
        let coords = Tensor::uniform(&[2, 3], 1.0, &mut rng_from_seed(3));
        let a = model.predict(&patches, &coords).unwrap();
        let b = model.predict(&patches, &coords).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[2, 1]);
    }
}
