//! Diffusion-based pressure regression: noise schedule, the inverted
//! conditional diffusion model, the CNN-MLP baseline, training loops,
//! reverse-process inference, and model-file serialization.

pub mod baseline;
pub mod embed;
pub mod gradcheck;
pub mod icd;
pub mod predict;
pub mod schedule;
pub mod serialize;
pub mod train;

pub use baseline::{BaselineConfig, BaselineModel};
pub use gradcheck::{grad_check_baseline, grad_check_icd, grad_check_report};
pub use icd::{CoordStats, IcdConfig, IcdModel};
pub use predict::{predict_baseline, predict_icd, reverse_sample, reverse_trajectory};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleSpec};
pub use serialize::{load_model, save_baseline, save_icd, ModelKind, StoredModel};
pub use train::{train_baseline, train_icd, LoadedData, TrainConfig, TrainedBaseline, TrainedIcd};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("timestep {t} outside 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("patch shape mismatch: model expects {expected:?}, got {actual:?}")]
    PatchShape {
        expected: [usize; 3],
        actual: Vec<usize>,
    },
    #[error("non-finite loss {0}; training step aborted")]
    NonFiniteLoss(f64),
    #[error(transparent)]
    Nn(#[from] coroflow_nn::NnError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model magic {0:?}, expected \"COROMDL1\"")]
    BadMagic([u8; 8]),
    #[error("model header error: {0}")]
    Header(#[from] serde_json::Error),
    #[error("model holds {actual} parameter values, expected {expected}")]
    ParamCount { expected: usize, actual: usize },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}
