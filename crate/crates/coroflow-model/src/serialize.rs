//! Model files.
//!
//! Layout: the 8 magic bytes `COROMDL1`, a compact UTF-8 JSON header
//! (model kind, architecture, label/coordinate statistics, schedule
//! parameters, value count), then every persistent tensor as little-endian
//! f32 in declaration order. The JSON object is self-delimiting; the reader
//! finds its end by brace matching. Save → load → save reproduces identical
//! bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use coroflow_core::patch::NormStats;
use coroflow_core::seed::rng_from_seed;

use crate::baseline::{BaselineConfig, BaselineModel};
use crate::icd::{CoordStats, IcdConfig, IcdModel};
use crate::schedule::NoiseSchedule;
use crate::train::{TrainedBaseline, TrainedIcd};
use crate::ModelError;

pub const MAGIC: &[u8; 8] = b"COROMDL1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "icd")]
    Icd,
    #[serde(rename = "cnn-mlp")]
    CnnMlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Icd => write!(f, "icd"),
            ModelKind::CnnMlp => write!(f, "cnn-mlp"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icd: Option<IcdConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
    pub label_norm: NormStats,
    pub coord_stats: CoordStats,
    /// Total f32 values following the header.
    pub value_count: usize,
}

pub enum StoredModel {
    Icd(TrainedIcd),
    Baseline(TrainedBaseline),
}

impl StoredModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            StoredModel::Icd(_) => ModelKind::Icd,
            StoredModel::Baseline(_) => ModelKind::CnnMlp,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn encode(
    header: &ModelHeader,
    tensors: &[&coroflow_nn::Tensor<f32>],
) -> Result<Vec<u8>, ModelError> {
    let json = serde_json::to_string(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + header.value_count * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(json.as_bytes());
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_icd(path: &Path, trained: &TrainedIcd) -> Result<(), ModelError> {
    let tensors = trained.model.state_tensors();
    let header = ModelHeader {
        kind: ModelKind::Icd,
        icd: Some(trained.model.config.clone()),
        baseline: None,
        label_norm: trained.norm,
        coord_stats: trained.coords,
        value_count: tensors.iter().map(|t| t.len()).sum(),
    };
    fs::write(path, encode(&header, &tensors)?).map_err(io_err(path))
}

pub fn save_baseline(path: &Path, trained: &TrainedBaseline) -> Result<(), ModelError> {
    let tensors = trained.model.state_tensors();
    let header = ModelHeader {
        kind: ModelKind::CnnMlp,
        icd: None,
        baseline: Some(trained.model.config.clone()),
        label_norm: trained.norm,
        coord_stats: trained.coords,
        value_count: tensors.iter().map(|t| t.len()).sum(),
    };
    fs::write(path, encode(&header, &tensors)?).map_err(io_err(path))
}

/// Index one past the closing brace of the JSON object starting at byte 0.
fn json_end(bytes: &[u8]) -> Result<usize, ModelError> {
    if bytes.first() != Some(&b'{') {
        return Err(ModelError::Corrupt("header does not start with '{'".into()));
    }
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_str {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_str = false;
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(i + 1);
                }
            }
            _ => {}
        }
    }
    Err(ModelError::Corrupt("unterminated JSON header".into()))
}

pub fn load_model(path: &Path) -> Result<StoredModel, ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 8 || &bytes[0..8] != MAGIC {
        let mut found = [0u8; 8];
        let n = bytes.len().min(8);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(ModelError::BadMagic(found));
    }
    let rest = &bytes[8..];
    let header_len = json_end(rest)?;
    let header: ModelHeader = serde_json::from_slice(&rest[..header_len])?;
    let payload = &rest[header_len..];
    if payload.len() != header.value_count * 4 {
        return Err(ModelError::ParamCount {
            expected: header.value_count,
            actual: payload.len() / 4,
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    // Parameters overwrite a freshly built skeleton; the init seed is
    // irrelevant to the loaded values.
    let mut rng = rng_from_seed(0);
    match header.kind {
        ModelKind::Icd => {
            let config = header
                .icd
                .ok_or_else(|| ModelError::Corrupt("icd header without icd config".into()))?;
            let schedule = NoiseSchedule::from_spec(&config.schedule)?;
            let mut model = IcdModel::<f32>::new(config, &mut rng)?;
            fill_tensors(model.state_tensors_mut(), &values)?;
            Ok(StoredModel::Icd(TrainedIcd {
                model,
                schedule,
                norm: header.label_norm,
                coords: header.coord_stats,
                trace: Vec::new(),
            }))
        }
        ModelKind::CnnMlp => {
            let config = header
                .baseline
                .ok_or_else(|| ModelError::Corrupt("cnn-mlp header without config".into()))?;
            let mut model = BaselineModel::<f32>::new(config, &mut rng)?;
            fill_tensors(model.state_tensors_mut(), &values)?;
            Ok(StoredModel::Baseline(TrainedBaseline {
                model,
                norm: header.label_norm,
                coords: header.coord_stats,
                trace: Vec::new(),
            }))
        }
    }
}

fn fill_tensors(
    tensors: Vec<&mut coroflow_nn::Tensor<f32>>,
    values: &[f32],
) -> Result<(), ModelError> {
    let need: usize = tensors.iter().map(|t| t.len()).sum();
    if need != values.len() {
        return Err(ModelError::ParamCount {
            expected: need,
            actual: values.len(),
        });
    }
    let mut off = 0;
    for t in tensors {
        let n = t.len();
        t.data_mut().copy_from_slice(&values[off..off + n]);
        off += n;
    }
    Ok(())
}
