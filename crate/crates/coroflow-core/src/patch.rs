//! Patch extraction, pressure labelling, and dataset assembly.
//!
//! Each centerline point becomes one training sample: a voxel patch cut
//! from the volume around the point, the point's world and local (voxel)
//! coordinates, and the mean pressure of cloud points within ε (default
//! 5 mm). Patches are windowed per volume from the [p1, p99] intensity
//! percentiles to [0, 1]; labels are z-scored with statistics fitted on the
//! training split only.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::geom::{world_to_voxel, Frame, GeomError, VolumeGrid, WorldPoint};
use crate::io::dataset::{CaseEntry, DatasetManifest, Split, FORMAT_VERSION};
use crate::io::vtp::PolyData;
use crate::seed::{derive_seed, rng_from_seed};

/// One training unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub case_id: String,
    /// Point index within the case.
    pub index: usize,
    /// LPS millimetres.
    pub world: [f64; 3],
    /// Continuous voxel coordinates under the case grid.
    pub local: [f64; 3],
    pub pressure_mmhg: f64,
    /// Windowed intensities, k-major (k outer, then j, then i).
    pub patch: Vec<f32>,
}

/// Pressure-averaging ball radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSpec {
    pub epsilon_mm: f64,
}

impl Default for LabelSpec {
    fn default() -> Self {
        Self { epsilon_mm: 5.0 }
    }
}

/// Label z-score statistics (training split only).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

pub fn apply_norm(label: f64, stats: &NormStats) -> f64 {
    (label - stats.mean) / stats.std
}

pub fn invert_norm(y: f64, stats: &NormStats) -> f64 {
    y * stats.std + stats.mean
}

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("grid for case '{0}' is not in LPS; align it first")]
    FrameNotLps(String),
    #[error("pressure cloud is empty")]
    EmptyCloud,
    #[error("pressure cloud for case '{0}' has no pressure scalar array")]
    MissingPressureArray(String),
    #[error("epsilon must be > 0, got {0}")]
    BadEpsilon(f64),
    #[error("duplicate case id '{0}'")]
    DuplicateCase(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("training split is empty; cannot fit label statistics")]
    NoTrainCases,
    #[error("training labels are constant ({0} mmHg); cannot normalize")]
    ConstantTrainLabels(f64),
    #[error("intensity array has {actual} values, grid needs {expected}")]
    IntensityLength { expected: usize, actual: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Result of one patch extraction.
#[derive(Debug, Clone)]
pub struct PatchExtract {
    /// Raw intensities, k-major, zero-filled outside the volume.
    pub values: Vec<f64>,
    /// False when the patch window missed the volume entirely.
    pub in_bounds: bool,
}

/// Cuts a `shape = [d, h, w]` patch centered on the voxel nearest to `p`.
///
/// Axis extents follow the coordinate convention: `w` along i (x), `h`
/// along j (y), `d` along k (z). Even extents take `floor(extent/2)` voxels
/// below the center and the remainder above. Out-of-bounds voxels are zero.
pub fn extract_patch(
    grid: &VolumeGrid,
    intensities: &[f64],
    p: &WorldPoint,
    shape: [usize; 3],
) -> Result<PatchExtract, PatchError> {
    if intensities.len() != grid.voxel_count() {
        return Err(PatchError::IntensityLength {
            expected: grid.voxel_count(),
            actual: intensities.len(),
        });
    }
    let center = world_to_voxel(grid, p)?.round();
    let [d, h, w] = shape;
    let lo = [
        center[0] - (w as i64) / 2,
        center[1] - (h as i64) / 2,
        center[2] - (d as i64) / 2,
    ];
    let mut values = vec![0.0; d * h * w];
    let mut in_bounds = false;
    let [nx, ny, nz] = grid.dims.map(|v| v as i64);
    let mut out = 0usize;
    for dk in 0..d as i64 {
        let k = lo[2] + dk;
        for dj in 0..h as i64 {
            let j = lo[1] + dj;
            for di in 0..w as i64 {
                let i = lo[0] + di;
                if i >= 0 && i < nx && j >= 0 && j < ny && k >= 0 && k < nz {
                    values[out] =
                        intensities[grid.linear_index(i as usize, j as usize, k as usize)];
                    in_bounds = true;
                }
                out += 1;
            }
        }
    }
    Ok(PatchExtract { values, in_bounds })
}

/// Labelling outcome; `fallback_distance` is set when no cloud point fell
/// inside ε and the nearest point was used instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelResult {
    pub pressure_mmhg: f64,
    pub fallback_distance: Option<f64>,
}

/// Mean pressure over cloud points within ε of `p`; nearest point when the
/// ball is empty.
pub fn label_pressure(
    p: &WorldPoint,
    cloud: &PolyData,
    pressures: &[f64],
    spec: &LabelSpec,
) -> Result<LabelResult, PatchError> {
    if cloud.points.is_empty() {
        return Err(PatchError::EmptyCloud);
    }
    if !spec.epsilon_mm.is_finite() || spec.epsilon_mm <= 0.0 {
        return Err(PatchError::BadEpsilon(spec.epsilon_mm));
    }
    debug_assert_eq!(cloud.points.len(), pressures.len());

    let mut sum = 0.0;
    let mut count = 0usize;
    // Nearest point with a deterministic, order-free tie-break.
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (q, &v) in cloud.points.iter().zip(pressures) {
        let d = p.distance(q);
        if d <= spec.epsilon_mm {
            sum += v;
            count += 1;
        }
        if (d, v) < best {
            best = (d, v);
        }
    }
    if count > 0 {
        Ok(LabelResult {
            pressure_mmhg: sum / count as f64,
            fallback_distance: None,
        })
    } else {
        Ok(LabelResult {
            pressure_mmhg: best.1,
            fallback_distance: Some(best.0),
        })
    }
}

/// Split fractions; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// Normalizes arbitrary non-negative weights (counts or fractions).
    pub fn from_weights(w: [f64; 3]) -> Result<Self, PatchError> {
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&v| !v.is_finite() || v < 0.0) || !sum.is_finite() || sum <= 0.0 {
            return Err(PatchError::BadRatios(w));
        }
        Ok(Self {
            train: w[0] / sum,
            val: w[1] / sum,
            test: w[2] / sum,
        })
    }

    pub fn validate(&self) -> Result<(), PatchError> {
        let w = [self.train, self.val, self.test];
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > 1e-9 {
            return Err(PatchError::BadRatios(w));
        }
        Ok(())
    }
}

const SPLIT_STREAM: u64 = 0x53504c49;

/// Case-level split assignment: seeded shuffle, then largest-remainder
/// apportionment of the three split counts.
pub fn assign_splits(
    n_cases: usize,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<Vec<Split>, PatchError> {
    ratios.validate()?;
    let fractions = [ratios.train, ratios.val, ratios.test];
    let exact: Vec<f64> = fractions.iter().map(|f| f * n_cases as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    // Hand out the remainder by descending fractional part, split order
    // breaking ties.
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut oi = 0;
    while assigned < n_cases {
        counts[order[oi % 3]] += 1;
        assigned += 1;
        oi += 1;
    }

    let mut slots: Vec<usize> = (0..n_cases).collect();
    let mut rng = rng_from_seed(derive_seed(seed, SPLIT_STREAM));
    slots.shuffle(&mut rng);

    let mut splits = vec![Split::Train; n_cases];
    for (rank, &slot) in slots.iter().enumerate() {
        splits[slot] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

/// Everything needed to build one case's samples.
#[derive(Debug, Clone)]
pub struct CaseInput {
    pub id: String,
    pub grid: VolumeGrid,
    pub intensities: Vec<f64>,
    /// Sample locations (LPS).
    pub centerline: Vec<WorldPoint>,
    /// Pressure cloud (LPS) with a pressure scalar array.
    pub cloud: PolyData,
}

/// A sample that needed the nearest-neighbor labelling fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackRecord {
    pub case_id: String,
    pub index: usize,
    pub distance_mm: f64,
}

#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
    pub fallbacks: Vec<FallbackRecord>,
    /// Cases whose patch window missed the volume for some point.
    pub empty_patches: usize,
}

/// Linear [p1, p99] percentile window of a volume, for mapping intensities
/// to [0, 1].
pub fn intensity_window(intensities: &[f64]) -> (f64, f64) {
    let mut sorted: Vec<f64> = intensities.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| {
        let idx = (q * (sorted.len() - 1) as f64).round() as usize;
        sorted[idx]
    };
    (pick(0.01), pick(0.99))
}

fn window_value(v: f64, lo: f64, hi: f64) -> f32 {
    if hi <= lo {
        return 0.0;
    }
    (((v - lo) / (hi - lo)).clamp(0.0, 1.0)) as f32
}

/// One case's extracted samples, before split assignment.
#[derive(Debug, Clone)]
pub struct CaseSamples {
    pub id: String,
    pub samples: Vec<Sample>,
    pub fallbacks: Vec<FallbackRecord>,
    pub empty_patches: usize,
}

/// Extracts every sample of one case: windowed patch, ε-ball label, and
/// the Eq.-style local voxel coordinates.
pub fn extract_case_samples(
    case: &CaseInput,
    patch_shape: [usize; 3],
    label_spec: &LabelSpec,
) -> Result<CaseSamples, PatchError> {
    if case.grid.frame != Frame::Lps {
        return Err(PatchError::FrameNotLps(case.id.clone()));
    }
    let pressures = case
        .cloud
        .pressure()
        .ok_or_else(|| PatchError::MissingPressureArray(case.id.clone()))?
        .to_vec();
    let (lo, hi) = intensity_window(&case.intensities);

    let mut samples = Vec::with_capacity(case.centerline.len());
    let mut fallbacks = Vec::new();
    let mut empty_patches = 0usize;
    for (m, p) in case.centerline.iter().enumerate() {
        let extract = extract_patch(&case.grid, &case.intensities, p, patch_shape)?;
        if !extract.in_bounds {
            empty_patches += 1;
        }
        let label = label_pressure(p, &case.cloud, &pressures, label_spec)?;
        if let Some(d) = label.fallback_distance {
            fallbacks.push(FallbackRecord {
                case_id: case.id.clone(),
                index: m,
                distance_mm: d,
            });
        }
        let local = world_to_voxel(&case.grid, p)?;
        samples.push(Sample {
            case_id: case.id.clone(),
            index: m,
            world: p.coords(),
            local: [local.i, local.j, local.k],
            pressure_mmhg: label.pressure_mmhg,
            patch: extract
                .values
                .iter()
                .map(|&v| window_value(v, lo, hi))
                .collect(),
        });
    }
    Ok(CaseSamples {
        id: case.id.clone(),
        samples,
        fallbacks,
        empty_patches,
    })
}

/// Assigns case-level splits over already-extracted cases, fits label
/// statistics on the training split, and assembles the manifest.
pub fn assemble_dataset(
    cases: Vec<CaseSamples>,
    patch_shape: [usize; 3],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<BuiltDataset, PatchError> {
    let mut seen = std::collections::HashSet::new();
    for c in &cases {
        if !seen.insert(c.id.clone()) {
            return Err(PatchError::DuplicateCase(c.id.clone()));
        }
    }
    let splits = assign_splits(cases.len(), ratios, seed)?;

    let mut samples = Vec::new();
    let mut fallbacks = Vec::new();
    let mut entries = Vec::with_capacity(cases.len());
    let mut empty_patches = 0usize;
    for (ci, case) in cases.into_iter().enumerate() {
        entries.push(CaseEntry {
            id: case.id,
            split: splits[ci],
            n_points: case.samples.len(),
        });
        samples.extend(case.samples);
        fallbacks.extend(case.fallbacks);
        empty_patches += case.empty_patches;
    }

    let stats = fit_norm_stats(&entries, &samples)?;
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        patch_shape,
        count: samples.len(),
        cases: entries,
        label_mean: stats.mean,
        label_std: stats.std,
    };
    Ok(BuiltDataset {
        manifest,
        samples,
        fallbacks,
        empty_patches,
    })
}

/// Builds the full paired dataset: one sample per centerline point,
/// case-level splits, and label statistics from the training split.
pub fn build_dataset(
    cases: &[CaseInput],
    patch_shape: [usize; 3],
    label_spec: &LabelSpec,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<BuiltDataset, PatchError> {
    let mut extracted = Vec::with_capacity(cases.len());
    for case in cases {
        extracted.push(extract_case_samples(case, patch_shape, label_spec)?);
    }
    assemble_dataset(extracted, patch_shape, ratios, seed)
}

/// Fits label mean/std (population) over samples whose case is in the
/// training split.
pub fn fit_norm_stats(entries: &[CaseEntry], samples: &[Sample]) -> Result<NormStats, PatchError> {
    let train: std::collections::HashSet<&str> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.id.as_str())
        .collect();
    if train.is_empty() {
        return Err(PatchError::NoTrainCases);
    }
    let labels: Vec<f64> = samples
        .iter()
        .filter(|s| train.contains(s.case_id.as_str()))
        .map(|s| s.pressure_mmhg)
        .collect();
    if labels.is_empty() {
        return Err(PatchError::NoTrainCases);
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let var = labels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / labels.len() as f64;
    let std = var.sqrt();
    if !std.is_finite() || std <= 0.0 {
        return Err(PatchError::ConstantTrainLabels(mean));
    }
    Ok(NormStats { mean, std })
}

/// Reassigns case splits and refits label statistics in place.
pub fn resplit(
    manifest: &mut DatasetManifest,
    samples: &[Sample],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<(), PatchError> {
    let splits = assign_splits(manifest.cases.len(), ratios, seed)?;
    for (entry, split) in manifest.cases.iter_mut().zip(splits) {
        entry.split = split;
    }
    let stats = fit_norm_stats(&manifest.cases, samples)?;
    manifest.label_mean = stats.mean;
    manifest.label_std = stats.std;
    Ok(())
}

/// Writes the nearest-neighbor fallback diagnostics CSV.
pub fn write_fallback_log(
    path: &std::path::Path,
    records: &[FallbackRecord],
) -> std::io::Result<()> {
    let mut out = String::from("case_id,index,fallback_distance_mm\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.case_id, r.index, r.distance_mm));
    }
    std::fs::write(path, out.as_bytes())
}
