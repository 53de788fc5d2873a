//! Synthetic coronary cases: procedurally grown artery trees, analytic
//! Hagen–Poiseuille pressure fields, and rasterized contrast volumes.
//!
//! Pressure follows steady laminar pipe flow. Along a segment of local
//! radius r(s) carrying volumetric flow Q, the pressure gradient is
//!
//! ```text
//! dP/ds = 8 μ Q / (π r(s)⁴)
//! ```
//!
//! integrated with the trapezoid rule over the polyline (exact for
//! piecewise-constant radii). Geometry is LPS millimetres, flow mm³/s,
//! pressure mmHg with 1 mmHg = 133.322 Pa.

mod flow;
mod raster;
mod tree;

pub use flow::{poiseuille_pressure, segment_drop_pa};
pub use raster::{rasterize, write_vtp_ascii, RasterOutput};
pub use tree::{apply_stenosis, generate_tree};

use thiserror::Error;

/// Pascals per mmHg.
pub const MMHG_PA: f64 = 133.322;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-positive radius {radius} in segment {segment}")]
    NonPositiveRadius { segment: usize, radius: f64 },
    #[error("tree exceeds volume bounds: {0}")]
    TreeOutOfBounds(String),
    #[error("invalid stenosis: {0}")]
    InvalidStenosis(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A focal narrowing of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StenosisSpec {
    pub segment: usize,
    /// Center position as an arclength fraction of the segment, in (0, 1).
    pub center_frac: f64,
    pub length_mm: f64,
    /// Fractional radius reduction at the stenosis center, in [0, 1).
    pub severity: f64,
}

/// One artery segment: a polyline with a per-vertex radius profile and the
/// volumetric flow it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct ArterySegment {
    pub parent: Option<usize>,
    /// LPS millimetres; the first vertex of a child coincides with its
    /// parent's last vertex.
    pub points: Vec<[f64; 3]>,
    /// mm, one per vertex, all > 0.
    pub radii: Vec<f64>,
    /// mm³/s.
    pub flow_mm3_s: f64,
    pub stenosis: Option<StenosisSpec>,
}

impl ArterySegment {
    pub fn length_mm(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

/// A rooted artery tree; segment 0 is the inlet.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArteryTree {
    pub segments: Vec<ArterySegment>,
}

impl ArteryTree {
    pub fn children_of(&self, idx: usize) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.parent == Some(idx))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.segments.len())
            .filter(|&i| self.children_of(i).is_empty())
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (i, s) in self.segments.iter().enumerate() {
            if let Some(&r) = s.radii.iter().find(|r| !r.is_finite() || **r <= 0.0) {
                return Err(SynthError::NonPositiveRadius {
                    segment: i,
                    radius: r,
                });
            }
            if s.points.len() != s.radii.len() || s.points.len() < 2 {
                return Err(SynthError::InvalidConfig(format!(
                    "segment {i} has {} points and {} radii",
                    s.points.len(),
                    s.radii.len()
                )));
            }
        }
        Ok(())
    }
}

/// Generator parameters; `Default` gives the desk-scale configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub cases: usize,
    pub dims: [usize; 3],
    /// mm per voxel, positive.
    pub spacing: [f64; 3],
    pub inlet_pressure_mmhg: f64,
    /// Blood dynamic viscosity, Pa·s.
    pub viscosity_pa_s: f64,
    /// Nominal inlet flow; per-case flows are jittered around it.
    pub inlet_flow_mm3_s: f64,
    /// Bifurcation levels below the root segment.
    pub depth: usize,
    pub root_radius_mm: f64,
    /// Centerline vertex spacing; one training sample per vertex.
    pub sample_step_mm: f64,
    pub lumen_intensity: f64,
    pub background_intensity: f64,
    /// Gaussian noise sigma added to the rasterized volume; draws are
    /// clamped to ±3σ so the noise amplitude is 3σ. Zero disables noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cases: 10,
            dims: [96, 96, 96],
            spacing: [0.5, 0.5, 0.5],
            inlet_pressure_mmhg: 100.0,
            viscosity_pa_s: 0.0035,
            inlet_flow_mm3_s: 3000.0,
            depth: 3,
            root_radius_mm: 1.5,
            sample_step_mm: 1.5,
            lumen_intensity: 400.0,
            background_intensity: 0.0,
            noise_sigma: 12.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            ("inlet_pressure_mmhg", self.inlet_pressure_mmhg),
            ("viscosity_pa_s", self.viscosity_pa_s),
            ("inlet_flow_mm3_s", self.inlet_flow_mm3_s),
            ("root_radius_mm", self.root_radius_mm),
            ("sample_step_mm", self.sample_step_mm),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(SynthError::InvalidConfig(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(SynthError::InvalidConfig(format!(
                "spacing must be > 0, got {:?}",
                self.spacing
            )));
        }
        if self.dims.iter().any(|&d| d < 8) {
            return Err(SynthError::InvalidConfig(format!(
                "dims must be at least 8 voxels per axis, got {:?}",
                self.dims
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(SynthError::InvalidConfig(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// World extent spanned by voxel centers, centered on the origin.
    pub fn world_half_extent(&self) -> [f64; 3] {
        [
            self.spacing[0] * (self.dims[0] - 1) as f64 / 2.0,
            self.spacing[1] * (self.dims[1] - 1) as f64 / 2.0,
            self.spacing[2] * (self.dims[2] - 1) as f64 / 2.0,
        ]
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
