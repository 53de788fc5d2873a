//! Coordinate frames and world ↔ voxel mappings.
//!
//! Everything downstream of ingestion works in Left-Posterior-Superior (LPS)
//! millimetres. RAS data is converted at the boundary by negating the first
//! two world axes:
//!
//! ```text
//! (x, y, z)_RAS  →  (−x, −y, z)_LPS
//! ```
//!
//! A [`VolumeGrid`] maps continuous voxel indices to world coordinates by
//!
//! ```text
//! world = origin + index ⊙ spacing        index = (world − origin) ⊘ spacing
//! ```
//!
//! Spacing components are signed: aligning a RAS grid to LPS negates the x
//! and y spacing together with the origin, so the same array index keeps
//! addressing the same physical sample and no re-indexing of the intensity
//! array is needed. Freshly ingested or synthesized grids always carry
//! positive spacing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Anatomical frame tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Right-Anterior-Superior.
    Ras,
    /// Left-Posterior-Superior.
    Lps,
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Frame::Ras => write!(f, "RAS"),
            Frame::Lps => write!(f, "LPS"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("frame mismatch: expected {expected}, got {actual}")]
    FrameMismatch { expected: Frame, actual: Frame },
    #[error("non-finite coordinate ({0}, {1}, {2})")]
    NonFinite(f64, f64, f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A point in world millimetres, tagged with its anatomical frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub frame: Frame,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64, frame: Frame) -> Result<Self, GeomError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeomError::NonFinite(x, y, z));
        }
        Ok(Self { x, y, z, frame })
    }

    pub fn lps(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            frame: Frame::Lps,
        }
    }

    pub fn ras(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            frame: Frame::Ras,
        }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Euclidean distance, ignoring frame tags.
    pub fn distance(&self, other: &WorldPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Continuous voxel index (i, j, k). Rounding to integer lattice indices
/// happens only at patch extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelCoord {
    pub i: f64,
    pub j: f64,
    pub k: f64,
}

impl VoxelCoord {
    pub fn new(i: f64, j: f64, k: f64) -> Self {
        Self { i, j, k }
    }

    /// Nearest integer lattice index per axis (round half away from zero).
    pub fn round(&self) -> [i64; 3] {
        [
            self.i.round() as i64,
            self.j.round() as i64,
            self.k.round() as i64,
        ]
    }
}

/// An axis-aligned oriented voxel lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    /// World coordinates of voxel (0, 0, 0), in `frame` millimetres.
    pub origin: [f64; 3],
    /// Signed mm per voxel step along each index axis; never zero.
    pub spacing: [f64; 3],
    /// Voxel counts per axis, each ≥ 1.
    pub dims: [usize; 3],
    pub frame: Frame,
}

impl VolumeGrid {
    /// Builds a grid with strictly positive spacing, the form produced by
    /// ingestion and synthesis.
    pub fn new(
        origin: [f64; 3],
        spacing: [f64; 3],
        dims: [usize; 3],
        frame: Frame,
    ) -> Result<Self, GeomError> {
        if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(GeomError::InvalidGrid(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        Self::new_signed(origin, spacing, dims, frame)
    }

    /// Builds a grid allowing signed spacing (used by LPS alignment).
    pub fn new_signed(
        origin: [f64; 3],
        spacing: [f64; 3],
        dims: [usize; 3],
        frame: Frame,
    ) -> Result<Self, GeomError> {
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidGrid(format!(
                "non-finite origin {origin:?}"
            )));
        }
        if spacing.iter().any(|&s| !s.is_finite() || s == 0.0) {
            return Err(GeomError::InvalidGrid(format!(
                "spacing must be finite and non-zero, got {spacing:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(GeomError::InvalidGrid(format!(
                "dims must be >= 1, got {dims:?}"
            )));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
            frame,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Linear index into an i-fastest intensity array.
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }
}

/// Flips a RAS point into LPS by negating x and y.
pub fn ras_to_lps(p: WorldPoint) -> Result<WorldPoint, GeomError> {
    if p.frame != Frame::Ras {
        return Err(GeomError::FrameMismatch {
            expected: Frame::Ras,
            actual: p.frame,
        });
    }
    Ok(WorldPoint {
        x: -p.x,
        y: -p.y,
        z: p.z,
        frame: Frame::Lps,
    })
}

/// Flip ignoring the tag; `f ∘ f` is the identity on coordinates.
pub fn flip_ras_lps_coords(c: [f64; 3]) -> [f64; 3] {
    [-c[0], -c[1], c[2]]
}

/// Re-expresses a RAS grid in LPS such that for every voxel `v`,
/// `voxel_to_world(g', v) = ras_to_lps(voxel_to_world(g, v))`.
///
/// Negating the x/y origin and spacing realizes the 180° rotation about the
/// superior axis in one step; the intensity array is untouched. Grids already
/// tagged LPS pass through unchanged.
pub fn align_volume_lps(g: &VolumeGrid) -> VolumeGrid {
    match g.frame {
        Frame::Lps => g.clone(),
        Frame::Ras => VolumeGrid {
            origin: [-g.origin[0], -g.origin[1], g.origin[2]],
            spacing: [-g.spacing[0], -g.spacing[1], g.spacing[2]],
            dims: g.dims,
            frame: Frame::Lps,
        },
    }
}

/// Continuous voxel index of `p` under `g`: componentwise `(p − origin) / spacing`.
pub fn world_to_voxel(g: &VolumeGrid, p: &WorldPoint) -> Result<VoxelCoord, GeomError> {
    if p.frame != g.frame {
        return Err(GeomError::FrameMismatch {
            expected: g.frame,
            actual: p.frame,
        });
    }
    Ok(VoxelCoord {
        i: (p.x - g.origin[0]) / g.spacing[0],
        j: (p.y - g.origin[1]) / g.spacing[1],
        k: (p.z - g.origin[2]) / g.spacing[2],
    })
}

/// World position of voxel index `v` under `g`: `origin + v ⊙ spacing`.
pub fn voxel_to_world(g: &VolumeGrid, v: &VoxelCoord) -> WorldPoint {
    WorldPoint {
        x: g.origin[0] + v.i * g.spacing[0],
        y: g.origin[1] + v.j * g.spacing[1],
        z: g.origin[2] + v.k * g.spacing[2],
        frame: g.frame,
    }
}

/// Bounding-box center: `origin + (spacing ⊙ dims) / 2`.
pub fn volume_center(g: &VolumeGrid) -> WorldPoint {
    WorldPoint {
        x: g.origin[0] + g.spacing[0] * g.dims[0] as f64 / 2.0,
        y: g.origin[1] + g.spacing[1] * g.dims[1] as f64 / 2.0,
        z: g.origin[2] + g.spacing[2] * g.dims[2] as f64 / 2.0,
        frame: g.frame,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ras_to_lps_flips_first_two_axes() {
        let p = ras_to_lps(WorldPoint::ras(10.0, -20.0, 30.0)).unwrap();
        assert_eq!((p.x, p.y, p.z), (-10.0, 20.0, 30.0));
        assert_eq!(p.frame, Frame::Lps);
    }

    #[test]
    fn ras_to_lps_zero_xy_fixed_point() {
        let p = ras_to_lps(WorldPoint::ras(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((p.x, p.y, p.z), (0.0, 0.0, 5.0));
    }

    #[test]
    fn ras_to_lps_rejects_lps_input() {
        let err = ras_to_lps(WorldPoint::lps(1.0, 2.0, 3.0)).unwrap_err();
        assert!(matches!(err, GeomError::FrameMismatch { .. }));
    }

    #[test]
    fn flip_is_involution() {
        let c = [3.5, -7.25, 11.0];
        assert_eq!(flip_ras_lps_coords(flip_ras_lps_coords(c)), c);
    }

    #[test]
    fn align_defining_property_on_given_grid() {
        let g = VolumeGrid::new(
            [-100.0, -100.0, -50.0],
            [0.5, 0.5, 0.5],
            [4, 4, 4],
            Frame::Ras,
        )
        .unwrap();
        let ga = align_volume_lps(&g);
        assert_eq!(ga.frame, Frame::Lps);

        let v = VoxelCoord::new(3.0, 3.0, 0.0);
        let w = voxel_to_world(&g, &v);
        assert_eq!((w.x, w.y, w.z), (-98.5, -98.5, -50.0));
        let wa = voxel_to_world(&ga, &v);
        assert_eq!((wa.x, wa.y, wa.z), (98.5, 98.5, -50.0));

        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    let v = VoxelCoord::new(i as f64, j as f64, k as f64);
                    let flipped = flip_ras_lps_coords(voxel_to_world(&g, &v).coords());
                    let aligned = voxel_to_world(&ga, &v).coords();
                    for a in 0..3 {
                        assert!((flipped[a] - aligned[a]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn align_is_noop_on_lps() {
        let g = VolumeGrid::new([1.0, 2.0, 3.0], [0.5, 1.0, 2.0], [2, 3, 4], Frame::Lps).unwrap();
        assert_eq!(align_volume_lps(&g), g);
    }

    #[test]
    fn world_to_voxel_given_example() {
        let g = VolumeGrid::new(
            [-100.0, -100.0, -50.0],
            [0.5, 0.5, 0.5],
            [64, 64, 64],
            Frame::Lps,
        )
        .unwrap();
        let v = world_to_voxel(&g, &WorldPoint::lps(-90.0, -95.0, -40.0)).unwrap();
        assert_eq!((v.i, v.j, v.k), (20.0, 10.0, 20.0));
    }

    #[test]
    fn world_to_voxel_origin_maps_to_zero() {
        let g = VolumeGrid::new([3.0, -4.0, 5.0], [1.5, 2.0, 0.25], [8, 8, 8], Frame::Lps).unwrap();
        let v = world_to_voxel(&g, &WorldPoint::lps(3.0, -4.0, 5.0)).unwrap();
        assert_eq!((v.i, v.j, v.k), (0.0, 0.0, 0.0));
    }

    #[test]
    fn world_to_voxel_frame_mismatch() {
        let g = VolumeGrid::new([0.0; 3], [1.0; 3], [2, 2, 2], Frame::Lps).unwrap();
        assert!(world_to_voxel(&g, &WorldPoint::ras(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn voxel_to_world_examples() {
        let g = VolumeGrid::new([0.0; 3], [2.0; 3], [32, 32, 32], Frame::Lps).unwrap();
        let w = voxel_to_world(&g, &VoxelCoord::new(5.0, 10.0, 15.0));
        assert_eq!((w.x, w.y, w.z), (10.0, 20.0, 30.0));
        let o = voxel_to_world(&g, &VoxelCoord::new(0.0, 0.0, 0.0));
        assert_eq!(o.coords(), g.origin);
    }

    #[test]
    fn volume_center_examples() {
        let g = VolumeGrid::new([0.0; 3], [1.0; 3], [10, 10, 10], Frame::Lps).unwrap();
        assert_eq!(volume_center(&g).coords(), [5.0, 5.0, 5.0]);

        let g = VolumeGrid::new([0.0; 3], [2.0; 3], [1, 1, 1], Frame::Lps).unwrap();
        assert_eq!(volume_center(&g).coords(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn volume_center_translation_equivariant() {
        let g = VolumeGrid::new([1.0, -2.0, 3.0], [0.7, 0.9, 1.3], [5, 7, 9], Frame::Lps).unwrap();
        let t = [10.0, -20.0, 5.5];
        let mut gt = g.clone();
        for (o, delta) in gt.origin.iter_mut().zip(t) {
            *o += delta;
        }
        let c = volume_center(&g).coords();
        let ct = volume_center(&gt).coords();
        for a in 0..3 {
            assert!((ct[a] - (c[a] + t[a])).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(VolumeGrid::new([0.0; 3], [0.0, 1.0, 1.0], [2, 2, 2], Frame::Lps).is_err());
        assert!(VolumeGrid::new([0.0; 3], [-1.0, 1.0, 1.0], [2, 2, 2], Frame::Lps).is_err());
        assert!(VolumeGrid::new([0.0; 3], [1.0; 3], [0, 2, 2], Frame::Lps).is_err());
        assert!(VolumeGrid::new_signed([0.0; 3], [-1.0, 1.0, 1.0], [2, 2, 2], Frame::Lps).is_ok());
    }

    proptest! {
        #[test]
        fn world_voxel_round_trip(
            ox in -500.0..500.0f64, oy in -500.0..500.0f64, oz in -500.0..500.0f64,
            sx in 0.1..5.0f64, sy in 0.1..5.0f64, sz in 0.1..5.0f64,
            px in -400.0..400.0f64, py in -400.0..400.0f64, pz in -400.0..400.0f64,
        ) {
            let g = VolumeGrid::new([ox, oy, oz], [sx, sy, sz], [16, 16, 16], Frame::Lps).unwrap();
            let p = WorldPoint::lps(px, py, pz);
            let v = world_to_voxel(&g, &p).unwrap();
            let q = voxel_to_world(&g, &v);
            prop_assert!(p.distance(&q) < 1e-9);
        }

        #[test]
        fn align_defining_property_random_grids(
            ox in -200.0..200.0f64, oy in -200.0..200.0f64, oz in -200.0..200.0f64,
            sx in 0.2..3.0f64, sy in 0.2..3.0f64, sz in 0.2..3.0f64,
            dx in 1usize..5, dy in 1usize..5, dz in 1usize..5,
        ) {
            let g = VolumeGrid::new([ox, oy, oz], [sx, sy, sz], [dx, dy, dz], Frame::Ras).unwrap();
            let ga = align_volume_lps(&g);
            for k in 0..dz {
                for j in 0..dy {
                    for i in 0..dx {
                        let v = VoxelCoord::new(i as f64, j as f64, k as f64);
                        let flipped = flip_ras_lps_coords(voxel_to_world(&g, &v).coords());
                        let aligned = voxel_to_world(&ga, &v).coords();
                        for a in 0..3 {
                            prop_assert!((flipped[a] - aligned[a]).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }
}
