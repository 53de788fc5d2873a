//! Volume rasterization and centerline export.
//!
//! The tree is painted into a centered LPS voxel grid: voxels inside the
//! local radius get the lumen intensity, a one-voxel falloff shell blends to
//! background, and clamped Gaussian noise (±3σ) is added on top. The
//! centerline comes back as `PolyData` carrying the analytic pressures in
//! the `pressure_ave_mmhg` scalar array.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use super::{dist, poiseuille_pressure, ArteryTree, SynthConfig, SynthError};
use crate::geom::{Frame, VolumeGrid, WorldPoint};
use crate::io::vtp::PolyData;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone)]
pub struct RasterOutput {
    pub grid: VolumeGrid,
    /// f64 intensities, i-fastest.
    pub intensities: Vec<f64>,
    /// Centerline vertices with pressures; junction vertices are emitted
    /// once (each child polyline reuses its parent's end point).
    pub cloud: PolyData,
}

/// Rasterizes `tree` into a volume and emits the pressure-tagged centerline.
pub fn rasterize(
    tree: &ArteryTree,
    config: &SynthConfig,
    seed: u64,
) -> Result<RasterOutput, SynthError> {
    config.validate()?;
    tree.validate()?;

    let half = config.world_half_extent();
    let origin = [-half[0], -half[1], -half[2]];
    let grid = VolumeGrid::new(origin, config.spacing, config.dims, Frame::Lps)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;

    let [nx, ny, nz] = config.dims;
    let mut intensities = vec![config.background_intensity; nx * ny * nz];

    let shell = config.max_spacing();
    let min_spacing = config.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let paint_step = 0.5 * min_spacing;

    for (si, seg) in tree.segments.iter().enumerate() {
        for w in 0..seg.points.len() - 1 {
            let a = seg.points[w];
            let b = seg.points[w + 1];
            let ra = seg.radii[w];
            let rb = seg.radii[w + 1];
            let len = dist(a, b);
            let steps = ((len / paint_step).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let c = [
                    a[0] + (b[0] - a[0]) * t,
                    a[1] + (b[1] - a[1]) * t,
                    a[2] + (b[2] - a[2]) * t,
                ];
                let r = ra + (rb - ra) * t;
                paint_ball(&mut intensities, &grid, config, si, c, r, shell)?;
            }
        }
    }

    if config.noise_sigma > 0.0 {
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        let amp = 3.0 * config.noise_sigma;
        for v in intensities.iter_mut() {
            *v += normal.sample(&mut rng).clamp(-amp, amp);
        }
    }

    let cloud = centerline_cloud(tree, config)?;
    Ok(RasterOutput {
        grid,
        intensities,
        cloud,
    })
}

fn paint_ball(
    intensities: &mut [f64],
    grid: &VolumeGrid,
    config: &SynthConfig,
    segment: usize,
    center: [f64; 3],
    radius: f64,
    shell: f64,
) -> Result<(), SynthError> {
    let [nx, ny, nz] = grid.dims;
    let lo = grid.origin;
    let hi = [
        lo[0] + (nx - 1) as f64 * grid.spacing[0],
        lo[1] + (ny - 1) as f64 * grid.spacing[1],
        lo[2] + (nz - 1) as f64 * grid.spacing[2],
    ];
    for a in 0..3 {
        if center[a] - radius < lo[a] || center[a] + radius > hi[a] {
            return Err(SynthError::TreeOutOfBounds(format!(
                "segment {segment}: lumen at {center:?} (r = {radius:.2} mm) leaves the volume"
            )));
        }
    }

    let reach = radius + shell;
    let vmin = |a: usize| {
        (((center[a] - reach) - lo[a]) / grid.spacing[a])
            .floor()
            .max(0.0) as usize
    };
    let vmax = |a: usize| {
        ((((center[a] + reach) - lo[a]) / grid.spacing[a]).ceil() as usize).min(grid.dims[a] - 1)
    };
    let (i0, i1) = (vmin(0), vmax(0));
    let (j0, j1) = (vmin(1), vmax(1));
    let (k0, k1) = (vmin(2), vmax(2));

    for k in k0..=k1 {
        let z = lo[2] + k as f64 * grid.spacing[2];
        for j in j0..=j1 {
            let y = lo[1] + j as f64 * grid.spacing[1];
            for i in i0..=i1 {
                let x = lo[0] + i as f64 * grid.spacing[0];
                let d = dist([x, y, z], center);
                if d > reach {
                    continue;
                }
                let value = if d <= radius {
                    config.lumen_intensity
                } else {
                    let t = (d - radius) / shell;
                    config.lumen_intensity
                        + (config.background_intensity - config.lumen_intensity) * t
                };
                let idx = grid.linear_index(i, j, k);
                if value > intensities[idx] {
                    intensities[idx] = value;
                }
            }
        }
    }

    // The voxel containing the centerline point always reads as lumen, even
    // when the local radius is below the voxel half-diagonal.
    let ci = ((center[0] - lo[0]) / grid.spacing[0]).round() as usize;
    let cj = ((center[1] - lo[1]) / grid.spacing[1]).round() as usize;
    let ck = ((center[2] - lo[2]) / grid.spacing[2]).round() as usize;
    let idx = grid.linear_index(ci.min(nx - 1), cj.min(ny - 1), ck.min(nz - 1));
    if config.lumen_intensity > intensities[idx] {
        intensities[idx] = config.lumen_intensity;
    }
    Ok(())
}

/// Flattens the tree into one point cloud with pressures and polyline
/// connectivity; each child reuses its parent's end vertex.
fn centerline_cloud(tree: &ArteryTree, config: &SynthConfig) -> Result<PolyData, SynthError> {
    let pressures = poiseuille_pressure(tree, config)?;

    let mut points: Vec<WorldPoint> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut polylines: Vec<Vec<usize>> = Vec::new();
    // Global index of each segment's last vertex, for junction reuse.
    let mut end_index: Vec<usize> = vec![0; tree.segments.len()];

    for (si, seg) in tree.segments.iter().enumerate() {
        let mut line = Vec::with_capacity(seg.points.len());
        let start_vertex = match seg.parent {
            None => 0,
            Some(p) => {
                line.push(end_index[p]);
                1
            }
        };
        for (v, p) in seg.points.iter().enumerate().skip(start_vertex) {
            line.push(points.len());
            points.push(WorldPoint::lps(p[0], p[1], p[2]));
            values.push(pressures[si][v]);
        }
        end_index[si] = *line.last().unwrap();
        polylines.push(line);
    }

    Ok(PolyData {
        points,
        point_scalars: vec![("pressure_ave_mmhg".to_string(), values)],
        polylines,
    })
}

/// Writes `PolyData` as inline-ASCII VTP, the encoding the reader accepts.
pub fn write_vtp_ascii(path: &Path, pd: &PolyData) -> Result<(), SynthError> {
    let mut out = String::new();
    let n = pd.points.len();
    let conn_len: usize = pd.polylines.iter().map(Vec::len).sum();
    out.push_str("<?xml version=\"1.0\"?>\n");
    out.push_str("<VTKFile type=\"PolyData\" version=\"0.1\" byte_order=\"LittleEndian\">\n");
    out.push_str("  <PolyData>\n");
    let _ = writeln!(
        out,
        "    <Piece NumberOfPoints=\"{n}\" NumberOfVerts=\"0\" NumberOfLines=\"{}\" NumberOfStrips=\"0\" NumberOfPolys=\"0\">",
        pd.polylines.len()
    );
    out.push_str("      <Points>\n");
    out.push_str(
        "        <DataArray type=\"Float64\" NumberOfComponents=\"3\" format=\"ascii\">\n",
    );
    for p in &pd.points {
        let _ = writeln!(out, "          {} {} {}", p.x, p.y, p.z);
    }
    out.push_str("        </DataArray>\n      </Points>\n");
    out.push_str("      <PointData>\n");
    for (name, vals) in &pd.point_scalars {
        let _ = writeln!(
            out,
            "        <DataArray type=\"Float64\" Name=\"{name}\" format=\"ascii\">"
        );
        for v in vals {
            let _ = writeln!(out, "          {v}");
        }
        out.push_str("        </DataArray>\n");
    }
    out.push_str("      </PointData>\n");
    if !pd.polylines.is_empty() {
        out.push_str("      <Lines>\n");
        out.push_str(
            "        <DataArray type=\"Int64\" Name=\"connectivity\" format=\"ascii\">\n          ",
        );
        for line in &pd.polylines {
            for idx in line {
                let _ = write!(out, "{idx} ");
            }
        }
        out.push_str("\n        </DataArray>\n");
        out.push_str(
            "        <DataArray type=\"Int64\" Name=\"offsets\" format=\"ascii\">\n          ",
        );
        let mut off = 0usize;
        for line in &pd.polylines {
            off += line.len();
            let _ = write!(out, "{off} ");
        }
        out.push_str("\n        </DataArray>\n      </Lines>\n");
        debug_assert_eq!(off, conn_len);
    }
    out.push_str("    </Piece>\n  </PolyData>\n</VTKFile>\n");
    std::fs::write(path, out.as_bytes()).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_tree;

    fn noiseless() -> SynthConfig {
        SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        }
    }

    /// Distance from a point to a polyline edge set.
    fn dist_to_tree(p: [f64; 3], tree: &ArteryTree) -> f64 {
        let mut best = f64::INFINITY;
        for seg in &tree.segments {
            for w in seg.points.windows(2) {
                let (a, b) = (w[0], w[1]);
                let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
                let denom = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
                let t = if denom == 0.0 {
                    0.0
                } else {
                    ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / denom).clamp(0.0, 1.0)
                };
                let q = [a[0] + ab[0] * t, a[1] + ab[1] * t, a[2] + ab[2] * t];
                best = best.min(dist(p, q));
            }
        }
        best
    }

    #[test]
    fn far_voxels_keep_background_intensity() {
        let config = noiseless();
        let tree = generate_tree(&config, 2).unwrap();
        let out = rasterize(&tree, &config, 2).unwrap();
        let max_r = tree
            .segments
            .iter()
            .flat_map(|s| s.radii.iter())
            .cloned()
            .fold(0.0, f64::max);
        let cutoff = max_r + 2.0 * config.max_spacing();

        let mut checked = 0;
        for k in (0..config.dims[2]).step_by(7) {
            for j in (0..config.dims[1]).step_by(7) {
                for i in (0..config.dims[0]).step_by(7) {
                    let p = [
                        out.grid.origin[0] + i as f64 * out.grid.spacing[0],
                        out.grid.origin[1] + j as f64 * out.grid.spacing[1],
                        out.grid.origin[2] + k as f64 * out.grid.spacing[2],
                    ];
                    if dist_to_tree(p, &tree) > cutoff {
                        let v = out.intensities[out.grid.linear_index(i, j, k)];
                        assert_eq!(v, config.background_intensity);
                        checked += 1;
                    }
                }
            }
        }
        assert!(
            checked > 100,
            "support check needs far voxels, got {checked}"
        );
    }

    #[test]
    fn centerline_vertex_voxels_read_as_lumen() {
        let config = noiseless();
        let tree = generate_tree(&config, 3).unwrap();
        let out = rasterize(&tree, &config, 3).unwrap();
        for seg in &tree.segments {
            for p in &seg.points {
                let i = ((p[0] - out.grid.origin[0]) / out.grid.spacing[0]).round() as usize;
                let j = ((p[1] - out.grid.origin[1]) / out.grid.spacing[1]).round() as usize;
                let k = ((p[2] - out.grid.origin[2]) / out.grid.spacing[2]).round() as usize;
                let v = out.intensities[out.grid.linear_index(i, j, k)];
                assert_eq!(v, config.lumen_intensity);
            }
        }
    }

    #[test]
    fn noise_respects_amplitude_bound() {
        let config = SynthConfig {
            noise_sigma: 10.0,
            ..SynthConfig::default()
        };
        let tree = generate_tree(&config, 4).unwrap();
        let out = rasterize(&tree, &config, 4).unwrap();
        let amp = 3.0 * config.noise_sigma;
        for seg in &tree.segments {
            for p in &seg.points {
                let i = ((p[0] - out.grid.origin[0]) / out.grid.spacing[0]).round() as usize;
                let j = ((p[1] - out.grid.origin[1]) / out.grid.spacing[1]).round() as usize;
                let k = ((p[2] - out.grid.origin[2]) / out.grid.spacing[2]).round() as usize;
                let v = out.intensities[out.grid.linear_index(i, j, k)];
                assert!(v >= config.lumen_intensity - amp);
            }
        }
    }

    #[test]
    fn zero_noise_is_seed_independent() {
        let config = noiseless();
        let tree = generate_tree(&config, 5).unwrap();
        let a = rasterize(&tree, &config, 1).unwrap();
        let b = rasterize(&tree, &config, 999).unwrap();
        assert_eq!(a.intensities, b.intensities);
    }

    #[test]
    fn noisy_rasterization_is_deterministic_in_seed() {
        let config = SynthConfig {
            noise_sigma: 8.0,
            ..SynthConfig::default()
        };
        let tree = generate_tree(&config, 6).unwrap();
        let a = rasterize(&tree, &config, 77).unwrap();
        let b = rasterize(&tree, &config, 77).unwrap();
        assert_eq!(a.intensities, b.intensities);
        let c = rasterize(&tree, &config, 78).unwrap();
        assert_ne!(a.intensities, c.intensities);
    }

    #[test]
    fn out_of_bounds_tree_is_rejected() {
        let config = noiseless();
        let half = config.world_half_extent();
        let tree = ArteryTree {
            segments: vec![crate::synth::ArterySegment {
                parent: None,
                points: vec![[0.0, 0.0, 0.0], [half[0] + 5.0, 0.0, 0.0]],
                radii: vec![1.0, 1.0],
                flow_mm3_s: 100.0,
                stenosis: None,
            }],
        };
        assert!(matches!(
            rasterize(&tree, &config, 0),
            Err(SynthError::TreeOutOfBounds(_))
        ));
    }

    #[test]
    fn cloud_has_deduplicated_junctions_and_inlet_pressure() {
        let config = noiseless();
        let tree = generate_tree(&config, 7).unwrap();
        let out = rasterize(&tree, &config, 7).unwrap();
        let total_vertices: usize = tree.segments.iter().map(|s| s.points.len()).sum();
        let expected = total_vertices - (tree.segments.len() - 1);
        assert_eq!(out.cloud.points.len(), expected);
        let pressure = out.cloud.pressure().unwrap();
        assert_eq!(pressure.len(), expected);
        assert_eq!(pressure[0], config.inlet_pressure_mmhg);
        assert_eq!(out.cloud.polylines.len(), tree.segments.len());
    }

    #[test]
    fn vtp_export_round_trips_through_the_parser() {
        let config = noiseless();
        let tree = generate_tree(&config, 8).unwrap();
        let out = rasterize(&tree, &config, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("centerline.vtp");
        write_vtp_ascii(&path, &out.cloud).unwrap();
        let parsed = crate::io::vtp::read_vtp_ascii(&path).unwrap();
        assert_eq!(parsed.points.len(), out.cloud.points.len());
        for (a, b) in parsed.points.iter().zip(&out.cloud.points) {
            assert_eq!((a.x, a.y, a.z), (b.x, b.y, b.z));
        }
        assert_eq!(parsed.pressure().unwrap(), out.cloud.pressure().unwrap());
        assert_eq!(parsed.polylines, out.cloud.polylines);
    }
}
