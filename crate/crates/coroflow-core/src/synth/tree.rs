//! Procedural artery tree growth.
//!
//! Trees grow from a single inlet near the superior face of the volume,
//! descending with mild random curvature and bifurcating `depth` times.
//! Child radii follow Murray's law (r_child ≈ r_parent · 2^(−1/3)) with
//! jitter, and child flows split in proportion to r³ while summing to the
//! parent flow exactly. One or two focal stenoses are applied per tree.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{dist, ArterySegment, ArteryTree, StenosisSpec, SynthConfig, SynthError};
use crate::seed::rng_from_seed;

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        [0.0, 0.0, -1.0]
    } else {
        scale(a, 1.0 / n)
    }
}
fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rodrigues rotation of `v` by `angle` around unit `axis`.
fn rotate(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let term1 = scale(v, c);
    let term2 = scale(cross(axis, v), s);
    let term3 = scale(axis, dot(axis, v) * (1.0 - c));
    add(add(term1, term2), term3)
}

/// A unit vector perpendicular to `d`, rotated by a random phase.
fn random_perp(d: Vec3, rng: &mut ChaCha8Rng) -> Vec3 {
    let pick = if d[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let base = normalize(cross(d, pick));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    normalize(rotate(base, normalize(d), phase))
}

struct Grower<'a> {
    config: &'a SynthConfig,
    safe_half: Vec3,
    base_len: f64,
    radius_floor: f64,
}

impl Grower<'_> {
    /// Pulls a step direction back inside the safe box when the candidate
    /// point would leave it.
    fn steer_inside(&self, p: Vec3, dir: Vec3, step: f64) -> Vec3 {
        let mut d = dir;
        let cand = add(p, scale(dir, step));
        for ((dv, c), half) in d.iter_mut().zip(cand).zip(self.safe_half) {
            let over = c.abs() - half;
            if over > 0.0 {
                *dv -= c.signum() * (over / step + 0.5);
            }
        }
        normalize(d)
    }

    fn clamp_inside(&self, mut p: Vec3) -> Vec3 {
        for (v, half) in p.iter_mut().zip(self.safe_half) {
            *v = v.clamp(-half, half);
        }
        p
    }

    #[allow(clippy::too_many_arguments)]
    fn grow_segment(
        &self,
        tree: &mut ArteryTree,
        parent: Option<usize>,
        start: Vec3,
        dir0: Vec3,
        radius_start: f64,
        flow: f64,
        level: usize,
        rng: &mut ChaCha8Rng,
    ) {
        let length = self.base_len * 0.85f64.powi(level as i32) * rng.gen_range(0.85..1.15);
        let step = self.config.sample_step_mm;
        let n_steps = ((length / step).round() as usize).max(2);

        let taper_end = (radius_start * rng.gen_range(0.88..0.96)).max(self.radius_floor);
        let mut points = Vec::with_capacity(n_steps + 1);
        let mut radii = Vec::with_capacity(n_steps + 1);
        let mut p = start;
        let mut dir = normalize(dir0);
        points.push(p);
        radii.push(radius_start);
        for s in 1..=n_steps {
            // Bounded curvature: small random turn plus a gentle downward bias.
            let perp = random_perp(dir, rng);
            dir = normalize(add(
                add(dir, scale(perp, rng.gen_range(0.0..0.10))),
                [0.0, 0.0, -0.04],
            ));
            dir = self.steer_inside(p, dir, step);
            p = self.clamp_inside(add(p, scale(dir, step)));
            points.push(p);
            let frac = s as f64 / n_steps as f64;
            radii.push(radius_start + (taper_end - radius_start) * frac);
        }

        let idx = tree.segments.len();
        tree.segments.push(ArterySegment {
            parent,
            points,
            radii,
            flow_mm3_s: flow,
            stenosis: None,
        });

        if level < self.config.depth {
            let end = *tree.segments[idx].points.last().unwrap();
            let end_radius = *tree.segments[idx].radii.last().unwrap();
            let murray = 0.5f64.powf(1.0 / 3.0);
            let r0 = (end_radius * murray * rng.gen_range(0.92..1.05)).max(self.radius_floor);
            let r1 = (end_radius * murray * rng.gen_range(0.92..1.05)).max(self.radius_floor);

            // Flow split proportional to r³; the smaller share is computed by
            // subtraction so the two always sum to the parent flow exactly.
            let w0 = r0.powi(3) / (r0.powi(3) + r1.powi(3));
            let (q0, q1) = if w0 >= 0.5 {
                let q_big = flow * w0;
                (q_big, flow - q_big)
            } else {
                let q_big = flow * (1.0 - w0);
                (flow - q_big, q_big)
            };

            let axis = random_perp(dir, rng);
            let half_angle = rng.gen_range(0.35..0.65); // ~20°–37°
            let d0 = normalize(rotate(dir, axis, half_angle));
            let d1 = normalize(rotate(dir, axis, -half_angle));
            self.grow_segment(tree, Some(idx), end, d0, r0, q0, level + 1, rng);
            self.grow_segment(tree, Some(idx), end, d1, r1, q1, level + 1, rng);
        }
    }
}

/// Grows a deterministic artery tree for `seed` under `config`.
pub fn generate_tree(config: &SynthConfig, seed: u64) -> Result<ArteryTree, SynthError> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);

    let half = config.world_half_extent();
    let margin = config.root_radius_mm + 2.0 * config.max_spacing() + 1.0;
    let safe_half = [half[0] - margin, half[1] - margin, half[2] - margin];
    if safe_half.iter().any(|&h| h <= 2.0) {
        return Err(SynthError::InvalidConfig(format!(
            "volume too small for root radius {} mm: usable half-extent {safe_half:?}",
            config.root_radius_mm
        )));
    }
    // Voxel half-diagonal: the center voxel of any vertex must sit inside
    // the lumen, so radii never drop below it.
    let half_diag = 0.5
        * (config.spacing[0].powi(2) + config.spacing[1].powi(2) + config.spacing[2].powi(2))
            .sqrt();
    let min_extent = safe_half.iter().cloned().fold(f64::INFINITY, f64::min) * 2.0;

    let grower = Grower {
        config,
        safe_half,
        base_len: (0.30 * min_extent).clamp(6.0, 22.0),
        radius_floor: (1.05 * half_diag).max(0.3),
    };
    if config.root_radius_mm <= grower.radius_floor {
        return Err(SynthError::InvalidConfig(format!(
            "root radius {} mm not above the rasterization floor {:.3} mm",
            config.root_radius_mm, grower.radius_floor
        )));
    }

    let start = [
        rng.gen_range(-0.35..0.35) * safe_half[0],
        rng.gen_range(-0.35..0.35) * safe_half[1],
        safe_half[2] * rng.gen_range(0.88..0.98),
    ];
    let dir = normalize([rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), -1.0]);
    // Mild per-case jitter: enough diversity to matter, small enough that
    // patch appearance and position stay predictive of pressure.
    let radius = config.root_radius_mm * rng.gen_range(0.95..1.08);
    let flow = config.inlet_flow_mm3_s * rng.gen_range(0.9..1.1);

    let mut tree = ArteryTree::default();
    grower.grow_segment(&mut tree, None, start, dir, radius, flow, 0, &mut rng);

    // Focal stenoses: one or two, on segments long enough to host them.
    let n_sten = rng.gen_range(1..=2usize);
    for _ in 0..n_sten {
        let candidates: Vec<usize> = (0..tree.segments.len())
            .filter(|&i| tree.segments[i].points.len() >= 5 && tree.segments[i].stenosis.is_none())
            .collect();
        if candidates.is_empty() {
            break;
        }
        let seg = candidates[rng.gen_range(0..candidates.len())];
        let spec = StenosisSpec {
            segment: seg,
            center_frac: rng.gen_range(0.3..0.7),
            length_mm: rng.gen_range(2.5..5.0),
            severity: rng.gen_range(0.3..0.55),
        };
        apply_stenosis(&mut tree, &spec, grower.radius_floor)?;
    }

    tree.validate()?;
    Ok(tree)
}

/// Narrows a segment's radius profile with a smooth cosine bump peaking at
/// `severity` fractional reduction. The narrowed radius is floored so the
/// lumen stays rasterizable.
pub fn apply_stenosis(
    tree: &mut ArteryTree,
    spec: &StenosisSpec,
    radius_floor: f64,
) -> Result<(), SynthError> {
    if !(0.0..1.0).contains(&spec.severity) {
        return Err(SynthError::InvalidStenosis(format!(
            "severity must be in [0,1), got {}",
            spec.severity
        )));
    }
    if !(0.0..1.0).contains(&spec.center_frac) || spec.center_frac == 0.0 {
        return Err(SynthError::InvalidStenosis(format!(
            "center_frac must be in (0,1), got {}",
            spec.center_frac
        )));
    }
    if spec.length_mm <= 0.0 {
        return Err(SynthError::InvalidStenosis(format!(
            "length_mm must be > 0, got {}",
            spec.length_mm
        )));
    }
    let seg = tree
        .segments
        .get_mut(spec.segment)
        .ok_or_else(|| SynthError::InvalidStenosis(format!("no segment {}", spec.segment)))?;

    let total = seg.points.windows(2).map(|w| dist(w[0], w[1])).sum::<f64>();
    let center = spec.center_frac * total;
    let half = spec.length_mm / 2.0;

    let mut arc = 0.0;
    for i in 0..seg.points.len() {
        if i > 0 {
            arc += dist(seg.points[i - 1], seg.points[i]);
        }
        let u = (arc - center).abs();
        if u < half {
            let bump = 0.5 * (1.0 + (std::f64::consts::PI * u / half).cos());
            let factor = 1.0 - spec.severity * bump;
            seg.radii[i] = (seg.radii[i] * factor).max(radius_floor.min(seg.radii[i]));
        }
    }
    seg.stenosis = Some(spec.clone());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_trees() {
        let config = SynthConfig::default();
        let a = generate_tree(&config, 7).unwrap();
        let b = generate_tree(&config, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_tree(&config, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn depth_zero_is_single_segment() {
        let config = SynthConfig {
            depth: 0,
            ..SynthConfig::default()
        };
        let tree = generate_tree(&config, 1).unwrap();
        assert_eq!(tree.segments.len(), 1);
        assert_eq!(tree.segments[0].parent, None);
    }

    #[test]
    fn bifurcation_flow_conservation_is_exact() {
        let config = SynthConfig::default();
        for seed in 0..8u64 {
            let tree = generate_tree(&config, seed).unwrap();
            for (i, seg) in tree.segments.iter().enumerate() {
                let children = tree.children_of(i);
                if children.is_empty() {
                    continue;
                }
                let sum: f64 = children.iter().map(|&c| tree.segments[c].flow_mm3_s).sum();
                assert_eq!(
                    sum.to_bits(),
                    seg.flow_mm3_s.to_bits(),
                    "seed {seed} segment {i}: {} vs {}",
                    sum,
                    seg.flow_mm3_s
                );
            }
        }
    }

    #[test]
    fn expected_segment_count() {
        let config = SynthConfig::default();
        let tree = generate_tree(&config, 3).unwrap();
        // depth 3 → 1 + 2 + 4 + 8 segments
        assert_eq!(tree.segments.len(), 15);
    }

    #[test]
    fn children_start_at_parent_end() {
        let tree = generate_tree(&SynthConfig::default(), 11).unwrap();
        for (i, seg) in tree.segments.iter().enumerate() {
            if let Some(p) = seg.parent {
                let parent_end = *tree.segments[p].points.last().unwrap();
                assert_eq!(seg.points[0], parent_end, "segment {i}");
            }
        }
    }

    #[test]
    fn vertices_stay_inside_safe_box() {
        let config = SynthConfig::default();
        let half = config.world_half_extent();
        for seed in 0..6u64 {
            let tree = generate_tree(&config, seed).unwrap();
            for seg in &tree.segments {
                for (p, r) in seg.points.iter().zip(&seg.radii) {
                    for a in 0..3 {
                        assert!(
                            p[a].abs() + r + 2.0 * config.max_spacing() <= half[a] + 1e-9,
                            "seed {seed}: vertex {p:?} with radius {r} too close to bounds"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn stenosis_narrows_to_severity_at_center() {
        // Dense vertices so one lands near the bump peak.
        let config = SynthConfig {
            depth: 0,
            sample_step_mm: 0.25,
            ..SynthConfig::default()
        };
        let mut tree = generate_tree(&config, 5).unwrap();
        tree.segments[0].stenosis = None;
        let base = tree.clone();
        let spec = StenosisSpec {
            segment: 0,
            center_frac: 0.5,
            length_mm: 4.0,
            severity: 0.5,
        };
        apply_stenosis(&mut tree, &spec, 0.01).unwrap();
        let min_ratio = tree.segments[0]
            .radii
            .iter()
            .zip(&base.segments[0].radii)
            .map(|(a, b)| a / b)
            .fold(f64::INFINITY, f64::min);
        // The vertex nearest the bump center reaches close to 1 − severity.
        assert!(min_ratio < 0.56, "min ratio {min_ratio}");
        assert!(min_ratio >= 0.5 - 1e-9);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = SynthConfig {
            root_radius_mm: -1.0,
            ..SynthConfig::default()
        };
        assert!(generate_tree(&bad, 0).is_err());
        let bad = SynthConfig {
            dims: [8, 8, 8],
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_tree(&bad, 0),
            Err(SynthError::InvalidConfig(_))
        ));
    }
}
