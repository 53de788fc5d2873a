//! Analytic pressure fields on artery trees.

use super::{dist, ArteryTree, SynthConfig, SynthError, MMHG_PA};

/// Pressure drop in Pa over one polyline with a per-vertex radius profile,
/// trapezoid-integrating dP/ds = 8 μ Q / (π r(s)⁴).
///
/// `points` in mm, `radii` in mm, `flow` in mm³/s, `viscosity` in Pa·s.
pub fn segment_drop_pa(
    points: &[[f64; 3]],
    radii: &[f64],
    flow_mm3_s: f64,
    viscosity_pa_s: f64,
) -> f64 {
    let q_si = flow_mm3_s * 1e-9; // mm³/s → m³/s
    let grad = |r_mm: f64| {
        let r = r_mm * 1e-3;
        8.0 * viscosity_pa_s * q_si / (std::f64::consts::PI * r.powi(4))
    };
    let mut drop = 0.0;
    for i in 1..points.len() {
        let ds = dist(points[i - 1], points[i]) * 1e-3;
        drop += 0.5 * (grad(radii[i - 1]) + grad(radii[i])) * ds;
    }
    drop
}

/// Pressure in mmHg at every vertex of every segment, continuous across
/// bifurcations, starting from the configured inlet pressure.
pub fn poiseuille_pressure(
    tree: &ArteryTree,
    config: &SynthConfig,
) -> Result<Vec<Vec<f64>>, SynthError> {
    tree.validate()?;
    let n = tree.segments.len();
    let mut pressures: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut start_pressure: Vec<Option<f64>> = vec![None; n];

    // Segments are stored parent-before-child by construction, but walk a
    // work list so any topological order is handled.
    let mut pending: Vec<usize> = (0..n).collect();
    let mut progressed = true;
    while !pending.is_empty() && progressed {
        progressed = false;
        pending.retain(|&i| {
            let seg = &tree.segments[i];
            let p0 = match seg.parent {
                None => Some(config.inlet_pressure_mmhg),
                Some(p) => pressures[p].last().copied(),
            };
            let Some(p0) = p0 else { return true };
            start_pressure[i] = Some(p0);
            let q_si = seg.flow_mm3_s * 1e-9;
            let grad = |r_mm: f64| {
                let r = r_mm * 1e-3;
                8.0 * config.viscosity_pa_s * q_si / (std::f64::consts::PI * r.powi(4))
            };
            let mut vals = Vec::with_capacity(seg.points.len());
            let mut cum_pa = 0.0;
            vals.push(p0);
            for k in 1..seg.points.len() {
                let ds = dist(seg.points[k - 1], seg.points[k]) * 1e-3;
                cum_pa += 0.5 * (grad(seg.radii[k - 1]) + grad(seg.radii[k])) * ds;
                vals.push(p0 - cum_pa / MMHG_PA);
            }
            pressures[i] = vals;
            progressed = true;
            false
        });
    }
    if !pending.is_empty() {
        return Err(SynthError::InvalidConfig(format!(
            "segments {pending:?} are not reachable from the root"
        )));
    }
    Ok(pressures)
}
