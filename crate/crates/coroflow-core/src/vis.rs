//! Error-colored point-cloud export (ASCII PLY).
//!
//! Each prediction becomes one vertex at its LPS position, colored by the
//! absolute error |ŷ − y| against three increasing thresholds:
//! green ≤ t1 < yellow ≤ t2 < orange ≤ t3 < red.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::io::preds::PredictionRecord;

pub const GREEN: [u8; 3] = [0, 128, 0];
pub const YELLOW: [u8; 3] = [255, 255, 0];
pub const ORANGE: [u8; 3] = [255, 165, 0];
pub const RED: [u8; 3] = [255, 0, 0];

#[derive(Debug, Error)]
pub enum VisError {
    #[error("thresholds must be positive and strictly increasing, got {0:?}")]
    BadThresholds([f64; 3]),
    #[error("no predictions to export")]
    Empty,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Absolute-error color thresholds in mmHg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMapSpec {
    pub thresholds: [f64; 3],
}

impl ColorMapSpec {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Result<Self, VisError> {
        let t = [t1, t2, t3];
        if !(t1 > 0.0 && t1 < t2 && t2 < t3) {
            return Err(VisError::BadThresholds(t));
        }
        Ok(Self { thresholds: t })
    }

    /// Data-relative default: 0.5σ / 1σ / 2σ of the case's label spread.
    pub fn from_label_std(sigma: f64) -> Result<Self, VisError> {
        Self::new(0.5 * sigma, sigma, 2.0 * sigma)
    }

    pub fn color(&self, abs_error: f64) -> [u8; 3] {
        let [t1, t2, t3] = self.thresholds;
        if abs_error <= t1 {
            GREEN
        } else if abs_error <= t2 {
            YELLOW
        } else if abs_error <= t3 {
            ORANGE
        } else {
            RED
        }
    }
}

/// Renders the PLY document; output bytes are a pure function of the input.
pub fn render_ply(
    records: &[PredictionRecord],
    colormap: &ColorMapSpec,
) -> Result<String, VisError> {
    if records.is_empty() {
        return Err(VisError::Empty);
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str("comment absolute pressure error, mmHg\n");
    let _ = writeln!(
        out,
        "comment thresholds {} {} {}",
        colormap.thresholds[0], colormap.thresholds[1], colormap.thresholds[2]
    );
    let _ = writeln!(out, "element vertex {}", records.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str("end_header\n");
    for r in records {
        let [red, green, blue] = colormap.color((r.y_pred_mmhg - r.y_true_mmhg).abs());
        let _ = writeln!(
            out,
            "{} {} {} {red} {green} {blue}",
            r.world[0], r.world[1], r.world[2]
        );
    }
    Ok(out)
}

pub fn export_ply(
    path: &Path,
    records: &[PredictionRecord],
    colormap: &ColorMapSpec,
) -> Result<(), VisError> {
    let body = render_ply(records, colormap)?;
    std::fs::write(path, body.as_bytes()).map_err(|source| VisError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(y: f64, y_hat: f64) -> PredictionRecord {
        PredictionRecord {
            case_id: "a".into(),
            index: 0,
            world: [1.0, 2.0, 3.0],
            y_true_mmhg: y,
            y_pred_mmhg: y_hat,
        }
    }

    #[test]
    fn zero_error_is_all_green() {
        let records = vec![rec(100.0, 100.0), rec(97.0, 97.0)];
        let cm = ColorMapSpec::new(1.0, 2.0, 3.0).unwrap();
        let ply = render_ply(&records, &cm).unwrap();
        let body: Vec<&str> = ply
            .lines()
            .skip_while(|l| *l != "end_header")
            .skip(1)
            .collect();
        assert_eq!(body.len(), 2);
        for line in body {
            assert!(line.ends_with("0 128 0"), "line {line}");
        }
    }

    #[test]
    fn vertex_count_matches_and_header_declares_it() {
        let records: Vec<_> = (0..7).map(|i| rec(100.0, 100.0 + i as f64)).collect();
        let cm = ColorMapSpec::new(1.0, 2.0, 3.0).unwrap();
        let ply = render_ply(&records, &cm).unwrap();
        assert!(ply.contains("element vertex 7"));
        let body = ply.split("end_header\n").nth(1).unwrap();
        assert_eq!(body.lines().count(), 7);
    }

    #[test]
    fn planted_errors_map_to_exact_triples() {
        let cm = ColorMapSpec::new(1.0, 2.0, 4.0).unwrap();
        // err 0.5 → green, 1.5 → yellow, 3.0 → orange, 9 → red
        let records = vec![
            rec(100.0, 100.5),
            rec(100.0, 101.5),
            rec(100.0, 103.0),
            rec(100.0, 109.0),
        ];
        let ply = render_ply(&records, &cm).unwrap();
        let body: Vec<&str> = ply.split("end_header\n").nth(1).unwrap().lines().collect();
        assert!(body[0].ends_with("0 128 0"));
        assert!(body[1].ends_with("255 255 0"));
        assert!(body[2].ends_with("255 165 0"));
        assert!(body[3].ends_with("255 0 0"));
    }

    #[test]
    fn boundary_errors_take_the_lower_band() {
        let cm = ColorMapSpec::new(1.0, 2.0, 4.0).unwrap();
        assert_eq!(cm.color(1.0), GREEN);
        assert_eq!(cm.color(2.0), YELLOW);
        assert_eq!(cm.color(4.0), ORANGE);
        assert_eq!(cm.color(4.0000001), RED);
    }

    #[test]
    fn output_is_byte_stable() {
        let records: Vec<_> = (0..5).map(|i| rec(100.0, 99.0 + i as f64 * 0.77)).collect();
        let cm = ColorMapSpec::from_label_std(2.0).unwrap();
        assert_eq!(
            render_ply(&records, &cm).unwrap(),
            render_ply(&records, &cm).unwrap()
        );
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(matches!(
            ColorMapSpec::new(2.0, 1.0, 3.0),
            Err(VisError::BadThresholds(_))
        ));
        assert!(matches!(
            ColorMapSpec::new(0.0, 1.0, 3.0),
            Err(VisError::BadThresholds(_))
        ));
        let cm = ColorMapSpec::new(1.0, 2.0, 3.0).unwrap();
        assert!(matches!(render_ply(&[], &cm), Err(VisError::Empty)));
    }
}
