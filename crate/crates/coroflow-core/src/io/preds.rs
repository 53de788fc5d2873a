//! Prediction CSV interchange: one row per centerline point with ground
//! truth and predicted pressure in mmHg.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const PREDS_HEADER: &str = "case_id,index,world_x,world_y,world_z,y_true_mmhg,y_pred_mmhg";

#[derive(Debug, Error)]
pub enum PredsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed predictions csv line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("non-finite value on line {line}")]
    NonFinite { line: usize },
}

/// One evaluated centerline point.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub case_id: String,
    pub index: usize,
    /// LPS millimetres.
    pub world: [f64; 3],
    pub y_true_mmhg: f64,
    pub y_pred_mmhg: f64,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), PredsError> {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(PREDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.case_id, r.index, r.world[0], r.world[1], r.world[2], r.y_true_mmhg, r.y_pred_mmhg
        ));
    }
    fs::write(path, out.as_bytes()).map_err(|source| PredsError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, PredsError> {
    let text = fs::read_to_string(path).map_err(|source| PredsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != PREDS_HEADER {
        return Err(PredsError::Malformed {
            line: 1,
            reason: format!("unexpected header '{header}'"),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(PredsError::Malformed {
                line: lineno,
                reason: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64, PredsError> {
            s.parse::<f64>().map_err(|_| PredsError::Malformed {
                line: lineno,
                reason: format!("bad number '{s}'"),
            })
        };
        let rec = PredictionRecord {
            case_id: fields[0].to_string(),
            index: fields[1].parse().map_err(|_| PredsError::Malformed {
                line: lineno,
                reason: format!("bad index '{}'", fields[1]),
            })?,
            world: [
                parse_f(fields[2])?,
                parse_f(fields[3])?,
                parse_f(fields[4])?,
            ],
            y_true_mmhg: parse_f(fields[5])?,
            y_pred_mmhg: parse_f(fields[6])?,
        };
        if !(rec.y_true_mmhg.is_finite() && rec.y_pred_mmhg.is_finite()) {
            return Err(PredsError::NonFinite { line: lineno });
        }
        records.push(rec);
    }
    Ok(records)
}
