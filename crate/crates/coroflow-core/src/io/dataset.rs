//! CORO-DS dataset container.
//!
//! A dataset directory holds exactly three files:
//!
//! - `manifest.json` — version, patch shape, sample count, per-case split
//!   assignments, and label normalization stats.
//! - `patches.bin` — one record per sample, `d·h·w` little-endian f32 in
//!   k-major order (k outer, then j, then i).
//! - `points.csv` — one row per sample, same order as `patches.bin`, with
//!   world (LPS mm) and local voxel coordinates plus the pressure label.
//!
//! Round trips are bit-exact: floats in the CSV are printed with Rust's
//! shortest round-trip formatting and the binary payload is raw f32.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::Sample;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATCHES_FILE: &str = "patches.bin";
pub const POINTS_FILE: &str = "points.csv";
pub const POINTS_HEADER: &str =
    "case_id,index,world_x,world_y,world_z,local_i,local_j,local_k,pressure_mmhg";

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    ManifestParse(#[from] serde_json::Error),
    #[error("format version {found}, this build reads version {FORMAT_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("patches.bin holds {actual} bytes, expected {expected} for {count} records")]
    PatchLengthMismatch {
        expected: usize,
        actual: usize,
        count: usize,
    },
    #[error("points.csv has {rows} rows but the manifest declares {count} samples")]
    CountDisagreement { rows: usize, count: usize },
    #[error("case n_points sum {sum} disagrees with manifest count {count}")]
    CaseCountDisagreement { sum: usize, count: usize },
    #[error("duplicate case id '{0}'")]
    DuplicateCase(String),
    #[error("unknown case id '{0}' in points.csv")]
    UnknownCase(String),
    #[error("sample {index} patch has {actual} voxels, manifest patch shape needs {expected}")]
    PatchShapeMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("label std must be > 0 when count > 1, got {0}")]
    BadLabelStd(f64),
    #[error("malformed points.csv line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

/// Train/validation/test assignment, fixed per case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train|val|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub split: Split,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub patch_shape: [usize; 3],
    pub count: usize,
    pub cases: Vec<CaseEntry>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl DatasetManifest {
    pub fn patch_len(&self) -> usize {
        self.patch_shape[0] * self.patch_shape[1] * self.patch_shape[2]
    }

    pub fn case_ids_for_split(&self, split: Split) -> Vec<&str> {
        self.cases
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.id.as_str())
            .collect()
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.version != FORMAT_VERSION {
            return Err(DatasetError::VersionMismatch {
                found: self.version,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.cases {
            if !seen.insert(c.id.as_str()) {
                return Err(DatasetError::DuplicateCase(c.id.clone()));
            }
        }
        let sum: usize = self.cases.iter().map(|c| c.n_points).sum();
        if sum != self.count {
            return Err(DatasetError::CaseCountDisagreement {
                sum,
                count: self.count,
            });
        }
        if self.count > 1 && self.label_std.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(DatasetError::BadLabelStd(self.label_std));
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a dataset directory. Samples must follow manifest case order.
pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    samples: &[Sample],
) -> Result<(), DatasetError> {
    manifest.validate()?;
    if samples.len() != manifest.count {
        return Err(DatasetError::CountDisagreement {
            rows: samples.len(),
            count: manifest.count,
        });
    }
    let patch_len = manifest.patch_len();
    for (i, s) in samples.iter().enumerate() {
        if s.patch.len() != patch_len {
            return Err(DatasetError::PatchShapeMismatch {
                index: i,
                expected: patch_len,
                actual: s.patch.len(),
            });
        }
    }

    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&manifest_path, json.as_bytes()).map_err(io_err(&manifest_path))?;

    let patches_path = dir.join(PATCHES_FILE);
    let f = fs::File::create(&patches_path).map_err(io_err(&patches_path))?;
    let mut w = BufWriter::new(f);
    for s in samples {
        for v in &s.patch {
            w.write_all(&v.to_le_bytes())
                .map_err(io_err(&patches_path))?;
        }
    }
    w.flush().map_err(io_err(&patches_path))?;

    let points_path = dir.join(POINTS_FILE);
    let mut csv = String::with_capacity(64 * (samples.len() + 1));
    csv.push_str(POINTS_HEADER);
    csv.push('\n');
    for s in samples {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.case_id,
            s.index,
            s.world[0],
            s.world[1],
            s.world[2],
            s.local[0],
            s.local[1],
            s.local[2],
            s.pressure_mmhg,
        ));
    }
    fs::write(&points_path, csv.as_bytes()).map_err(io_err(&points_path))?;
    Ok(())
}

/// Reads back a dataset directory, validating lengths and counts.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>), DatasetError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)?;
    manifest.validate()?;

    let patch_len = manifest.patch_len();
    let patches_path = dir.join(PATCHES_FILE);
    let bytes = fs::read(&patches_path).map_err(io_err(&patches_path))?;
    let expected = manifest.count * patch_len * 4;
    if bytes.len() != expected {
        return Err(DatasetError::PatchLengthMismatch {
            expected,
            actual: bytes.len(),
            count: manifest.count,
        });
    }

    let points_path = dir.join(POINTS_FILE);
    let csv = fs::read_to_string(&points_path).map_err(io_err(&points_path))?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    if header != POINTS_HEADER {
        return Err(DatasetError::MalformedCsv {
            line: 1,
            reason: format!("unexpected header '{header}'"),
        });
    }

    let known: std::collections::HashSet<&str> =
        manifest.cases.iter().map(|c| c.id.as_str()).collect();

    let mut samples = Vec::with_capacity(manifest.count);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(DatasetError::MalformedCsv {
                line: lineno + 2,
                reason: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, DatasetError> {
            s.parse::<f64>().map_err(|_| DatasetError::MalformedCsv {
                line: lineno + 2,
                reason: format!("bad {what} '{s}'"),
            })
        };
        let case_id = fields[0].to_string();
        if !known.contains(case_id.as_str()) {
            return Err(DatasetError::UnknownCase(case_id));
        }
        let index = fields[1]
            .parse::<usize>()
            .map_err(|_| DatasetError::MalformedCsv {
                line: lineno + 2,
                reason: format!("bad index '{}'", fields[1]),
            })?;
        let row = samples.len();
        let start = row * patch_len * 4;
        let patch: Vec<f32> = bytes[start..start + patch_len * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        samples.push(Sample {
            case_id,
            index,
            world: [
                parse_f(fields[2], "world_x")?,
                parse_f(fields[3], "world_y")?,
                parse_f(fields[4], "world_z")?,
            ],
            local: [
                parse_f(fields[5], "local_i")?,
                parse_f(fields[6], "local_j")?,
                parse_f(fields[7], "local_k")?,
            ],
            pressure_mmhg: parse_f(fields[8], "pressure_mmhg")?,
            patch,
        });
        if samples.len() > manifest.count {
            return Err(DatasetError::CountDisagreement {
                rows: samples.len(),
                count: manifest.count,
            });
        }
    }
    if samples.len() != manifest.count {
        return Err(DatasetError::CountDisagreement {
            rows: samples.len(),
            count: manifest.count,
        });
    }
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_dataset() -> (DatasetManifest, Vec<Sample>) {
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            patch_shape: [2, 2, 2],
            count: 3,
            cases: vec![
                CaseEntry {
                    id: "case_a".into(),
                    split: Split::Train,
                    n_points: 2,
                },
                CaseEntry {
                    id: "case_b".into(),
                    split: Split::Test,
                    n_points: 1,
                },
            ],
            label_mean: 95.25,
            label_std: 3.5,
        };
        let mk = |case: &str, idx: usize, p: f64| Sample {
            case_id: case.into(),
            index: idx,
            world: [1.5 + p, -2.25, 0.125],
            local: [3.0, 4.5, 5.0],
            pressure_mmhg: p,
            patch: (0..8).map(|v| v as f32 + p as f32).collect(),
        };
        let samples = vec![
            mk("case_a", 0, 100.0),
            mk("case_a", 1, 99.1875),
            mk("case_b", 0, 91.5),
        ];
        (manifest, samples)
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempdir().unwrap();
        let (manifest, samples) = tiny_dataset();
        write_dataset(dir.path(), &manifest, &samples).unwrap();
        let (m2, s2) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(samples.len(), s2.len());
        for (a, b) in samples.iter().zip(&s2) {
            assert_eq!(a.case_id, b.case_id);
            assert_eq!(a.index, b.index);
            assert_eq!(a.world, b.world);
            assert_eq!(a.local, b.local);
            assert_eq!(a.pressure_mmhg.to_bits(), b.pressure_mmhg.to_bits());
            let pa: Vec<u32> = a.patch.iter().map(|v| v.to_bits()).collect();
            let pb: Vec<u32> = b.patch.iter().map(|v| v.to_bits()).collect();
            assert_eq!(pa, pb);
        }

        // Re-writing what was read reproduces identical files.
        let dir2 = tempdir().unwrap();
        write_dataset(dir2.path(), &m2, &s2).unwrap();
        for f in [MANIFEST_FILE, PATCHES_FILE, POINTS_FILE] {
            let a = fs::read(dir.path().join(f)).unwrap();
            let b = fs::read(dir2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs");
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempdir().unwrap();
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            patch_shape: [2, 2, 2],
            count: 0,
            cases: vec![],
            label_mean: 0.0,
            label_std: 1.0,
        };
        write_dataset(dir.path(), &manifest, &[]).unwrap();
        let (m2, s2) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest, m2);
        assert!(s2.is_empty());
    }

    #[test]
    fn truncated_patches_is_length_mismatch() {
        let dir = tempdir().unwrap();
        let (manifest, samples) = tiny_dataset();
        write_dataset(dir.path(), &manifest, &samples).unwrap();
        let path = dir.path().join(PATCHES_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8 * 4]).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DatasetError::PatchLengthMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let (manifest, samples) = tiny_dataset();
        write_dataset(dir.path(), &manifest, &samples).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 2");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DatasetError::VersionMismatch { found: 2 })
        ));
    }

    #[test]
    fn row_count_disagreement_rejected() {
        let dir = tempdir().unwrap();
        let (manifest, samples) = tiny_dataset();
        write_dataset(dir.path(), &manifest, &samples).unwrap();
        let path = dir.path().join(POINTS_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let shortened: Vec<&str> = text.lines().take(3).collect();
        fs::write(&path, shortened.join("\n")).unwrap();
        // patches.bin still holds 3 records, so the CSV disagrees.
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DatasetError::CountDisagreement { .. })
        ));
    }

    #[test]
    fn duplicate_case_rejected() {
        let (mut manifest, samples) = tiny_dataset();
        manifest.cases[1].id = "case_a".into();
        let dir = tempdir().unwrap();
        assert!(matches!(
            write_dataset(dir.path(), &manifest, &samples),
            Err(DatasetError::DuplicateCase(_))
        ));
    }
}
