//! Minimal NIfTI-1 reader for uncompressed single-file `.nii` volumes.
//!
//! Scope: the 348-byte NIfTI-1 header, little- or big-endian (detected via
//! `sizeof_hdr`), datatypes uint8 / int16 / int32 / float32 / float64, and
//! axis-aligned sform orientations. Quaternion (qform-only) orientation is
//! rejected. Intensities are scaled by `scl_slope` / `scl_inter` and returned
//! as f64, with the grid already aligned to LPS.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geom::{align_volume_lps, Frame, VolumeGrid};

pub const HEADER_SIZE: usize = 348;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("file too short: {0} bytes, need at least {HEADER_SIZE} for the header")]
    Truncated(usize),
    #[error("sizeof_hdr is {0}, expected 348 under either endianness")]
    BadHeaderSize(i32),
    #[error("bad magic {0:?}, expected \"n+1\\0\"")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported dimensionality {0}, expected a 3-D volume")]
    UnsupportedDims(i16),
    #[error("non-positive pixdim {0:?}")]
    BadPixdim([f64; 3]),
    #[error("data section truncated: need {expected} bytes at offset {offset}, found {actual}")]
    TruncatedData {
        expected: usize,
        actual: usize,
        offset: usize,
    },
    #[error("unsupported orientation: {0}")]
    UnsupportedOrientation(String),
    #[error("invalid grid: {0}")]
    Grid(#[from] crate::geom::GeomError),
}

/// Parsed header fields the pipeline needs.
#[derive(Debug, Clone)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub pixdim: [f64; 3],
    pub datatype: i16,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub vox_offset: usize,
    pub sform_code: i16,
    pub qform_code: i16,
    pub srow: [[f64; 4]; 3],
    pub big_endian: bool,
}

/// A parsed volume: LPS-aligned grid plus f64 intensities, i-fastest.
#[derive(Debug, Clone)]
pub struct NiftiVolume {
    pub grid: VolumeGrid,
    pub data: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    big: bool,
}

impl<'a> Cursor<'a> {
    fn i16_at(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.big {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }
    fn i32_at(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.big {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }
    fn f32_at(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.big {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
    fn f64_at(&self, off: usize) -> f64 {
        let b: [u8; 8] = self.bytes[off..off + 8].try_into().unwrap();
        if self.big {
            f64::from_be_bytes(b)
        } else {
            f64::from_le_bytes(b)
        }
    }
}

// NIfTI-1 datatype codes.
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

fn datatype_size(code: i16) -> Option<usize> {
    match code {
        DT_UINT8 => Some(1),
        DT_INT16 => Some(2),
        DT_INT32 => Some(4),
        DT_FLOAT32 => Some(4),
        DT_FLOAT64 => Some(8),
        _ => None,
    }
}

/// Reads and parses a `.nii` file, returning the LPS-aligned volume.
pub fn read_nifti(path: &Path) -> Result<NiftiVolume, NiftiError> {
    let bytes = fs::read(path).map_err(|source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_nifti(&bytes)
}

/// Parses NIfTI-1 bytes (header + data section).
pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiVolume, NiftiError> {
    let header = parse_header(bytes)?;

    let elem = datatype_size(header.datatype).expect("validated");
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    let offset = header.vox_offset;
    let need = n * elem;
    if bytes.len() < offset || bytes.len() - offset < need {
        return Err(NiftiError::TruncatedData {
            expected: need,
            actual: bytes.len().saturating_sub(offset),
            offset,
        });
    }

    let cur = Cursor {
        bytes,
        big: header.big_endian,
    };
    let mut data = Vec::with_capacity(n);
    // slope 0 means "no scaling stored"; treat as identity.
    let slope = if header.scl_slope == 0.0 {
        1.0
    } else {
        header.scl_slope
    };
    let inter = if header.scl_slope == 0.0 {
        0.0
    } else {
        header.scl_inter
    };
    for idx in 0..n {
        let off = offset + idx * elem;
        let raw = match header.datatype {
            DT_UINT8 => f64::from(bytes[off]),
            DT_INT16 => f64::from(cur.i16_at(off)),
            DT_INT32 => f64::from(cur.i32_at(off)),
            DT_FLOAT32 => f64::from(cur.f32_at(off)),
            DT_FLOAT64 => cur.f64_at(off),
            _ => unreachable!(),
        };
        data.push(slope * raw + inter);
    }

    let grid = grid_from_header(&header)?;
    Ok(NiftiVolume {
        grid: align_volume_lps(&grid),
        data,
    })
}

/// Parses the 348-byte header, detecting endianness from `sizeof_hdr`.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated(bytes.len()));
    }

    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let big = if le == HEADER_SIZE as i32 {
        false
    } else if be == HEADER_SIZE as i32 {
        true
    } else {
        return Err(NiftiError::BadHeaderSize(le));
    };
    let cur = Cursor { bytes, big };

    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(NiftiError::BadMagic(magic));
    }

    let ndim = cur.i16_at(40);
    // Accept trailing singleton dimensions (e.g. a 4th dim of size 1).
    if ndim < 3 {
        return Err(NiftiError::UnsupportedDims(ndim));
    }
    for extra in 4..=ndim.min(7) {
        if cur.i16_at(40 + 2 * extra as usize) > 1 {
            return Err(NiftiError::UnsupportedDims(ndim));
        }
    }
    let dims = [
        cur.i16_at(42) as usize,
        cur.i16_at(44) as usize,
        cur.i16_at(46) as usize,
    ];
    if dims.contains(&0) {
        return Err(NiftiError::UnsupportedDims(ndim));
    }

    let datatype = cur.i16_at(70);
    if datatype_size(datatype).is_none() {
        return Err(NiftiError::UnsupportedDatatype(datatype));
    }

    let pixdim = [
        f64::from(cur.f32_at(80)),
        f64::from(cur.f32_at(84)),
        f64::from(cur.f32_at(88)),
    ];
    if pixdim.iter().any(|&p| !p.is_finite() || p <= 0.0) {
        return Err(NiftiError::BadPixdim(pixdim));
    }

    let vox_offset = f64::from(cur.f32_at(108));
    let vox_offset = if vox_offset <= 0.0 {
        352
    } else {
        vox_offset as usize
    };

    let mut srow = [[0.0f64; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = f64::from(cur.f32_at(280 + 16 * r + 4 * c));
        }
    }

    Ok(NiftiHeader {
        dims,
        pixdim,
        datatype,
        scl_slope: f64::from(cur.f32_at(112)),
        scl_inter: f64::from(cur.f32_at(116)),
        vox_offset,
        sform_code: cur.i16_at(254),
        qform_code: cur.i16_at(252),
        srow,
        big_endian: big,
    })
}

/// Derives the voxel grid from the header.
///
/// The sform affine maps voxel indices to RAS world coordinates. Supported
/// forms are diagonal with signs (+,+,+) — modelled directly as a RAS grid —
/// and (−,−,+), which is the same lattice already expressed in LPS. Anything
/// oblique is rejected. Without a valid sform, pixdim spacing is used and RAS
/// is assumed; qform-only files are rejected.
fn grid_from_header(h: &NiftiHeader) -> Result<VolumeGrid, NiftiError> {
    if h.sform_code > 0 {
        let s = &h.srow;
        let off_diag_zero = s[0][1] == 0.0
            && s[0][2] == 0.0
            && s[1][0] == 0.0
            && s[1][2] == 0.0
            && s[2][0] == 0.0
            && s[2][1] == 0.0;
        if !off_diag_zero {
            return Err(NiftiError::UnsupportedOrientation(
                "sform affine is not axis-aligned".into(),
            ));
        }
        let diag = [s[0][0], s[1][1], s[2][2]];
        let origin = [s[0][3], s[1][3], s[2][3]];
        if diag[0] > 0.0 && diag[1] > 0.0 && diag[2] > 0.0 {
            return Ok(VolumeGrid::new(origin, diag, h.dims, Frame::Ras)?);
        }
        if diag[0] < 0.0 && diag[1] < 0.0 && diag[2] > 0.0 {
            // voxel→RAS with negated x/y rows is a positive-spacing LPS grid.
            return Ok(VolumeGrid::new(
                [-origin[0], -origin[1], origin[2]],
                [-diag[0], -diag[1], diag[2]],
                h.dims,
                Frame::Lps,
            )?);
        }
        return Err(NiftiError::UnsupportedOrientation(format!(
            "sform diagonal signs {diag:?} not supported (expected +,+,+ or -,-,+)"
        )));
    }
    if h.qform_code > 0 {
        return Err(NiftiError::UnsupportedOrientation(
            "qform quaternion orientation is not supported; supply an axis-aligned sform".into(),
        ));
    }
    Ok(VolumeGrid::new([0.0; 3], h.pixdim, h.dims, Frame::Ras)?)
}
