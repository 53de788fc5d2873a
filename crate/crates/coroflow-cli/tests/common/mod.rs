//! Shared test fixtures: a byte-level NIfTI-1 writer independent of the
//! parser under test.
//!
//! Each integration-test binary uses a different subset of the builder.
#![allow(dead_code)]

/// Builds a NIfTI-1 file directly at the standard's byte offsets.
pub struct NiftiFixture {
    pub dims: [u16; 3],
    pub pixdim: [f32; 3],
    pub datatype: i16,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub sform_code: i16,
    pub srow: [[f32; 4]; 3],
    pub big_endian: bool,
    pub payload: Vec<u8>,
}

impl NiftiFixture {
    pub fn new(dims: [u16; 3], datatype: i16) -> Self {
        Self {
            dims,
            pixdim: [1.0; 3],
            datatype,
            scl_slope: 1.0,
            scl_inter: 0.0,
            sform_code: 0,
            srow: [[0.0; 4]; 3],
            big_endian: false,
            payload: Vec::new(),
        }
    }

    fn put_i16(&self, buf: &mut [u8], off: usize, v: i16) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        buf[off..off + 2].copy_from_slice(&b);
    }

    fn put_i32(&self, buf: &mut [u8], off: usize, v: i32) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        buf[off..off + 4].copy_from_slice(&b);
    }

    fn put_f32(&self, buf: &mut [u8], off: usize, v: f32) {
        let b = if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        };
        buf[off..off + 4].copy_from_slice(&b);
    }

    pub fn build(&self) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        self.put_i32(&mut h, 0, 348);
        self.put_i16(&mut h, 40, 3);
        for (axis, d) in self.dims.iter().enumerate() {
            self.put_i16(&mut h, 42 + 2 * axis, *d as i16);
        }
        self.put_i16(&mut h, 70, self.datatype);
        let bitpix = match self.datatype {
            2 => 8,
            4 => 16,
            8 | 16 => 32,
            64 => 64,
            _ => 0,
        };
        self.put_i16(&mut h, 72, bitpix);
        for (axis, p) in self.pixdim.iter().enumerate() {
            self.put_f32(&mut h, 80 + 4 * axis, *p);
        }
        self.put_f32(&mut h, 108, 352.0);
        self.put_f32(&mut h, 112, self.scl_slope);
        self.put_f32(&mut h, 116, self.scl_inter);
        self.put_i16(&mut h, 254, self.sform_code);
        for r in 0..3 {
            for c in 0..4 {
                self.put_f32(&mut h, 280 + 16 * r + 4 * c, self.srow[r][c]);
            }
        }
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&self.payload);
        h
    }

    pub fn with_f32_payload(mut self, values: &[f32]) -> Self {
        self.payload = values
            .iter()
            .flat_map(|v| {
                if self.big_endian {
                    v.to_be_bytes()
                } else {
                    v.to_le_bytes()
                }
            })
            .collect();
        self
    }

    pub fn with_i16_payload(mut self, values: &[i16]) -> Self {
        self.payload = values
            .iter()
            .flat_map(|v| {
                if self.big_endian {
                    v.to_be_bytes()
                } else {
                    v.to_le_bytes()
                }
            })
            .collect();
        self
    }
}
