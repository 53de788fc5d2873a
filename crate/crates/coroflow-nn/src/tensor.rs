//! Dense row-major tensors over f32 (training) or f64 (gradient checking).

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::NnError;

/// Element type bound: everything the layers need from a float.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + std::fmt::Debug + std::fmt::Display + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("float widens")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let need: usize = shape.iter().product();
        if data.len() != need {
            return Err(NnError::InvalidSpec(format!(
                "shape {shape:?} needs {need} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform in [-limit, limit); draws f64 from the stream then narrows,
    /// so f32 and f64 models share the same sequence.
    pub fn uniform(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64c((rng.gen::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let need: usize = shape.iter().product();
        if need != self.data.len() {
            return Err(NnError::InvalidSpec(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Column-wise concatenation of 2-D tensors sharing the row count.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>, NnError> {
    if parts.is_empty() {
        return Err(NnError::InvalidSpec("concat of zero tensors".into()));
    }
    let rows = parts[0].shape()[0];
    for p in parts {
        if p.shape().len() != 2 || p.shape()[0] != rows {
            return Err(NnError::InvalidSpec(format!(
                "concat expects 2-D tensors with {rows} rows, got {:?}",
                p.shape()
            )));
        }
    }
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut out = Tensor::zeros(&[rows, total]);
    for r in 0..rows {
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            out.data_mut()[r * total + off..r * total + off + w]
                .copy_from_slice(&p.data()[r * w..(r + 1) * w]);
            off += w;
        }
    }
    Ok(out)
}

/// Inverse of [`concat_cols`]: splits a 2-D tensor into column blocks.
pub fn split_cols<T: Scalar>(t: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>, NnError> {
    if t.shape().len() != 2 || t.shape()[1] != widths.iter().sum::<usize>() {
        return Err(NnError::InvalidSpec(format!(
            "split widths {widths:?} do not cover shape {:?}",
            t.shape()
        )));
    }
    let rows = t.shape()[0];
    let total = t.shape()[1];
    let mut parts: Vec<Tensor<T>> = widths.iter().map(|&w| Tensor::zeros(&[rows, w])).collect();
    for r in 0..rows {
        let mut off = 0;
        for (p, &w) in parts.iter_mut().zip(widths) {
            let dst = &mut p.data_mut()[r * w..(r + 1) * w];
            dst.copy_from_slice(&t.data()[r * total + off..r * total + off + w]);
            off += w;
        }
    }
    Ok(parts)
}
