//! Matrix kernels behind the dense and convolution layers.
//!
//! All matrices are row-major slices. Loop orders keep the innermost loop on
//! contiguous memory so the compiler can vectorize; every kernel accumulates
//! into `c` (callers zero it when overwrite semantics are wanted).

use crate::tensor::Scalar;

/// c[m×n] += a[m×k] · b[k×n]
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let coeff = a[i * k + kk];
            if coeff == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + coeff * *bv;
            }
        }
    }
}

/// c[m×n] += a[m×l] · bᵀ where b is stored [n×l]; row-dot-row form.
pub fn matmul_abt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, l: usize, n: usize) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * l..(i + 1) * l];
        for j in 0..n {
            let b_row = &b[j * l..(j + 1) * l];
            c[i * n + j] = c[i * n + j] + dot(a_row, b_row);
        }
    }
}

/// c[k×n] += aᵀ · b where a is stored [m×k] and b is [m×n]; axpy form.
pub fn matmul_atb_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for mm in 0..m {
        let b_row = &b[mm * n..(mm + 1) * n];
        for kk in 0..k {
            let coeff = a[mm * k + kk];
            if coeff == T::zero() {
                continue;
            }
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + coeff * *bv;
            }
        }
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}
