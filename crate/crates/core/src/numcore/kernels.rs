//! Slice-level numeric kernels shared by the tape and the plain attention paths.
//! All matrices are row-major; every `gemm_*` accumulates into `out`.

use crate::error::{Error, Result};

/// `out(m×n) += a(m×k) · b(k×n)`
pub fn gemm_nn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&x, brow) in arow.iter().zip(b.chunks_exact(n)) {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

/// `out(m×n) += a(m×k) · b(n×k)ᵀ`
pub fn gemm_nt(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (o, brow) in orow.iter_mut().zip(b.chunks_exact(k)) {
            *o += dot(arow, brow);
        }
    }
}

/// `out(m×n) += a(k×m)ᵀ · b(k×n)`
pub fn gemm_tn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for (arow, brow) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&x, orow) in arow.iter().zip(out.chunks_exact_mut(n)) {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize the reduction
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Row softmax with row-max subtraction. Masked-out entries (`false`) are 0.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let allowed = |j: usize| mask.is_none_or(|m| m[i * cols + j]);
        let max = (0..cols).filter(|&j| allowed(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: i });
        }
        let orow = &mut out[i * cols..(i + 1) * cols];
        let mut total = 0.0;
        for j in 0..cols {
            if allowed(j) {
                let e = (row[j] - max).exp();
                orow[j] = e;
                total += e;
            }
        }
        orow.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}
