//! Strided row-major matrix products. All of them accumulate into `c`.

use super::Real;

/// `C[m×n] += A[m×k] · B[k×n]`
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_nn<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    for i in 0..m {
        let c_row = &mut c[i * ldc..i * ldc + n];
        for p in 0..k {
            let av = a[i * lda + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * ldb..p * ldb + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `C[m×n] += Aᵀ · B` with `A` stored `k×m` and `B` stored `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_tn<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    for p in 0..k {
        let b_row = &b[p * ldb..p * ldb + n];
        for i in 0..m {
            let av = a[p * lda + i];
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * ldc..i * ldc + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `C[m×n] += A · Bᵀ` with `A` stored `m×k` and `B` stored `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_nt<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    for i in 0..m {
        let a_row = &a[i * lda..i * lda + k];
        for j in 0..n {
            let b_row = &b[j * ldb..j * ldb + k];
            let dot: T = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            c[i * ldc + j] += dot;
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
