//! Small-matrix GEMM kernels for the network shapes (M, K <= ~32, N large).
//!
//! The general-purpose packed GEMM spends more time packing than computing at
//! these sizes; here A stays in L1 and B streams row-wise per column block.
//! AVX2+FMA code paths are runtime-dispatched; results are deterministic on a
//! given machine.

use ndarray::Array2;

/// out = a . b (allocates out). `a` is (m, k), `b` is (k, n), both standard
/// row-major layout.
pub fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(k, kb, "inner dimensions differ");
    let a_s = a.as_slice().expect("a must be standard layout");
    let b_s = b.as_slice().expect("b must be standard layout");
    // every element is written exactly once below
    let mut out = Array2::uninit((m, n));
    let o_s = unsafe {
        std::slice::from_raw_parts_mut(out.as_mut_ptr() as *mut f64, m * n)
    };
    dispatch_mm(a_s, b_s, o_s, m, k, n, false);
    unsafe { out.assume_init() }
}

/// out += a . b.
pub fn matmul_add(a: &Array2<f64>, b: &Array2<f64>, out: &mut Array2<f64>) {
    let (m, k) = a.dim();
    let (kb, n) = b.dim();
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!(out.dim(), (m, n));
    let a_s = a.as_slice().expect("a must be standard layout");
    let b_s = b.as_slice().expect("b must be standard layout");
    let o_s = out.as_slice_mut().expect("out must be standard layout");
    dispatch_mm(a_s, b_s, o_s, m, k, n, true);
}

/// out += a . b^T (both row-major); the weight-gradient shape
/// (m, n_cols) . (n, n_cols)^T -> (m, n). Inner loops are contiguous row
/// dot products.
pub fn matmul_abt_add(a: &Array2<f64>, b: &Array2<f64>, out: &mut Array2<f64>) {
    let (m, kc) = a.dim();
    let (n, kc2) = b.dim();
    assert_eq!(kc, kc2, "column counts differ");
    assert_eq!(out.dim(), (m, n));
    let a_s = a.as_slice().expect("a must be standard layout");
    let b_s = b.as_slice().expect("b must be standard layout");
    let o_s = out.as_slice_mut().expect("out must be standard layout");
    #[cfg(target_arch = "x86_64")]
    {
        if avx2_available() {
            unsafe { mm_abt_avx2(a_s, b_s, o_s, m, kc, n) };
            return;
        }
    }
    mm_abt_generic(a_s, b_s, o_s, m, kc, n);
}

/// a^T . b where a is small (k, m): transpose-copy a, then [`matmul`].
pub fn matmul_atb(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (k, m) = a.dim();
    let mut at = Array2::zeros((m, k));
    for i in 0..k {
        for j in 0..m {
            at[[j, i]] = a[[i, j]];
        }
    }
    matmul(&at, b)
}

#[cfg(target_arch = "x86_64")]
pub(crate) fn avx2_available() -> bool {
    use std::sync::OnceLock;
    static AVX2: OnceLock<bool> = OnceLock::new();
    *AVX2.get_or_init(|| {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    })
}

fn dispatch_mm(a: &[f64], b: &[f64], o: &mut [f64], m: usize, k: usize, n: usize, acc: bool) {
    #[cfg(target_arch = "x86_64")]
    {
        if avx2_available() {
            unsafe { mm_avx2(a, b, o, m, k, n, acc) };
            return;
        }
    }
    mm_generic(a, b, o, m, k, n, acc);
}

/// C(m,n) = A(m,k) B(k,n) over column blocks of 8; A rows and the B block
/// stay L1-resident. Raw-pointer inner loops keep bounds checks out of the
/// FMA chain; the wrapper asserts the slice extents.
///
/// # Safety
/// Caller guarantees dimensions match the slice lengths.
macro_rules! mm_body {
    ($a:ident, $b:ident, $o:ident, $m:ident, $k:ident, $n:ident, $acc:ident, $fma:literal) => {{
        debug_assert_eq!($a.len(), $m * $k);
        debug_assert_eq!($b.len(), $k * $n);
        debug_assert_eq!($o.len(), $m * $n);
        const W: usize = 8;
        let ap = $a.as_ptr();
        let bp = $b.as_ptr();
        let op = $o.as_mut_ptr();
        let mut j = 0usize;
        while j + W <= $n {
            for i in 0..$m {
                let arow = ap.add(i * $k);
                let mut acc = [0.0f64; W];
                for kk in 0..$k {
                    let aik = *arow.add(kk);
                    let brow = bp.add(kk * $n + j);
                    for t in 0..W {
                        if $fma {
                            acc[t] = aik.mul_add(*brow.add(t), acc[t]);
                        } else {
                            acc[t] += aik * *brow.add(t);
                        }
                    }
                }
                let orow = op.add(i * $n + j);
                if $acc {
                    for t in 0..W {
                        *orow.add(t) += acc[t];
                    }
                } else {
                    for t in 0..W {
                        *orow.add(t) = acc[t];
                    }
                }
            }
            j += W;
        }
        while j < $n {
            for i in 0..$m {
                let arow = ap.add(i * $k);
                let mut acc = 0.0f64;
                for kk in 0..$k {
                    if $fma {
                        acc = (*arow.add(kk)).mul_add(*bp.add(kk * $n + j), acc);
                    } else {
                        acc += *arow.add(kk) * *bp.add(kk * $n + j);
                    }
                }
                if $acc {
                    *op.add(i * $n + j) += acc;
                } else {
                    *op.add(i * $n + j) = acc;
                }
            }
            j += 1;
        }
    }};
}

/// C(m,n) += A(m,c) B(n,c)^T: contiguous-row dot products with four
/// independent accumulators.
macro_rules! mm_abt_body {
    ($a:ident, $b:ident, $o:ident, $m:ident, $kc:ident, $n:ident, $fma:literal) => {{
        debug_assert_eq!($a.len(), $m * $kc);
        debug_assert_eq!($b.len(), $n * $kc);
        debug_assert_eq!($o.len(), $m * $n);
        let ap = $a.as_ptr();
        let bp = $b.as_ptr();
        let op = $o.as_mut_ptr();
        for i in 0..$m {
            let arow = ap.add(i * $kc);
            for j in 0..$n {
                let brow = bp.add(j * $kc);
                let mut acc = [0.0f64; 4];
                let chunks = $kc / 4;
                for c in 0..chunks {
                    for t in 0..4 {
                        if $fma {
                            acc[t] = (*arow.add(c * 4 + t)).mul_add(*brow.add(c * 4 + t), acc[t]);
                        } else {
                            acc[t] += *arow.add(c * 4 + t) * *brow.add(c * 4 + t);
                        }
                    }
                }
                let mut tail = 0.0;
                for t in chunks * 4..$kc {
                    if $fma {
                        tail = (*arow.add(t)).mul_add(*brow.add(t), tail);
                    } else {
                        tail += *arow.add(t) * *brow.add(t);
                    }
                }
                *op.add(i * $n + j) += acc[0] + acc[1] + acc[2] + acc[3] + tail;
            }
        }
    }};
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2", enable = "fma")]
unsafe fn mm_avx2(a: &[f64], b: &[f64], o: &mut [f64], m: usize, k: usize, n: usize, acc: bool) {
    use std::arch::x86_64::*;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(o.len(), m * n);
    const W: usize = 8;
    let ap = a.as_ptr();
    let bp = b.as_ptr();
    let op = o.as_mut_ptr();
    let mut j = 0usize;
    while j + W <= n {
        for i in 0..m {
            let arow = ap.add(i * k);
            let mut acc0 = _mm256_setzero_pd();
            let mut acc1 = _mm256_setzero_pd();
            for kk in 0..k {
                let aik = _mm256_set1_pd(*arow.add(kk));
                let brow = bp.add(kk * n + j);
                acc0 = _mm256_fmadd_pd(aik, _mm256_loadu_pd(brow), acc0);
                acc1 = _mm256_fmadd_pd(aik, _mm256_loadu_pd(brow.add(4)), acc1);
            }
            let orow = op.add(i * n + j);
            if acc {
                acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(orow));
                acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(orow.add(4)));
            }
            _mm256_storeu_pd(orow, acc0);
            _mm256_storeu_pd(orow.add(4), acc1);
        }
        j += W;
    }
    while j < n {
        for i in 0..m {
            let arow = ap.add(i * k);
            let mut s = 0.0f64;
            for kk in 0..k {
                s = (*arow.add(kk)).mul_add(*bp.add(kk * n + j), s);
            }
            if acc {
                *op.add(i * n + j) += s;
            } else {
                *op.add(i * n + j) = s;
            }
        }
        j += 1;
    }
}

fn mm_generic(a: &[f64], b: &[f64], o: &mut [f64], m: usize, k: usize, n: usize, acc: bool) {
    unsafe { mm_body!(a, b, o, m, k, n, acc, false) }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2", enable = "fma")]
unsafe fn mm_abt_avx2(a: &[f64], b: &[f64], o: &mut [f64], m: usize, kc: usize, n: usize) {
    use std::arch::x86_64::*;
    debug_assert_eq!(a.len(), m * kc);
    debug_assert_eq!(b.len(), n * kc);
    debug_assert_eq!(o.len(), m * n);
    let ap = a.as_ptr();
    let bp = b.as_ptr();
    let op = o.as_mut_ptr();
    let chunks = kc / 8;
    for i in 0..m {
        let arow = ap.add(i * kc);
        for j in 0..n {
            let brow = bp.add(j * kc);
            let mut acc0 = _mm256_setzero_pd();
            let mut acc1 = _mm256_setzero_pd();
            for c in 0..chunks {
                let off = c * 8;
                acc0 = _mm256_fmadd_pd(
                    _mm256_loadu_pd(arow.add(off)),
                    _mm256_loadu_pd(brow.add(off)),
                    acc0,
                );
                acc1 = _mm256_fmadd_pd(
                    _mm256_loadu_pd(arow.add(off + 4)),
                    _mm256_loadu_pd(brow.add(off + 4)),
                    acc1,
                );
            }
            let acc = _mm256_add_pd(acc0, acc1);
            let hi = _mm256_extractf128_pd(acc, 1);
            let lo = _mm256_castpd256_pd128(acc);
            let sum2 = _mm_add_pd(lo, hi);
            let mut s = _mm_cvtsd_f64(_mm_add_sd(sum2, _mm_unpackhi_pd(sum2, sum2)));
            for t in chunks * 8..kc {
                s = (*arow.add(t)).mul_add(*brow.add(t), s);
            }
            *op.add(i * n + j) += s;
        }
    }
}

fn mm_abt_generic(a: &[f64], b: &[f64], o: &mut [f64], m: usize, kc: usize, n: usize) {
    unsafe { mm_abt_body!(a, b, o, m, kc, n, false) }
}
