//! Dense row-major f64 matrices and the handful of kernels the network
//! needs. Matmuls dispatch to an AVX2+FMA path when the CPU supports it;
//! both paths accumulate in the same order, so results are reproducible
//! for a fixed build and machine.

use std::fmt;
use std::sync::OnceLock;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        assert_eq!(rows * cols, data.len());
        Matrix { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

fn has_fma() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

fn has_avx512() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            std::arch::is_x86_feature_detected!("avx512f")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

// C += A * B with A [m,k], B [k,n]: ikj ordering, two A-rows per pass.
macro_rules! matmul_body {
    ($a:expr, $b:expr, $c:expr, $m:expr, $k:expr, $n:expr) => {{
        let (a, b, c, m, k, n) = ($a, $b, $c, $m, $k, $n);
        let mut i = 0;
        while i + 2 <= m {
            let (a0, a1) = (&a[i * k..(i + 1) * k], &a[(i + 1) * k..(i + 2) * k]);
            let (c0, c1) = c[i * n..(i + 2) * n].split_at_mut(n);
            for p in 0..k {
                let (av0, av1) = (a0[p], a1[p]);
                let brow = &b[p * n..(p + 1) * n];
                for ((x0, x1), &bv) in c0.iter_mut().zip(c1.iter_mut()).zip(brow.iter()) {
                    *x0 += av0 * bv;
                    *x1 += av1 * bv;
                }
            }
            i += 2;
        }
        while i < m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *cv += av * bv;
                }
            }
            i += 1;
        }
    }};
}

// Register-tiled microkernel: an MR x 8 block of C stays in ymm
// accumulators across the whole k loop, so each k step is two B loads, MR
// broadcasts, and 2*MR fused multiply-adds.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tile_fma<const MR: usize>(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    i0: usize,
    j0: usize,
    k: usize,
    n: usize,
) {
    use std::arch::x86_64::*;
    let mut acc0 = [_mm256_setzero_pd(); MR];
    let mut acc1 = [_mm256_setzero_pd(); MR];
    for p in 0..k {
        let brow = b.as_ptr().add(p * n + j0);
        let b0 = _mm256_loadu_pd(brow);
        let b1 = _mm256_loadu_pd(brow.add(4));
        for i in 0..MR {
            let av = _mm256_set1_pd(*a.get_unchecked((i0 + i) * k + p));
            acc0[i] = _mm256_fmadd_pd(av, b0, acc0[i]);
            acc1[i] = _mm256_fmadd_pd(av, b1, acc1[i]);
        }
    }
    for i in 0..MR {
        let crow = c.as_mut_ptr().add((i0 + i) * n + j0);
        _mm256_storeu_pd(crow, _mm256_add_pd(_mm256_loadu_pd(crow), acc0[i]));
        _mm256_storeu_pd(crow.add(4), _mm256_add_pd(_mm256_loadu_pd(crow.add(4)), acc1[i]));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn matmul_acc_fma(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let n8 = n - n % 8;
    let mut i0 = 0;
    while i0 < m {
        let mr = (m - i0).min(6);
        let mut j0 = 0;
        while j0 < n8 {
            match mr {
                6 => tile_fma::<6>(a, b, c, i0, j0, k, n),
                5 => tile_fma::<5>(a, b, c, i0, j0, k, n),
                4 => tile_fma::<4>(a, b, c, i0, j0, k, n),
                3 => tile_fma::<3>(a, b, c, i0, j0, k, n),
                2 => tile_fma::<2>(a, b, c, i0, j0, k, n),
                _ => tile_fma::<1>(a, b, c, i0, j0, k, n),
            }
            j0 += 8;
        }
        // remainder columns
        if n8 < n {
            for i in i0..i0 + mr {
                for p in 0..k {
                    let av = a[i * k + p];
                    let brow = &b[p * n + n8..(p + 1) * n];
                    for (cv, &bv) in c[i * n + n8..(i + 1) * n].iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        i0 += mr;
    }
}

// Same tiling with 512-bit vectors: an MR x 16 block of C per pass.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn tile_avx512<const MR: usize>(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    i0: usize,
    j0: usize,
    k: usize,
    n: usize,
) {
    use std::arch::x86_64::*;
    let mut acc0 = [_mm512_setzero_pd(); MR];
    let mut acc1 = [_mm512_setzero_pd(); MR];
    for p in 0..k {
        let brow = b.as_ptr().add(p * n + j0);
        let b0 = _mm512_loadu_pd(brow);
        let b1 = _mm512_loadu_pd(brow.add(8));
        for i in 0..MR {
            let av = _mm512_set1_pd(*a.get_unchecked((i0 + i) * k + p));
            acc0[i] = _mm512_fmadd_pd(av, b0, acc0[i]);
            acc1[i] = _mm512_fmadd_pd(av, b1, acc1[i]);
        }
    }
    for i in 0..MR {
        let crow = c.as_mut_ptr().add((i0 + i) * n + j0);
        _mm512_storeu_pd(crow, _mm512_add_pd(_mm512_loadu_pd(crow), acc0[i]));
        _mm512_storeu_pd(crow.add(8), _mm512_add_pd(_mm512_loadu_pd(crow.add(8)), acc1[i]));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn matmul_acc_avx512(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let n16 = n - n % 16;
    let mut i0 = 0;
    while i0 < m {
        let mr = (m - i0).min(6);
        let mut j0 = 0;
        while j0 < n16 {
            match mr {
                6 => tile_avx512::<6>(a, b, c, i0, j0, k, n),
                5 => tile_avx512::<5>(a, b, c, i0, j0, k, n),
                4 => tile_avx512::<4>(a, b, c, i0, j0, k, n),
                3 => tile_avx512::<3>(a, b, c, i0, j0, k, n),
                2 => tile_avx512::<2>(a, b, c, i0, j0, k, n),
                _ => tile_avx512::<1>(a, b, c, i0, j0, k, n),
            }
            j0 += 16;
        }
        if n16 < n {
            for i in i0..i0 + mr {
                for p in 0..k {
                    let av = a[i * k + p];
                    let brow = &b[p * n + n16..(p + 1) * n];
                    for (cv, &bv) in c[i * n + n16..(i + 1) * n].iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        i0 += mr;
    }
}

fn matmul_acc_generic(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    matmul_body!(a, b, c, m, k, n)
}

fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // safety: feature presence checked at runtime
    #[cfg(target_arch = "x86_64")]
    if n >= 16 && has_avx512() {
        unsafe { matmul_acc_avx512(a, b, c, m, k, n) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        unsafe { matmul_acc_fma(a, b, c, m, k, n) };
        return;
    }
    matmul_acc_generic(a, b, c, m, k, n);
}

/// C = A * B.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut c = Matrix::zeros(a.rows, b.cols);
    matmul_acc(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
    c
}

/// C += A * B.
pub fn matmul_into(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.cols);
    matmul_acc(&a.data, &b.data, &mut c.data, a.rows, a.cols, b.cols);
}

/// C = A * B^T with A [m,k], B [n,k].
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
    let (m, n) = (a.rows, b.rows);
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for j in 0..n {
            let brow = b.row(j);
            crow[j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C += A^T * B with A [k,m], B [k,n].
pub fn matmul_tn_into(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch");
    assert_eq!(c.rows, a.cols);
    assert_eq!(c.cols, b.cols);
    let (k, m, n) = (a.rows, a.cols, b.cols);
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for i in 0..m {
            let av = arow[i];
            let crow = &mut c.data[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
}

pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(a.cols, b.cols);
    matmul_tn_into(a, b, &mut c);
    c
}
