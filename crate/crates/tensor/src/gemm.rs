//! Strided matrix product on top of `matrixmultiply`, split over output
//! columns when running in parallel.

use crate::{Exec, Float};

/// A strided view of an `rows x cols` matrix inside a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major `cols x rows` matrix, viewed without copying.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, rs: 1, cs: rows }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

/// `c = a * b + beta * c` where `c` is row-major `a.rows x b.cols`.
pub fn gemm<T: Float>(exec: Exec, a: MatRef<T>, b: MatRef<T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v = *v * beta;
        }
        return;
    }
    const MIN_PAR_WORK: usize = 1 << 18;
    const COL_BLOCK: usize = 64;
    let blocks = n.div_ceil(COL_BLOCK);
    if exec.is_parallel() && m * n * k >= MIN_PAR_WORK && blocks > 1 {
        let cptr = SendPtr(c.as_mut_ptr());
        let cptr = &cptr;
        exec.map(blocks, |bi| {
            let j0 = bi * COL_BLOCK;
            let nb = COL_BLOCK.min(n - j0);
            // SAFETY: column blocks are disjoint and in bounds (checked above).
            unsafe {
                T::gemm_raw(
                    m,
                    k,
                    nb,
                    T::one(),
                    a.data.as_ptr(),
                    a.rs as isize,
                    a.cs as isize,
                    b.data.as_ptr().add(j0 * b.cs),
                    b.rs as isize,
                    b.cs as isize,
                    beta,
                    cptr.0.add(j0),
                    n as isize,
                    1,
                )
            }
        });
        return;
    }
    // SAFETY: bounds were checked for all three operands.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product() {
        let (m, k, n) = (5, 7, 300);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        for exec in [Exec::Sequential, Exec::Parallel] {
            let mut c = vec![0.0; m * n];
            gemm(exec, MatRef::row_major(&a, m, k), MatRef::row_major(&b, k, n), 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_views() {
        // a is stored as k x m, used as its transpose.
        let (m, k, n) = (3, 4, 2);
        let at: Vec<f64> = (0..k * m).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 + i as f64).collect();
        let mut a = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                a[i * k + p] = at[p * m + i];
            }
        }
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        gemm(Exec::Sequential, MatRef::transposed(&at, m, k), MatRef::row_major(&b, k, n), 0.0, &mut c);
        assert_eq!(c, want);
    }
}
