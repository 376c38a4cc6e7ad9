//! 2-D convolution through im2col and a strided matrix product.

use crate::gemm::{gemm, MatRef};
use crate::{Exec, Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        assert!(self.h + 2 * self.pad >= self.k && self.w + 2 * self.pad >= self.k);
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Rows of the patch matrix.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one `c_in x h x w` sample into a `(c_in*k*k) x (ho*wo)` matrix.
pub fn im2col<T: Float>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let (k, s, pad) = (g.k, g.stride, g.pad as isize);
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s) as isize - pad + ky as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s) as isize - pad + kx as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back into the image.
pub fn col2im<T: Float>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let (k, s, pad) = (g.k, g.stride, g.pad as isize);
    x.fill(T::zero());
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s) as isize - pad + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * s) as isize - pad + kx as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geom<T: Float>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> ConvGeom {
    let (_, c_in, h, wd) = x.dims4();
    let (_, wc, kh, kw) = w.dims4();
    assert_eq!(wc, c_in, "conv weight expects {wc} input channels, got {c_in}");
    assert_eq!(kh, kw, "only square kernels are supported");
    assert!(stride >= 1);
    ConvGeom { c_in, h, w: wd, k: kh, stride, pad }
}

/// `y = conv(x, w) + b` for `x: [N, Ci, H, W]`, `w: [Co, Ci, k, k]`, `b: [Co]`.
pub fn conv2d_forward<T: Float>(
    exec: Exec,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = geom(x, w, stride, pad);
    let n = x.shape()[0];
    let co = w.shape()[0];
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let kk = g.patch_len();
    let in_len = g.c_in * g.h * g.w;
    if let Some(b) = b {
        assert_eq!(b.shape(), [co], "bias shape");
    }
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    let xd = x.data();
    exec.for_each_chunk(out.data_mut(), co * p, |i, y| {
        let xs = &xd[i * in_len..(i + 1) * in_len];
        let owned;
        let col: &[T] = if g.is_pointwise() {
            xs
        } else {
            let mut buf = vec![T::zero(); kk * p];
            im2col(xs, &g, &mut buf);
            owned = buf;
            &owned
        };
        gemm(
            exec,
            MatRef::row_major(w.data(), co, kk),
            MatRef::row_major(col, kk, p),
            T::zero(),
            y,
        );
        if let Some(b) = b {
            for (c, row) in y.chunks_mut(p).enumerate() {
                let bc = b.data()[c];
                for v in row {
                    *v = *v + bc;
                }
            }
        }
    });
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] given the upstream gradient `dy`.
///
/// Per-sample weight gradients are reduced in sample order, independent of
/// the execution mode.
pub fn conv2d_backward<T: Float>(
    exec: Exec,
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> ConvGrads<T> {
    let g = geom(x, w, stride, pad);
    let n = x.shape()[0];
    let co = w.shape()[0];
    let (ho, wo) = g.out_hw();
    assert_eq!(dy.shape(), [n, co, ho, wo], "upstream gradient shape");
    let p = ho * wo;
    let kk = g.patch_len();
    let in_len = g.c_in * g.h * g.w;
    let xd = x.data();
    let dyd = dy.data();

    let per_sample = exec.map(n, |i| {
        let xs = &xd[i * in_len..(i + 1) * in_len];
        let dys = &dyd[i * co * p..(i + 1) * co * p];
        let owned;
        let col: &[T] = if g.is_pointwise() {
            xs
        } else {
            let mut buf = vec![T::zero(); kk * p];
            im2col(xs, &g, &mut buf);
            owned = buf;
            &owned
        };
        let mut dw = vec![T::zero(); co * kk];
        gemm(
            exec,
            MatRef::row_major(dys, co, p),
            MatRef::transposed(col, p, kk),
            T::zero(),
            &mut dw,
        );
        let db: Vec<T> = dys.chunks(p).map(|r| r.iter().copied().sum()).collect();
        let dx = need_dx.then(|| {
            let mut dcol = vec![T::zero(); kk * p];
            gemm(
                exec,
                MatRef::transposed(w.data(), kk, co),
                MatRef::row_major(dys, co, p),
                T::zero(),
                &mut dcol,
            );
            if g.is_pointwise() {
                dcol
            } else {
                let mut dx = vec![T::zero(); in_len];
                col2im(&dcol, &g, &mut dx);
                dx
            }
        });
        (dx, dw, db)
    });

    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let mut dx = need_dx.then(|| Vec::with_capacity(n * in_len));
    for (sdx, sdw, sdb) in per_sample {
        for (a, b) in dw.data_mut().iter_mut().zip(sdw) {
            *a = *a + b;
        }
        for (a, b) in db.data_mut().iter_mut().zip(sdb) {
            *a = *a + b;
        }
        if let (Some(acc), Some(s)) = (dx.as_mut(), sdx) {
            acc.extend(s);
        }
    }
    ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(x.shape(), d)),
        dw,
        db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution.
    fn direct(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, pad: usize) -> Tensor<f64> {
        let (n, ci, h, wd) = x.dims4();
        let (co, _, k, _) = w.dims4();
        let ho = (h + 2 * pad - k) / s + 1;
        let wo = (wd + 2 * pad - k) / s + 1;
        let mut y = Tensor::zeros(&[n, co, ho, wo]);
        for i in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - pad as isize;
                                    let ix = (ox * s + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((i * ci + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * ci + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((i * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(shape: &[usize], f: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + 1.0) * f).sin()).collect())
    }

    #[test]
    fn forward_matches_direct_loops() {
        for (s, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1)] {
            let x = ramp(&[2, 3, 7, 6], 0.3);
            let w = ramp(&[4, 3, k, k], 0.7);
            let b = ramp(&[4], 1.3);
            let want = direct(&x, &w, &b, s, pad);
            let got = conv2d_forward(Exec::Sequential, &x, &w, Some(&b), s, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { c_in: 2, h: 5, w: 6, k: 3, stride: 2, pad: 1 };
        let (ho, wo) = g.out_hw();
        let x = ramp(&[2 * 5 * 6], 0.9);
        let c = ramp(&[g.patch_len() * ho * wo], 0.4);
        let mut col = vec![0.0; c.len()];
        im2col(x.data(), &g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(c.data(), &g, &mut back);
        let lhs: f64 = col.iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = back.iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
