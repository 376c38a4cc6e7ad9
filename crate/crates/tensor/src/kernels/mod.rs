pub mod conv;
pub mod norm;
pub mod warp;

use crate::{Exec, Float, Tensor};

/// Nearest-neighbour 2x upsampling of an NCHW batch.
pub fn upsample2x_forward<T: Float>(exec: Exec, x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, c, h2, w2]);
    let xd = x.data();
    exec.for_each_chunk(out.data_mut(), h2 * w2, |plane, o| {
        let s = &xd[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                o[y * w2 + xx] = s[(y / 2) * w + xx / 2];
            }
        }
    });
    out
}

pub fn upsample2x_backward<T: Float>(exec: Exec, x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let w2 = 2 * w;
    let mut dx = Tensor::zeros(x_shape);
    let dd = dy.data();
    exec.for_each_chunk(dx.data_mut(), h * w, |plane, o| {
        let s = &dd[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let a = (2 * y) * w2 + 2 * x;
                o[y * w + x] = s[a] + s[a + 1] + s[a + w2] + s[a + w2 + 1];
            }
        }
    });
    dx
}
