//! Backward bilinear sampling of an image batch along a per-pixel flow.
//!
//! `out[n, c, y, x] = src[n, c](y + flow[n, 1, y, x], x + flow[n, 0, y, x])`
//! with sample positions clamped to the border. Channel 0 of the flow is the
//! horizontal (column) displacement, channel 1 the vertical one, in pixels.

use crate::{Exec, Float, Tensor};

/// Bilinear taps for one sample position.
#[derive(Clone, Copy, Debug)]
pub struct Taps<T> {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub wx: T,
    pub wy: T,
    /// True when the horizontal coordinate hit the border clamp.
    pub clamped_x: bool,
    pub clamped_y: bool,
}

fn axis<T: Float>(pos: T, len: usize) -> (usize, usize, T, bool) {
    let hi = T::of((len - 1) as f64);
    if !(pos > T::zero()) {
        return (0, 1.min(len - 1), T::zero(), true);
    }
    if pos >= hi {
        return (len - 1, len - 1, T::zero(), true);
    }
    let f = pos.floor();
    let i0 = f.to_usize().unwrap_or(0).min(len - 1);
    (i0, (i0 + 1).min(len - 1), pos - f, false)
}

pub fn taps<T: Float>(sx: T, sy: T, w: usize, h: usize) -> Taps<T> {
    let (x0, x1, wx, clamped_x) = axis(sx, w);
    let (y0, y1, wy, clamped_y) = axis(sy, h);
    Taps { x0, x1, y0, y1, wx, wy, clamped_x, clamped_y }
}

/// Bilinear read of a single `h x w` plane with border clamping.
pub fn sample_plane<T: Float>(plane: &[T], w: usize, t: &Taps<T>) -> T {
    let v00 = plane[t.y0 * w + t.x0];
    let v01 = plane[t.y0 * w + t.x1];
    let v10 = plane[t.y1 * w + t.x0];
    let v11 = plane[t.y1 * w + t.x1];
    let one = T::one();
    (one - t.wy) * ((one - t.wx) * v00 + t.wx * v01) + t.wy * ((one - t.wx) * v10 + t.wx * v11)
}

fn check<T: Float>(src: &Tensor<T>, flow: &Tensor<T>) -> (usize, usize, usize, usize) {
    let (n, c, h, w) = src.dims4();
    assert_eq!(flow.shape(), [n, 2, h, w], "flow must be [N, 2, H, W] matching the source");
    (n, c, h, w)
}

pub fn warp_forward<T: Float>(exec: Exec, src: &Tensor<T>, flow: &Tensor<T>) -> Tensor<T> {
    let (_, c, h, w) = check(src, flow);
    let hw = h * w;
    let mut out = Tensor::zeros(src.shape());
    let (sd, fd) = (src.data(), flow.data());
    exec.for_each_chunk(out.data_mut(), c * hw, |n, o| {
        let f = &fd[n * 2 * hw..(n + 1) * 2 * hw];
        let s = &sd[n * c * hw..(n + 1) * c * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let t = taps(T::of(x as f64) + f[p], T::of(y as f64) + f[hw + p], w, h);
                for ch in 0..c {
                    o[ch * hw + p] = sample_plane(&s[ch * hw..(ch + 1) * hw], w, &t);
                }
            }
        }
    });
    out
}

pub struct WarpGrads<T> {
    pub dsrc: Tensor<T>,
    pub dflow: Tensor<T>,
}

pub fn warp_backward<T: Float>(exec: Exec, src: &Tensor<T>, flow: &Tensor<T>, dout: &Tensor<T>) -> WarpGrads<T> {
    let (n, c, h, w) = check(src, flow);
    assert_eq!(dout.shape(), src.shape());
    let hw = h * w;
    let (sd, fd, dd) = (src.data(), flow.data(), dout.data());
    let one = T::one();
    let parts = exec.map(n, |i| {
        let f = &fd[i * 2 * hw..(i + 1) * 2 * hw];
        let s = &sd[i * c * hw..(i + 1) * c * hw];
        let d = &dd[i * c * hw..(i + 1) * c * hw];
        let mut dsrc = vec![T::zero(); c * hw];
        let mut dflow = vec![T::zero(); 2 * hw];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let t = taps(T::of(x as f64) + f[p], T::of(y as f64) + f[hw + p], w, h);
                let (mut gx, mut gy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let g = d[ch * hw + p];
                    let plane = &s[ch * hw..(ch + 1) * hw];
                    let v00 = plane[t.y0 * w + t.x0];
                    let v01 = plane[t.y0 * w + t.x1];
                    let v10 = plane[t.y1 * w + t.x0];
                    let v11 = plane[t.y1 * w + t.x1];
                    gx = gx + g * ((one - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                    gy = gy + g * ((one - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                    let ds = &mut dsrc[ch * hw..(ch + 1) * hw];
                    ds[t.y0 * w + t.x0] = ds[t.y0 * w + t.x0] + g * (one - t.wy) * (one - t.wx);
                    ds[t.y0 * w + t.x1] = ds[t.y0 * w + t.x1] + g * (one - t.wy) * t.wx;
                    ds[t.y1 * w + t.x0] = ds[t.y1 * w + t.x0] + g * t.wy * (one - t.wx);
                    ds[t.y1 * w + t.x1] = ds[t.y1 * w + t.x1] + g * t.wy * t.wx;
                }
                if !t.clamped_x {
                    dflow[p] = gx;
                }
                if !t.clamped_y {
                    dflow[hw + p] = gy;
                }
            }
        }
        (dsrc, dflow)
    });
    let mut dsrc = Vec::with_capacity(src.len());
    let mut dflow = Vec::with_capacity(flow.len());
    for (a, b) in parts {
        dsrc.extend(a);
        dflow.extend(b);
    }
    WarpGrads {
        dsrc: Tensor::from_vec(src.shape(), dsrc),
        dflow: Tensor::from_vec(flow.shape(), dflow),
    }
}
