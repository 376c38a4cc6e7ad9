//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use dda_core::camera::DistortionParams;
use dda_core::image::ImageTensor;
use dda_core::rng::Stream;

/// Border-clamped bilinear sample of channel `c` at pixel position `(x, y)`.
pub fn sample(img: &ImageTensor, c: usize, x: f64, y: f64) -> f64 {
    let (h, w) = (img.height(), img.width());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let g = |yy, xx| img.get(c, yy, xx) as f64;
    (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1.0 - fx) * g(y1, x0) + fx * g(y1, x1))
}

/// Radial multiplier written out term by term.
pub fn scale(p: &DistortionParams, r: f64) -> f64 {
    let l = p.lambdas;
    let s = l[0] * r.powi(2) + l[1] * r.powi(4) + l[2] * r.powi(6) + l[3] * r.powi(8);
    match p.model {
        dda_core::camera::RadialModel::Polynomial => 1.0 + s,
        dda_core::camera::RadialModel::Division => 1.0 / (1.0 + s),
    }
}

/// Solves `rho * scale(rho) = r` by a dense scan followed by Newton steps.
pub fn invert(p: &DistortionParams, r: f64) -> f64 {
    let f = |rho: f64| rho * scale(p, rho) - r;
    let n = 4096;
    let mut best = 0.0;
    for i in 0..=n {
        let rho = 2.0 * i as f64 / n as f64;
        if f(rho).abs() < f(best).abs() {
            best = rho;
        }
    }
    let mut rho = best;
    for _ in 0..50 {
        let d = (f(rho + 1e-7) - f(rho - 1e-7)) / 2e-7;
        rho -= f(rho) / d;
    }
    rho
}

fn to_norm(p: f64, n: usize) -> f64 {
    (2.0 * p + 1.0) / n as f64 - 1.0
}

fn to_pixel(u: f64, n: usize) -> f64 {
    ((u + 1.0) * n as f64 - 1.0) / 2.0
}

/// Distorts then rectifies `img` (square, centre at the image centre)
/// with two bilinear resamplings.
pub fn double_warp(img: &ImageTensor, p: &DistortionParams) -> ImageTensor {
    let n = img.width();
    let fill = -1.0;
    let inside = |q: f64| q >= 0.0 && q <= (n - 1) as f64;
    let fish = ImageTensor::from_fn(img.channels(), n, n, |c, y, x| {
        let (u, v) = (to_norm(x as f64, n), to_norm(y as f64, n));
        let s = scale(p, (u * u + v * v).sqrt());
        let (px, py) = (to_pixel(s * u, n), to_pixel(s * v, n));
        if inside(px) && inside(py) {
            sample(img, c, px, py) as f32
        } else {
            fill
        }
    });
    ImageTensor::from_fn(img.channels(), n, n, |c, y, x| {
        let (u, v) = (to_norm(x as f64, n), to_norm(y as f64, n));
        let r = (u * u + v * v).sqrt();
        let k = if r == 0.0 { 1.0 } else { invert(p, r) / r };
        sample(&fish, c, to_pixel(k * u, n), to_pixel(k * v, n)) as f32
    })
}

/// PSNR on the central `[n/4, 3n/4)` square, values in `[-1, 1]`.
pub fn interior_psnr(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let n = a.width();
    let mut se = 0.0;
    let mut count = 0.0;
    for c in 0..a.channels() {
        for y in n / 4..3 * n / 4 {
            for x in n / 4..3 * n / 4 {
                let d = (a.get(c, y, x) as f64 - b.get(c, y, x) as f64) / 2.0;
                se += d * d;
                count += 1.0;
            }
        }
    }
    10.0 * (count / se).log10()
}

/// Monotone polynomial draws from the default synthetic range.
pub fn polynomial_draws(seed: u64, count: usize) -> Vec<DistortionParams> {
    let mut rng = Stream::new(seed);
    let (lo, hi) = ([0.2, 0.0, 0.0, 0.0], [0.35, 0.08, 0.04, 0.02]);
    let mut out = Vec::new();
    while out.len() < count {
        let l: [f64; 4] = std::array::from_fn(|i| rng.uniform(lo[i], hi[i]));
        let p = DistortionParams::polynomial(l);
        if p.is_monotone() {
            out.push(p);
        }
    }
    out
}
