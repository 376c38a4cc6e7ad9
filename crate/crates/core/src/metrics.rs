//! PSNR, SSIM and MS-SSIM on `[-1, 1]` images, rescaled internally to `[0, 1]`.

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Mask};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn unit(v: f32) -> f64 {
    (v as f64 + 1.0) * 0.5
}

fn check_pair(a: &ImageTensor, b: &ImageTensor, mask: Option<&Mask>) -> Result<()> {
    a.ensure_same_shape(b, "metric inputs")?;
    if let Some(m) = mask {
        if (m.height(), m.width()) != (a.height(), a.width()) {
            return Err(Error::Shape(format!(
                "mask {}x{} for image {}x{}",
                m.height(),
                m.width(),
                a.height(),
                a.width()
            )));
        }
    }
    Ok(())
}

/// Mean squared error in `[0, 1]` units over masked pixels and all channels.
pub fn mse(a: &ImageTensor, b: &ImageTensor, mask: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, mask)?;
    let hw = a.height() * a.width();
    let (mut sum, mut n) = (0.0, 0usize);
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for i in 0..hw {
            if mask.is_none_or(|m| m.data()[i]) {
                let d = unit(pa[i]) - unit(pb[i]);
                sum += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Invalid("empty mask".into()));
    }
    Ok(sum / n as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`] when MSE < 1e-10.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, mask: Option<&Mask>) -> Result<f64> {
    let m = mse(a, b, mask)?;
    Ok(if m < 1e-10 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

struct SsimMaps {
    ssim: f64,
    cs: f64,
}

/// Mean SSIM and contrast-structure terms over all valid windows whose
/// centre is inside the mask.
fn ssim_terms(a: &[Vec<f64>], b: &[Vec<f64>], h: usize, w: usize, mask: Option<&Mask>) -> Result<SsimMaps> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Invalid(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let (c1, c2) = ((K1 * 1.0f64).powi(2), (K2 * 1.0f64).powi(2));
    let half = SSIM_WINDOW / 2;
    let (mut ssim_sum, mut cs_sum, mut n) = (0.0, 0.0, 0usize);
    for (pa, pb) in a.iter().zip(b) {
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                if let Some(m) = mask {
                    if !m.get(y + half, x + half) {
                        continue;
                    }
                }
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, gy) in g.iter().enumerate() {
                    for (dx, gx) in g.iter().enumerate() {
                        let k = gy * gx;
                        let i = (y + dy) * w + x + dx;
                        let (va, vb) = (pa[i], pb[i]);
                        mx += k * va;
                        my += k * vb;
                        xx += k * va * va;
                        yy += k * vb * vb;
                        xy += k * va * vb;
                    }
                }
                let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                let cs = (2.0 * sxy + c2) / (sx + sy + c2);
                let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                ssim_sum += lum * cs;
                cs_sum += cs;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Invalid("mask leaves no SSIM windows".into()));
    }
    Ok(SsimMaps { ssim: ssim_sum / n as f64, cs: cs_sum / n as f64 })
}

fn planes(img: &ImageTensor) -> Vec<Vec<f64>> {
    (0..img.channels()).map(|c| img.plane(c).iter().map(|&v| unit(v)).collect()).collect()
}

/// Windowed SSIM: 11x11 Gaussian window with sigma 1.5, k1 = 0.01, k2 = 0.03,
/// dynamic range 1, averaged over valid windows and channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, mask: Option<&Mask>) -> Result<f64> {
    check_pair(a, b, mask)?;
    Ok(ssim_terms(&planes(a), &planes(b), a.height(), a.width(), mask)?.ssim)
}

fn pool2(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(h2 * w2);
    for y in 0..h2 {
        for x in 0..w2 {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]));
        }
    }
    out
}

/// Number of dyadic scales at which the SSIM window still fits, at most 5.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let (mut h, mut w, mut n) = (h, w, 0);
    while n < MS_SSIM_WEIGHTS.len() && h >= SSIM_WINDOW && w >= SSIM_WINDOW {
        n += 1;
        h /= 2;
        w /= 2;
    }
    n
}

/// Standard weights truncated to `scales` entries and renormalized to sum 1.
pub fn ms_ssim_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Multi-scale SSIM with 2x2 average pooling between scales. Negative
/// per-scale terms are clamped to zero before exponentiation.
pub fn ms_ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b, None)?;
    let (mut h, mut w) = (a.height(), a.width());
    if h < 16 || w < 16 {
        return Err(Error::Invalid(format!("MS-SSIM needs at least 16x16, got {h}x{w}")));
    }
    let weights = ms_ssim_weights(ms_ssim_scales(h, w));
    let (mut pa, mut pb) = (planes(a), planes(b));
    let mut out = 1.0;
    for (j, wj) in weights.iter().enumerate() {
        let t = ssim_terms(&pa, &pb, h, w, None)?;
        let term = if j + 1 == weights.len() { t.ssim } else { t.cs };
        out *= term.max(0.0).powf(*wj);
        pa = pa.iter().map(|p| pool2(p, h, w)).collect();
        pb = pb.iter().map(|p| pool2(p, h, w)).collect();
        h /= 2;
        w /= 2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut s = Stream::new(seed);
        let data = (0..h * w).map(|_| s.uniform(-1.0, 1.0) as f32).collect();
        ImageTensor::new(1, h, w, data).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = ImageTensor::filled(1, 8, 8, -1.0);
        let b = ImageTensor::filled(1, 8, 8, 0.0);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &b, None).unwrap() - 10.0 * 4.0f64.log10()).abs() < 1e-12);
        let empty = Mask::new(8, 8, vec![false; 64]).unwrap();
        assert!(psnr(&a, &b, Some(&empty)).is_err());
    }

    #[test]
    fn psnr_mask_ignores_outside_pixels() {
        let a = random(1, 12, 12);
        let mut b = a.clone();
        b.set(0, 0, 0, -a.get(0, 0, 0) + 0.5);
        let mut m = vec![true; 144];
        m[0] = false;
        let m = Mask::new(12, 12, m).unwrap();
        assert_eq!(psnr(&a, &b, Some(&m)).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &b, None).unwrap() < PSNR_CAP);
    }

    #[test]
    fn ssim_basics() {
        let a = random(2, 16, 16);
        let b = random(3, 16, 16);
        assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, None).unwrap();
        assert!((ab - ssim(&b, &a, None).unwrap()).abs() < 1e-12);
        assert!(ab < 0.5);
        assert!(ssim(&random(4, 10, 16), &random(5, 10, 16), None).is_err());
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_negative() {
        let x = ImageTensor::from_fn(1, 16, 16, |_, y, x| if (y / 2 + x / 2) % 2 == 0 { 1.0 } else { -1.0 });
        let inv = ImageTensor::from_fn(1, 16, 16, |_, y, xx| -x.get(0, y, xx));
        assert!(ssim(&x, &inv, None).unwrap() < 0.0);
    }

    #[test]
    fn ms_ssim_scale_policy() {
        assert_eq!(ms_ssim_scales(32, 32), 2);
        assert_eq!(ms_ssim_scales(256, 256), 5);
        let w = ms_ssim_weights(2);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let a = random(6, 32, 32);
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ms_ssim(&random(7, 15, 15), &random(8, 15, 15)).is_err());
    }
}
