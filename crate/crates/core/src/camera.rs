//! Radial lens distortion: polynomial and division models, fisheye synthesis
//! by backward warping, ground-truth rectification flow, and flow warping.
//!
//! Coordinates are normalized to `[-1, 1]` across the image, with pixel `j`
//! of an `n`-pixel axis centred at `(2j + 1) / n - 1`. A fisheye point `p'`
//! maps to the perspective point `scale(r') * (p' - center)` measured from
//! the image centre, where `r' = |p' - center|`.

use std::f64::consts::SQRT_2;

use dda_tensor::kernels::warp::warp_forward;
use dda_tensor::{Exec, Float, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Mask};

/// Points in the monotonicity check over `[0, sqrt(2)]`.
pub const MONOTONE_GRID: usize = 1024;
pub const BISECTION_TOL: f64 = 1e-8;
pub const BISECTION_MAX_ITERS: usize = 200;
/// Fill for fisheye pixels whose source lies outside the perspective image.
pub const DEFAULT_FILL: f32 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadialModel {
    Polynomial,
    Division,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    pub model: RadialModel,
    /// Coefficients of `r^2, r^4, r^6, r^8`.
    pub lambdas: [f64; 4],
    /// Distortion centre in normalized coordinates.
    pub center: [f64; 2],
}

impl DistortionParams {
    pub fn identity() -> Self {
        Self::polynomial([0.0; 4])
    }

    pub fn polynomial(lambdas: [f64; 4]) -> Self {
        DistortionParams { model: RadialModel::Polynomial, lambdas, center: [0.0, 0.0] }
    }

    pub fn division(lambdas: [f64; 4]) -> Self {
        DistortionParams { model: RadialModel::Division, lambdas, center: [0.0, 0.0] }
    }

    pub fn with_center(mut self, center: [f64; 2]) -> Self {
        self.center = center;
        self
    }

    fn even_poly(&self, r: f64) -> f64 {
        let r2 = r * r;
        let [l1, l2, l3, l4] = self.lambdas;
        1.0 + r2 * (l1 + r2 * (l2 + r2 * (l3 + r2 * l4)))
    }

    /// Multiplier taking fisheye radii to perspective radii, unchecked.
    pub fn scale_unchecked(&self, r: f64) -> f64 {
        match self.model {
            RadialModel::Polynomial => self.even_poly(r),
            RadialModel::Division => 1.0 / self.even_poly(r),
        }
    }

    /// `r -> r * scale(r)`.
    pub fn radial_map(&self, r: f64) -> f64 {
        r * self.scale_unchecked(r)
    }

    fn check_finite(&self) -> Result<()> {
        if self.lambdas.iter().chain(&self.center).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("distortion parameters"))
        }
    }

    /// Verifies finiteness and that the radial map is strictly increasing on
    /// a 1024-point grid over `[0, sqrt(2)]`.
    pub fn check_monotone(&self) -> Result<()> {
        self.check_finite()?;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..MONOTONE_GRID {
            let r = SQRT_2 * i as f64 / (MONOTONE_GRID - 1) as f64;
            let s = self.scale_unchecked(r);
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::NonMonotone(format!("scale({r:.4}) = {s}")));
            }
            let m = r * s;
            if m <= prev {
                return Err(Error::NonMonotone(format!("map decreases at r = {r:.4}")));
            }
            prev = m;
        }
        Ok(())
    }

    pub fn is_monotone(&self) -> bool {
        self.check_monotone().is_ok()
    }

    /// Solves `r' * scale(r') = r` for `r'` by bisection.
    pub fn invert_radius(&self, r: f64) -> Result<f64> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Inversion { radius: r, reason: "radius must be finite and non-negative" });
        }
        if r == 0.0 {
            return Ok(0.0);
        }
        // The map is only known to be monotone on [0, sqrt(2)]; extend the
        // bracket past it only while it keeps increasing.
        let mut hi = SQRT_2;
        let mut doublings = 0;
        while self.radial_map(hi) < r {
            let next = 2.0 * hi;
            let (m, mn) = (self.radial_map(hi), self.radial_map(next));
            doublings += 1;
            if doublings > 16 || !mn.is_finite() || mn <= m || self.scale_unchecked(next) <= 0.0 {
                return Err(Error::Inversion { radius: r, reason: "no bracketing interval" });
            }
            hi = next;
        }
        let mut lo = 0.0;
        for _ in 0..BISECTION_MAX_ITERS {
            let mid = 0.5 * (lo + hi);
            if self.radial_map(mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= BISECTION_TOL {
                return Ok(0.5 * (lo + hi));
            }
        }
        Err(Error::Inversion { radius: r, reason: "bisection did not converge" })
    }
}

/// The radial multiplier at normalized radius `r_norm`: `1 + sum l_i r^2i`
/// for the polynomial model, its reciprocal for the division model.
pub fn radial_scale(r_norm: f64, params: &DistortionParams) -> Result<f64> {
    if !r_norm.is_finite() {
        return Err(Error::NonFinite("radius"));
    }
    if r_norm < 0.0 {
        return Err(Error::Invalid(format!("negative radius {r_norm}")));
    }
    params.check_finite()?;
    let s = params.scale_unchecked(r_norm);
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::NonFinite("radial scale"))
    }
}

pub fn pixel_to_norm(p: f64, size: usize) -> f64 {
    (2.0 * p + 1.0) / size as f64 - 1.0
}

pub fn norm_to_pixel(u: f64, size: usize) -> f64 {
    ((u + 1.0) * size as f64 - 1.0) * 0.5
}

fn inside(p: f64, size: usize) -> bool {
    p >= -0.5 && p <= size as f64 - 0.5
}

fn bilinear(plane: &[f32], w: usize, h: usize, px: f64, py: f64) -> f32 {
    let cx = px.clamp(0.0, (w - 1) as f64);
    let cy = py.clamp(0.0, (h - 1) as f64);
    let x0 = (cx.floor() as usize).min(w - 1);
    let y0 = (cy.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (wx, wy) = (cx - x0 as f64, cy - y0 as f64);
    let v = |y: usize, x: usize| plane[y * w + x] as f64;
    let top = (1.0 - wx) * v(y0, x0) + wx * v(y0, x1);
    let bot = (1.0 - wx) * v(y1, x0) + wx * v(y1, x1);
    ((1.0 - wy) * top + wy * bot) as f32
}

/// Renders the fisheye view of a square perspective image.
///
/// Each fisheye pixel is mapped to its perspective source and sampled
/// bilinearly. Sources outside the image get `fill` and a false mask entry.
pub fn synthesize_fisheye(
    perspective: &ImageTensor,
    params: &DistortionParams,
    fill: f32,
) -> Result<(ImageTensor, Mask)> {
    let (c, h, w) = perspective.shape();
    if h != w {
        return Err(Error::Shape(format!("fisheye synthesis needs a square image, got {h}x{w}")));
    }
    params.check_monotone()?;
    let mut out = ImageTensor::filled(c, h, w, fill);
    let mut mask = vec![false; h * w];
    let [cx, cy] = params.center;
    for y in 0..h {
        let v = pixel_to_norm(y as f64, h);
        for x in 0..w {
            let u = pixel_to_norm(x as f64, w);
            let (dx, dy) = (u - cx, v - cy);
            let s = params.scale_unchecked((dx * dx + dy * dy).sqrt());
            let (px, py) = (norm_to_pixel(s * dx, w), norm_to_pixel(s * dy, h));
            if !(inside(px, w) && inside(py, h)) {
                continue;
            }
            mask[y * w + x] = true;
            for ch in 0..c {
                out.set(ch, y, x, bilinear(perspective.plane(ch), w, h, px, py));
            }
        }
    }
    Ok((out, Mask::new(h, w, mask)?))
}

/// Per-pixel displacement, in pixels of the target grid, used for backward
/// sampling: `out(p) = src(p + flow(p))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    /// Interleaved `(dx, dy)` per pixel, row-major.
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_displacements(height, width, vec![0.0; 2 * height * width]).expect("zero flow is finite")
    }

    /// Builds a flow from interleaved `(dx, dy)` values; the valid mask marks
    /// pixels whose displaced position stays inside the source image.
    pub fn from_displacements(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * height * width {
            return Err(Error::Shape(format!("{} flow values for {height}x{width}", data.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("flow field"));
        }
        let valid = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width, i % width);
                inside(x as f64 + data[2 * i], width) && inside(y as f64 + data[2 * i + 1], height)
            })
            .collect();
        Ok(FlowField { height, width, data, valid })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::new(self.height, self.width, self.valid.clone()).expect("mask matches flow size")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `[1, 2, H, W]` tensor with horizontal displacements in channel 0.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let hw = self.height * self.width;
        let mut out = vec![T::zero(); 2 * hw];
        for i in 0..hw {
            out[i] = T::of(self.data[2 * i]);
            out[hw + i] = T::of(self.data[2 * i + 1]);
        }
        Tensor::from_vec(&[1, 2, self.height, self.width], out)
    }

    /// Sample `i` of a `[N, 2, H, W]` flow batch.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, i: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 2 || i >= s[0] {
            return Err(Error::Shape(format!("flow batch {s:?}, sample {i}")));
        }
        let (h, w) = (s[2], s[3]);
        let hw = h * w;
        let base = &t.data()[i * 2 * hw..(i + 1) * 2 * hw];
        let mut data = Vec::with_capacity(2 * hw);
        for p in 0..hw {
            data.push(base[p].as_f64());
            data.push(base[hw + p].as_f64());
        }
        Self::from_displacements(h, w, data)
    }
}

/// Flow that rectifies a fisheye image rendered with `params`: for each
/// perspective pixel it points at the fisheye location that images it.
/// Used for evaluation and reference tests only.
pub fn ground_truth_rectify_flow(params: &DistortionParams, height: usize, width: usize) -> Result<FlowField> {
    params.check_monotone()?;
    let [cx, cy] = params.center;
    let mut data = Vec::with_capacity(2 * height * width);
    for y in 0..height {
        let v = pixel_to_norm(y as f64, height);
        for x in 0..width {
            let u = pixel_to_norm(x as f64, width);
            let r = (u * u + v * v).sqrt();
            let (fu, fv) = if r == 0.0 {
                (cx, cy)
            } else {
                let k = params.invert_radius(r)? / r;
                (cx + k * u, cy + k * v)
            };
            data.push(norm_to_pixel(fu, width) - x as f64);
            data.push(norm_to_pixel(fv, height) - y as f64);
        }
    }
    FlowField::from_displacements(height, width, data)
}

/// Displacement, in normalized units, that the rectification flow applies at
/// a continuous perspective-side location.
pub fn rectify_displacement_at(params: &DistortionParams, u: f64, v: f64) -> Result<(f64, f64)> {
    let r = (u * u + v * v).sqrt();
    let [cx, cy] = params.center;
    if r == 0.0 {
        return Ok((cx, cy));
    }
    let k = params.invert_radius(r)? / r;
    Ok((cx + k * u - u, cy + k * v - v))
}

/// Backward bilinear warp `out(p) = src(p + flow(p))`, border-clamped.
pub fn warp(src: &ImageTensor, flow: &FlowField) -> Result<ImageTensor> {
    if (src.height(), src.width()) != (flow.height, flow.width) {
        return Err(Error::Shape(format!(
            "flow {}x{} for image {}x{}",
            flow.height,
            flow.width,
            src.height(),
            src.width()
        )));
    }
    let out = warp_forward(Exec::default(), &src.to_tensor::<f64>(), &flow.to_tensor::<f64>());
    ImageTensor::from_batch(&out, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(size: usize) -> ImageTensor {
        ImageTensor::from_fn(1, size, size, |_, y, x| {
            (0.7 * ((x as f32) * 0.35).sin() * ((y as f32) * 0.23).cos()).clamp(-1.0, 1.0)
        })
    }

    #[test]
    fn radial_scale_examples() {
        let zero = DistortionParams::identity();
        assert_eq!(radial_scale(0.5, &zero).unwrap(), 1.0);
        let p = DistortionParams::polynomial([0.3, -0.2, 0.1, 0.7]);
        assert_eq!(radial_scale(0.0, &p).unwrap(), 1.0);
        let q = DistortionParams::polynomial([0.2, 0.05, 0.0, 0.0]);
        assert!((radial_scale(1.0, &q).unwrap() - 1.25).abs() < 1e-15);
        let d = DistortionParams::division([0.2, 0.05, 0.0, 0.0]);
        assert!((radial_scale(1.0, &d).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn radial_scale_rejects_bad_input() {
        let p = DistortionParams::identity();
        assert!(matches!(radial_scale(f64::NAN, &p), Err(Error::NonFinite(_))));
        assert!(radial_scale(-0.1, &p).is_err());
        let bad = DistortionParams::polynomial([f64::INFINITY, 0.0, 0.0, 0.0]);
        assert!(radial_scale(0.5, &bad).is_err());
    }

    #[test]
    fn monotonicity_check() {
        assert!(DistortionParams::polynomial([0.3, 0.05, 0.01, 0.0]).is_monotone());
        // 1 - r^2 folds over before sqrt(2)
        assert!(!DistortionParams::polynomial([-1.0, 0.0, 0.0, 0.0]).is_monotone());
        // the division pole at r^2 = 1/0.6 lies inside the grid
        assert!(!DistortionParams::division([-0.6, 0.0, 0.0, 0.0]).is_monotone());
        assert!(DistortionParams::division([-0.2, -0.02, 0.0, 0.0]).is_monotone());
    }

    #[test]
    fn synthesis_identity_and_constant() {
        let img = scene(16);
        let (out, mask) = synthesize_fisheye(&img, &DistortionParams::identity(), DEFAULT_FILL).unwrap();
        assert!(mask.is_all());
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let p = DistortionParams::polynomial([0.3, 0.05, 0.0, 0.0]);
        let flat = ImageTensor::filled(2, 17, 17, 0.25);
        let (out, mask) = synthesize_fisheye(&flat, &p, DEFAULT_FILL).unwrap();
        assert!(mask.get(8, 8), "exact centre pixel must be valid");
        assert!(!mask.is_all(), "corners fall outside the source");
        for y in 0..17 {
            for x in 0..17 {
                let v = out.get(1, y, x);
                if mask.get(y, x) {
                    assert!((v - 0.25).abs() < 1e-6);
                } else {
                    assert_eq!(v, DEFAULT_FILL);
                }
            }
        }
    }

    #[test]
    fn synthesis_refuses_non_monotone_and_non_square() {
        let img = scene(8);
        let bad = DistortionParams::polynomial([-1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(synthesize_fisheye(&img, &bad, -1.0), Err(Error::NonMonotone(_))));
        let rect = ImageTensor::filled(1, 8, 9, 0.0);
        assert!(matches!(
            synthesize_fisheye(&rect, &DistortionParams::identity(), -1.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rectify_flow_identity_and_center() {
        let f = ground_truth_rectify_flow(&DistortionParams::identity(), 12, 12).unwrap();
        assert!(f.max_abs() < 1e-6);
        let p = DistortionParams::polynomial([0.25, 0.04, 0.01, 0.0]);
        assert_eq!(rectify_displacement_at(&p, 0.0, 0.0).unwrap(), (0.0, 0.0));
        // flow points inward for barrel distortion
        let f = ground_truth_rectify_flow(&p, 16, 16).unwrap();
        let (dx, dy) = f.at(0, 15);
        assert!(dx < 0.0 && dy > 0.0);
        assert!(f.valid_mask().is_all());
    }

    #[test]
    fn identity_law_composes_exactly() {
        let img = scene(20);
        let p = DistortionParams::identity();
        let (fish, _) = synthesize_fisheye(&img, &p, DEFAULT_FILL).unwrap();
        let back = warp(&fish, &ground_truth_rectify_flow(&p, 20, 20).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_is_two_sided() {
        for p in [
            DistortionParams::polynomial([0.35, 0.08, 0.04, 0.02]),
            DistortionParams::polynomial([0.1, 0.0, 0.0, 0.0]),
            DistortionParams::division([-0.3, -0.04, -0.01, 0.0]),
        ] {
            for i in 0..MONOTONE_GRID {
                let r = SQRT_2 * i as f64 / (MONOTONE_GRID - 1) as f64;
                let back = p.radial_map(p.invert_radius(r).unwrap());
                assert!((back - r).abs() < 1e-6, "forward-inverse at {r}");
                let again = p.invert_radius(p.radial_map(r)).unwrap();
                assert!((again - r).abs() < 1e-6, "inverse-forward at {r}");
            }
        }
    }

    #[test]
    fn warp_examples() {
        let img = scene(8);
        assert_eq!(warp(&img, &FlowField::zeros(8, 8)).unwrap(), img);
        let shift = FlowField::from_displacements(8, 8, [1.0, 0.0].repeat(64)).unwrap();
        let out = warp(&img, &shift).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.get(0, y, x), img.get(0, y, (x + 1).min(7)));
            }
        }
        assert!(warp(&img, &FlowField::zeros(8, 9)).is_err());
    }

    #[test]
    fn bilinear_reproduces_affine_fields() {
        let img = ImageTensor::from_fn(1, 10, 10, |_, y, x| 0.05 * x as f32 - 0.03 * y as f32 + 0.1);
        let mut d = Vec::new();
        for i in 0..100 {
            d.push(((i * 37 % 17) as f64 / 17.0 - 0.5) * 2.0);
            d.push(((i * 11 % 13) as f64 / 13.0 - 0.5) * 2.0);
        }
        let flow = FlowField::from_displacements(10, 10, d).unwrap();
        let out = warp(&img, &flow).unwrap();
        for y in 2..8 {
            for x in 2..8 {
                let (dx, dy) = flow.at(y, x);
                let want = 0.05 * (x as f64 + dx) - 0.03 * (y as f64 + dy) + 0.1;
                assert!((out.get(0, y, x) as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn flow_valid_mask_tracks_source_bounds() {
        let mut d = vec![0.0; 2 * 16];
        d[0] = -0.6; // pixel (0,0) pushed left of the image
        d[2 * 5 + 1] = 0.4; // pixel (1,1) pushed down but still inside
        let f = FlowField::from_displacements(4, 4, d).unwrap();
        let m = f.valid_mask();
        assert!(!m.get(0, 0));
        assert!(m.get(1, 1));
        assert_eq!(m.count(), 15);
    }
}
