//! One-pass network: a convolutional encoder-decoder mapping a fisheye image
//! to a two-channel rectification flow, bounded by a scaled `tanh`.

use dda_tensor::{Float, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{conv, Bound, Init, ParamSet};
use crate::camera::pixel_to_norm;
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpnConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Encoder widths; the decoder mirrors them.
    pub widths: Vec<usize>,
    /// Per-layer stride, 1 or 2; the first must be 1.
    pub strides: Vec<usize>,
    pub kernel: usize,
    /// Maximum displacement as a fraction of the image width.
    pub max_flow: f64,
    /// Append `(x, y, r^2)` coordinate planes to the input.
    pub coord_channels: bool,
    /// Subtract each image's mean flow. Rectification about a centred
    /// distortion has no net translation, and without this the network is
    /// free to learn a global shift that the conditional denoiser then
    /// absorbs. Doubles the worst-case bound on any one displacement.
    #[serde(default)]
    pub zero_mean_flow: bool,
}

impl OpnConfig {
    pub fn desk(image_size: usize, channels: usize) -> Self {
        OpnConfig {
            image_size,
            channels,
            widths: vec![8, 8, 16, 32, 64, 128],
            strides: vec![1, 2, 2, 2, 2, 1],
            kernel: 3,
            max_flow: 0.3,
            coord_channels: true,
            zero_mean_flow: true,
        }
    }

    /// Widths from the original full-scale description (256x256 inputs).
    pub fn paper(image_size: usize, channels: usize) -> Self {
        OpnConfig { widths: vec![32, 32, 64, 128, 256, 512], ..Self::desk(image_size, channels) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("OPN config: {m}")));
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return bad("widths and strides must be non-empty and of equal length");
        }
        if self.strides[0] != 1 || self.strides.iter().any(|&s| s != 1 && s != 2) {
            return bad("strides must be 1 or 2, starting with 1");
        }
        let down: usize = self.strides.iter().product();
        if self.image_size % down != 0 {
            return bad("image size must be divisible by the total stride");
        }
        if self.kernel % 2 == 0 || self.widths.contains(&0) || self.channels == 0 {
            return bad("kernel must be odd and widths positive");
        }
        if !(self.max_flow > 0.0 && self.max_flow.is_finite()) {
            return bad("max_flow must be positive");
        }
        Ok(())
    }

    fn in_channels(&self) -> usize {
        self.channels + if self.coord_channels { 3 } else { 0 }
    }

    pub fn max_flow_pixels(&self) -> f64 {
        self.max_flow * self.image_size as f64
    }

    /// Largest displacement `flow` can return, in pixels.
    pub fn flow_bound_pixels(&self) -> f64 {
        self.max_flow_pixels() * if self.zero_mean_flow { 2.0 } else { 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Opn {
    pub config: OpnConfig,
}

impl Opn {
    pub fn new(config: OpnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Opn { config })
    }

    /// Fresh parameters; the output layer starts at zero so the initial flow
    /// is exactly zero.
    pub fn init<T: Float>(&self, rng: &mut Stream) -> ParamSet<T> {
        let c = &self.config;
        let k = c.kernel;
        let mut init = Init { rng };
        let mut p = ParamSet::new();
        let mut cin = c.in_channels();
        for (i, &w) in c.widths.iter().enumerate() {
            p.push(format!("enc{i}.w"), init.conv(w, cin, k));
            p.push(format!("enc{i}.b"), Tensor::zeros(&[w]));
            cin = w;
        }
        let l = c.widths.len();
        for i in (1..l).rev() {
            let cout = c.widths[i - 1];
            p.push(format!("dec{i}.w"), init.conv(cout, cin, k));
            p.push(format!("dec{i}.b"), Tensor::zeros(&[cout]));
            cin = 2 * cout;
        }
        p.push("out.w", Tensor::zeros(&[2, cin, k, k]));
        p.push("out.b", Tensor::zeros(&[2]));
        p
    }

    /// Parameter count from the config alone.
    pub fn param_count(&self) -> usize {
        let c = &self.config;
        let kk = c.kernel * c.kernel;
        let mut n = 0;
        let mut cin = c.in_channels();
        for &w in &c.widths {
            n += w * cin * kk + w;
            cin = w;
        }
        for i in (1..c.widths.len()).rev() {
            let cout = c.widths[i - 1];
            n += cout * cin * kk + cout;
            cin = 2 * cout;
        }
        n + 2 * cin * kk + 2
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.channels || shape[2] != c.image_size || shape[3] != c.image_size {
            return Err(Error::Shape(format!(
                "OPN expects [N, {}, {}, {}], got {shape:?}",
                c.channels, c.image_size, c.image_size
            )));
        }
        Ok(())
    }

    fn coords<T: Float>(&self, n: usize) -> Tensor<T> {
        let s = self.config.image_size;
        let mut plane = vec![T::zero(); 3 * s * s];
        for y in 0..s {
            let v = pixel_to_norm(y as f64, s);
            for x in 0..s {
                let u = pixel_to_norm(x as f64, s);
                let i = y * s + x;
                plane[i] = T::of(u);
                plane[s * s + i] = T::of(v);
                plane[2 * s * s + i] = T::of(u * u + v * v);
            }
        }
        let mut data = Vec::with_capacity(n * plane.len());
        for _ in 0..n {
            data.extend_from_slice(&plane);
        }
        Tensor::from_vec(&[n, 3, s, s], data)
    }

    /// Records the flow `[N, 2, H, W]` (pixels, channel 0 horizontal).
    pub fn flow<T: Float>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        self.check_input(g.shape(f))?;
        let c = &self.config;
        let mut x = f;
        if c.coord_channels {
            let xy = g.input(self.coords(g.shape(f)[0]));
            x = g.concat(&[f, xy]);
        }
        let mut skips = Vec::with_capacity(c.widths.len());
        for (i, &s) in c.strides.iter().enumerate() {
            let h = conv(g, p, &format!("enc{i}"), x, s);
            x = g.silu(h);
            skips.push(x);
        }
        for i in (1..c.widths.len()).rev() {
            let h = conv(g, p, &format!("dec{i}"), x, 1);
            let mut h = g.silu(h);
            if c.strides[i] == 2 {
                h = g.upsample2x(h);
            }
            x = g.concat(&[h, skips[i - 1]]);
        }
        let raw = conv(g, p, "out", x, 1);
        let squashed = g.tanh(raw);
        let flow = g.scale(squashed, T::of(c.max_flow_pixels()));
        Ok(if c.zero_mean_flow { g.center_planes(flow) } else { flow })
    }

    /// Records `warp(F, flow(F))` and returns `(corrected, flow)`.
    pub fn correct<T: Float>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<(Var, Var)> {
        let flow = self.flow(g, p, f)?;
        Ok((g.warp(f, flow), flow))
    }
}
