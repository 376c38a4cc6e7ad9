//! Noise-prediction U-Net shared by the conditional and unconditional
//! modules. Image stacks are concatenated on the channel axis; the noise
//! level enters through a sinusoidal embedding and per-block FiLM modulation.

use dda_tensor::{Float, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{conv, linear, norm, Bound, Init, ParamSet};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_size: usize,
    /// Channels of one image stack.
    pub channels: usize,
    /// Image stacks concatenated at the input (noisy image first).
    pub stacks: usize,
    /// One width per scale; each scale after the first halves the resolution.
    pub widths: Vec<usize>,
    pub blocks_per_scale: usize,
    /// Sinusoidal embedding width (even).
    pub embed_dim: usize,
}

impl DenoiserConfig {
    pub fn desk(image_size: usize, channels: usize, stacks: usize) -> Self {
        DenoiserConfig { image_size, channels, stacks, widths: vec![16, 32, 64], blocks_per_scale: 1, embed_dim: 32 }
    }

    /// Widths from the original full-scale description.
    pub fn paper(image_size: usize, channels: usize, stacks: usize) -> Self {
        DenoiserConfig { widths: vec![64, 128, 256, 512], blocks_per_scale: 2, embed_dim: 128, ..Self::desk(image_size, channels, stacks) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("denoiser config: {m}")));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("need at least one scale with positive width");
        }
        if self.stacks == 0 || self.channels == 0 || self.blocks_per_scale == 0 {
            return bad("stacks, channels and blocks must be positive");
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return bad("embedding width must be even and positive");
        }
        if self.image_size % (1 << (self.widths.len() - 1)) != 0 {
            return bad("image size must halve cleanly at every scale");
        }
        Ok(())
    }
}

/// Sinusoidal embedding of `1000 * sqrt(alpha_bar)` per batch entry.
pub fn noise_embedding<T: Float>(sqrt_alpha_bar: &[f64], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(sqrt_alpha_bar.len() * dim);
    for &s in sqrt_alpha_bar {
        let v = 1000.0 * s;
        let freqs = (0..half).map(|k| (-(10000f64.ln()) * k as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| v * f).collect();
        data.extend(args.iter().map(|a| T::of(a.sin())));
        data.extend(args.iter().map(|a| T::of(a.cos())));
    }
    Tensor::from_vec(&[sqrt_alpha_bar.len(), dim], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
}

struct Block {
    name: String,
    cin: usize,
    cout: usize,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        Ok(Denoiser { config })
    }

    fn blocks(&self) -> Vec<Block> {
        let c = &self.config;
        let s = c.widths.len();
        let mut out = Vec::new();
        let mut ch = c.widths[0];
        for i in 0..s {
            // the resampling conv before each scale already maps to its width
            ch = c.widths[i];
            for b in 0..c.blocks_per_scale {
                out.push(Block { name: format!("down{i}.{b}"), cin: ch, cout: ch });
            }
        }
        out.push(Block { name: "mid".into(), cin: ch, cout: ch });
        for i in (0..s).rev() {
            out.push(Block { name: format!("up{i}"), cin: ch + c.widths[i], cout: c.widths[i] });
            ch = c.widths[i.saturating_sub(1)];
        }
        out
    }

    /// Fresh parameters. The output conv and the second conv of every
    /// residual block start at zero.
    pub fn init<T: Float>(&self, rng: &mut Stream) -> ParamSet<T> {
        let c = &self.config;
        let e = c.embed_dim;
        let mut init = Init { rng };
        let mut p = ParamSet::new();
        p.push("emb0.w", init.linear(e, e));
        p.push("emb0.b", Tensor::zeros(&[e]));
        p.push("emb1.w", init.linear(e, e));
        p.push("emb1.b", Tensor::zeros(&[e]));
        p.push("in.w", init.conv(c.widths[0], c.channels * c.stacks, 3));
        p.push("in.b", Tensor::zeros(&[c.widths[0]]));
        let blocks = self.blocks();
        let s = c.widths.len();
        for (bi, b) in blocks.iter().enumerate() {
            let n = &b.name;
            p.push(format!("{n}.n0.g"), Tensor::full(&[b.cin], T::one()));
            p.push(format!("{n}.n0.b"), Tensor::zeros(&[b.cin]));
            p.push(format!("{n}.c0.w"), init.conv(b.cout, b.cin, 3));
            p.push(format!("{n}.c0.b"), Tensor::zeros(&[b.cout]));
            p.push(format!("{n}.n1.g"), Tensor::full(&[b.cout], T::one()));
            p.push(format!("{n}.n1.b"), Tensor::zeros(&[b.cout]));
            p.push(format!("{n}.fs.w"), init.linear(b.cout, e));
            p.push(format!("{n}.fs.b"), Tensor::zeros(&[b.cout]));
            p.push(format!("{n}.ft.w"), init.linear(b.cout, e));
            p.push(format!("{n}.ft.b"), Tensor::zeros(&[b.cout]));
            p.push(format!("{n}.c1.w"), Tensor::zeros(&[b.cout, b.cout, 3, 3]));
            p.push(format!("{n}.c1.b"), Tensor::zeros(&[b.cout]));
            if b.cin != b.cout {
                p.push(format!("{n}.skip.w"), init.conv(b.cout, b.cin, 1));
                p.push(format!("{n}.skip.b"), Tensor::zeros(&[b.cout]));
            }
            // resampling convs sit after the last block of a scale
            let last_down = (bi + 1) % c.blocks_per_scale == 0 && bi < s * c.blocks_per_scale;
            let scale = bi / c.blocks_per_scale;
            if last_down && scale + 1 < s {
                p.push(format!("downsample{scale}.w"), init.conv(c.widths[scale + 1], c.widths[scale], 3));
                p.push(format!("downsample{scale}.b"), Tensor::zeros(&[c.widths[scale + 1]]));
            }
            if let Some(i) = n.strip_prefix("up").and_then(|v| v.parse::<usize>().ok()) {
                if i > 0 {
                    p.push(format!("upsample{i}.w"), init.conv(c.widths[i - 1], c.widths[i], 3));
                    p.push(format!("upsample{i}.b"), Tensor::zeros(&[c.widths[i - 1]]));
                }
            }
        }
        p.push("outn.g", Tensor::full(&[c.widths[0]], T::one()));
        p.push("outn.b", Tensor::zeros(&[c.widths[0]]));
        p.push("out.w", Tensor::zeros(&[c.channels, c.widths[0], 3, 3]));
        p.push("out.b", Tensor::zeros(&[c.channels]));
        p
    }

    /// Parameter count from the config alone.
    pub fn param_count(&self) -> usize {
        let c = &self.config;
        let e = c.embed_dim;
        let conv = |o: usize, i: usize, k: usize| o * i * k * k + o;
        let mut n = 2 * (e * e + e) + conv(c.widths[0], c.channels * c.stacks, 3);
        for b in self.blocks() {
            n += 2 * b.cin + conv(b.cout, b.cin, 3) + 2 * b.cout + 2 * (b.cout * e + b.cout) + conv(b.cout, b.cout, 3);
            if b.cin != b.cout {
                n += conv(b.cout, b.cin, 1);
            }
        }
        for i in 1..c.widths.len() {
            n += conv(c.widths[i], c.widths[i - 1], 3) + conv(c.widths[i - 1], c.widths[i], 3);
        }
        n + 2 * c.widths[0] + conv(c.channels, c.widths[0], 3)
    }

    fn res_block<T: Float>(&self, g: &mut Graph<T>, p: &Bound, name: &str, x: Var, temb: Var) -> Var {
        let h = norm(g, p, &format!("{name}.n0"), x);
        let h = g.silu(h);
        let h = conv(g, p, &format!("{name}.c0"), h, 1);
        let h = norm(g, p, &format!("{name}.n1"), h);
        let s = linear(g, p, &format!("{name}.fs"), temb);
        let t = linear(g, p, &format!("{name}.ft"), temb);
        let h = g.modulate(h, s, t);
        let h = g.silu(h);
        let h = conv(g, p, &format!("{name}.c1"), h, 1);
        let skip = if g.shape(x)[1] != g.shape(h)[1] { conv(g, p, &format!("{name}.skip"), x, 1) } else { x };
        g.add(skip, h)
    }

    /// Records the noise prediction for `stacks` (each `[N, C, H, W]`,
    /// noisy image first) at per-sample noise levels `sqrt_alpha_bar`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, stacks: &[Var], sqrt_alpha_bar: &[f64]) -> Result<Var> {
        let c = &self.config;
        if stacks.len() != c.stacks {
            return Err(Error::Shape(format!("denoiser takes {} image stacks, got {}", c.stacks, stacks.len())));
        }
        let want = [sqrt_alpha_bar.len(), c.channels, c.image_size, c.image_size];
        for &s in stacks {
            if g.shape(s) != want {
                return Err(Error::Shape(format!("denoiser input {:?}, expected {want:?}", g.shape(s))));
            }
        }
        let emb = g.input(noise_embedding(sqrt_alpha_bar, c.embed_dim));
        let h = linear(g, p, "emb0", emb);
        let h = g.silu(h);
        let h = linear(g, p, "emb1", h);
        let temb = g.silu(h);

        let x = if stacks.len() == 1 { stacks[0] } else { g.concat(stacks) };
        let mut h = conv(g, p, "in", x, 1);
        let s = c.widths.len();
        let mut skips = Vec::with_capacity(s);
        for i in 0..s {
            for b in 0..c.blocks_per_scale {
                h = self.res_block(g, p, &format!("down{i}.{b}"), h, temb);
            }
            skips.push(h);
            if i + 1 < s {
                h = conv(g, p, &format!("downsample{i}"), h, 2);
            }
        }
        h = self.res_block(g, p, "mid", h, temb);
        for i in (0..s).rev() {
            let cat = g.concat(&[h, skips[i]]);
            h = self.res_block(g, p, &format!("up{i}"), cat, temb);
            if i > 0 {
                let lo = conv(g, p, &format!("upsample{i}"), h, 1);
                h = g.upsample2x(lo);
            }
        }
        let h = norm(g, p, "outn", h);
        let h = g.silu(h);
        Ok(conv(g, p, "out", h, 1))
    }
}
