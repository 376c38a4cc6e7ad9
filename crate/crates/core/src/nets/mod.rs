//! The three trainable networks and their parameter storage.
//!
//! Networks are plain configs plus a [`ParamSet`]; a forward pass binds the
//! parameters into a [`Graph`] and records every operation, so the same code
//! serves inference (`f32`) and finite-difference checks (`f64`).

mod denoiser;
mod opn;
mod params;

use dda_tensor::{Float, Graph, Tensor, Var};

use crate::rng::Stream;

pub use denoiser::{noise_embedding, Denoiser, DenoiserConfig};
pub use opn::{Opn, OpnConfig};
pub use params::{config_hash, Bound, ParamSet};

/// Largest divisor of `channels` not exceeding 8.
pub fn group_count(channels: usize) -> usize {
    (1..=8.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Weight initialisation helpers, all drawing from one seeded stream.
pub(crate) struct Init<'a> {
    pub rng: &'a mut Stream,
}

impl Init<'_> {
    fn normal<T: Float>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| T::of(self.rng.normal() as f64 * std)).collect())
    }

    /// He-normal conv weight `[cout, cin, k, k]`.
    pub fn conv<T: Float>(&mut self, cout: usize, cin: usize, k: usize) -> Tensor<T> {
        let fan_in = (cin * k * k) as f64;
        self.normal(&[cout, cin, k, k], (2.0 / fan_in).sqrt())
    }

    pub fn linear<T: Float>(&mut self, dout: usize, din: usize) -> Tensor<T> {
        self.normal(&[dout, din], (1.0 / din as f64).sqrt())
    }
}

/// Records conv (+ bias) of `x` with params `<name>.w`, `<name>.b`.
pub(crate) fn conv<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Var {
    let w = p.get(&format!("{name}.w"));
    let b = p.get(&format!("{name}.b"));
    let k = g.shape(w)[2];
    g.conv2d(x, w, Some(b), stride, k / 2)
}

pub(crate) fn linear<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Var {
    let w = p.get(&format!("{name}.w"));
    let b = p.get(&format!("{name}.b"));
    g.linear(x, w, b)
}

pub(crate) fn norm<T: Float>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Var {
    let gamma = p.get(&format!("{name}.g"));
    let beta = p.get(&format!("{name}.b"));
    let c = g.shape(x)[1];
    g.group_norm(x, gamma, beta, group_count(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_counts() {
        assert_eq!(group_count(16), 8);
        assert_eq!(group_count(12), 6);
        assert_eq!(group_count(5), 5);
        assert_eq!(group_count(7), 7);
        assert_eq!(group_count(9), 3);
        assert_eq!(group_count(1), 1);
    }
}
