//! A small reverse-mode automatic differentiation engine over dense NCHW
//! tensors, with the handful of operations a convolutional encoder-decoder
//! needs: convolution, group normalization, nearest upsampling, feature-wise
//! modulation, bilinear flow warping and an L1 objective.
//!
//! Kernels run data-parallel over samples and output blocks through rayon
//! when the `parallel` feature is enabled, and sequentially otherwise. See
//! [`Exec`].

mod exec;
mod float;
pub mod gemm;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use exec::{threads, Exec};
pub use float::Float;
pub use graph::{Grads, Graph, Var};
pub use tensor::Tensor;
