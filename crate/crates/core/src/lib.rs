pub mod camera;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod image;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod nets;
pub mod rng;
pub mod scenes;
pub mod training;

pub use error::{Error, Result};
