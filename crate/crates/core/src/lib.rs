//! Exocentric-to-egocentric frame synthesis in two stages: a transformer
//! that translates the exo hand layout into the ego view, and a conditional
//! latent diffusion model that renders ego pixels on top of that layout.
//! Also ships the benchmark split tooling and the evaluation metrics.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod diffusion;
mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod translator;

pub use error::{Error, Result};
pub use tensor::Matrix;
