//! Self-supervised CT denoising with pseudo LDCT/NDCT image pairs.
//!
//! A pre-trained denoiser produces pseudo-clean images from real low-dose
//! slices, an ensemble of per-subject noise networks produces matching noise
//! fields, and the sum of the two forms pseudo low-dose inputs on which a
//! copy of the denoiser is fine-tuned. The generating copy is periodically
//! synchronised with the trainee.

pub mod data;
pub mod error;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod noise;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod selfsup;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
