//! Invertible-network image hiding, revealing and zero-shot steganalysis.
//!
//! A stack of affine coupling blocks over Haar subbands conceals a secret
//! image inside a cover. Running the same network backwards reveals hidden
//! content, and the PSNR between an input and what it reveals decides
//! whether the input is a cover or a stego image.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod inn;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use inn::{init_model, InnModel, ModelConfig};
pub use pipeline::{conceal, detect, psnr, residual_augment, reveal, DetectionResult, Verdict};
pub use tensor::{Image, Real, Tensor};
