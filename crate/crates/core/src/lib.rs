//! Attribute-conditioned image generation on a small from-scratch
//! convolutional engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: tensors and layer kernels with hand-written backward passes,
//! * [`models`]: the generation network, the refinement network, and
//!   checkpoints,
//! * [`training`]: losses, momentum SGD, normalization, and the training
//!   loop,
//! * [`dataset`]: manifests, training pairs, PGM I/O, occlusion, and a
//!   procedural face renderer,
//! * [`evaluation`]: generation error, retrieval metrics, and diagnostics,
//! * [`gradcheck`]: finite-difference verification of every backward pass.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod image;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image::{AttributeVector, Image, NormStats, Space};
pub use scalar::Scalar;
pub use tensor::Tensor;
