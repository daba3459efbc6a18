//! Tokenization of nonverbal motion cues.
//!
//! Continuous facial-expression (53-d) and body-language (117-d) parameter
//! sequences are compressed by a convolutional VQ-VAE into discrete codebook
//! indices, interleaved with time-aligned words into a single token stream,
//! and scored with vertex-space reconstruction and diversity metrics.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, annotation parsing and the command-line tool live in
//! the companion `nvtok` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod codec;
pub mod error;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod optim;
pub mod quantizer;
pub mod real;
pub mod savgol;
pub mod sequence;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
