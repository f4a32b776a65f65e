//! Convolutional encoder-decoder models (lightweight, dynamic and dilated
//! depthwise convolutions) with a self-attention baseline, span-corruption
//! pre-training, fine-tuning as label generation, and a FLOPs and throughput
//! scaling harness. Everything runs on a small `f64` reverse-mode autodiff
//! engine in [`tensor`].

pub mod bench;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
