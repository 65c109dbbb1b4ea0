#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Indoor localization from distributed-sensor power delay profiles (PDPs)
//! with compact Transformer encoders.
//!
//! The crate covers the whole pipeline: synthetic PDP generation and power
//! compression ([`dataio`]), sensor/time/patch tokenization ([`tokenizer`]),
//! a small reverse-mode autodiff engine ([`tensor`]), Vanilla and SwiGLU
//! Transformer encoders with FLOPs accounting ([`model`]), RF augmentations
//! ([`augment`]), training ([`train`]) and error statistics ([`eval`]).

pub mod augment;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
