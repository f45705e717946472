//! Kernels for spatially-adaptive normalization with warped modulation
//! parameters (SAWN / M-SAWN), their adjoints, a finite-difference gradient
//! oracle, a synthetic scene generator, and the toy generator/training
//! procedures built on top of them.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, threading and
//! the command line live in the `warpnorm` crate.

#![no_std]
extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod model;
pub mod normalize;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ConvKernel, Shape4, Tensor4};
