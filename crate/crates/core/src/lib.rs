//! Desk-scale lane-detection laboratory: a minimal autodiff tensor core,
//! small encoder/attention/head blocks, the SAMIRO family of feature-transfer
//! regularizers, a procedural lane-scene generator, benchmark-exact lane
//! metrics, and the training harness that ties them together.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
pub mod gradcheck;
pub mod lane;
pub mod nn;

pub use lane::Lane;
pub mod reg;
pub mod metrics;
pub mod synth;
pub mod checkpoint;
pub mod train;
