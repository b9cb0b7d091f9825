//! Salient object detection for optical remote-sensing images.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense NHWC tensors, a reverse-mode tape with the handful of
//!   differentiable primitives the network needs, and a finite-difference
//!   gradient checker.
//! * [`arch`]: declarative network configuration, static shape planning, the
//!   two-stream pyramid / nested encoder-decoder forward pass and the
//!   ablation variants.
//! * [`train`]: clipped cross-entropy, Xavier initialisation, Adam, the
//!   training loop and checkpoints.
//! * [`metrics`]: PR curves, F-measure, MAE and S-measure.
//! * [`data`]: dataset loading, resizing, splitting, D4 augmentation,
//!   batching and a synthetic scene generator.

pub mod arch;
pub mod data;
mod error;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
