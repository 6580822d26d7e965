//! Inference and introspection engine for sequential VGG-style CNNs.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] holds the dense `f32` tensor and the numeric kernels
//!   (convolution, pooling, dense, softmax, bilinear resize).
//! * [`model`] parses and writes CVW weight containers, builds architectures
//!   (including VGG16) and runs the capturing forward pass.
//! * [`gradients`] computes the gradient of one class logit with respect to
//!   an intermediate activation.
//! * [`gradcam`] turns activations and gradients into class-localization
//!   heatmaps.
//! * [`imaging`] loads and preprocesses images and renders tiles, channel
//!   grids and heatmap overlays.
//! * [`analysis`] produces dead feature map reports and top-k readouts.

pub mod analysis;
pub mod error;
pub mod gradcam;
pub mod gradients;
pub mod imaging;
pub mod model;
pub mod tensor;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{ContainerError, Error, Result};
pub use tensor::Tensor;
