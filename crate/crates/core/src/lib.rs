//! Gradient-based tuning of JPEG quantization tables.
//!
//! A bit-accurate baseline codec ([`codec`]) measures real rates and
//! distortions. A differentiable replica of the same pipeline ([`diffproxy`])
//! and a learned rate estimator ([`entropy`]) make the rate, distortion and
//! task losses differentiable with respect to the tables, which
//! [`optimizer`] then tunes with Adam. [`evaluation`] sweeps quality factors
//! and compares curves.

pub mod codec;
pub mod color;
pub mod dataset;
pub mod dct;
pub mod diffproxy;
pub mod entropy;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod optimizer;
pub mod synth;
pub mod tables;
pub mod taskloss;

pub use color::Layout;
pub use error::{Error, Result};
pub use image::{RealImage, RgbImage};
pub use tables::{IntQuantTablePair, QuantTableParams, Quality};
