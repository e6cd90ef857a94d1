//! Feature-corrective transfer learning at desk scale.
//!
//! This crate is `no_std` + `alloc`: every operation here is a pure function
//! of its inputs, with all randomness drawn from an explicit [`rng::SplitMix64`]
//! stream. File formats, the CLI, and anything that touches the OS live in the
//! companion `fctl` crate.
//!
//! The pieces:
//! - [`tensor`]: dense `(batch, channels, width, height)` feature maps and pyramids
//! - [`grad`]: Sobel directional gradients and gradient magnitude
//! - [`eansdl`]: the extended-area structural discrepancy loss, its analytic
//!   gradient, and a finite-difference oracle
//! - [`degrade`]: seeded rain / fog / low-light / Bayer-mosaic synthesizers
//! - [`scene`] and [`net`]: toy detection scenes and a small convolutional
//!   backbone + objectness head with hand-written backprop
//! - [`train`]: the two-phase training protocol (ideal pretrain, frozen
//!   static backbone, feature-corrected fine-tune) and the experiment driver

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod degrade;
pub mod eansdl;
pub mod error;
pub mod grad;
pub mod image;
pub mod net;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::Error;
