//! Core of a U-Net inpainting generator with a shift-connection layer.
//!
//! The crate is `no_std` and only needs an allocator. It carries everything
//! that is pure computation:
//!
//! - [`tensor`] and [`tape`]: dense NCHW tensors and a reverse-mode tape
//!   covering every layer and loss the model uses.
//! - [`mask`] and [`shift`]: the per-resolution missing region and the
//!   shift-connection layer (cosine nearest-neighbour search, feature
//!   rearrangement and its transpose).
//! - [`nets`]: generator and discriminator assembly.
//! - [`losses`], [`train`]: the objective and the alternating adversarial step.
//! - [`metrics`], [`inversion`]: PSNR/SSIM/mean-l2 and feature inversion.
//!
//! File formats, the command line and the epoch driver live in the `shiftnet`
//! crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod error;
pub mod fdcheck;
pub mod image_ops;
pub mod inversion;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod nets;
pub mod ops;
pub mod param;
pub mod real;
pub mod shift;
pub mod tape;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
