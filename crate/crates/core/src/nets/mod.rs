//! Generator (U-Net with guidance tap and shift connection) and patch
//! discriminator.

mod discriminator;
mod generator;

use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::DEFAULT_THRESHOLD;
use crate::real::Real;
use crate::tensor::Tensor;

pub use discriminator::{build_discriminator, Discriminator};
pub use generator::{
    build_generator, generator_forward, ForwardOptions, Generator, GeneratorOutput, GeneratorTaps,
};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;
pub const KERNEL: usize = 4;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    Nearest,
    Random,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceZero {
    None,
    Decoder,
    Encoder,
    Shift,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(Error::Config(alloc::format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(ShiftMode { Nearest => "nearest", Random => "random", Off => "off" });
keyword_enum!(SliceZero { None => "none", Decoder => "decoder", Encoder => "encoder", Shift => "shift" });

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub input_size: usize,
    /// Number of encoder convolutions; the bottleneck is 1×1.
    pub depth: usize,
    pub base_channels: usize,
    /// Encoder layer whose resolution hosts the shift connection.
    pub shift_layer: usize,
    pub shift_mode: ShiftMode,
    pub slice_zero: SliceZero,
    /// Threshold on the propagated mask.
    pub threshold: f64,
}

impl GeneratorConfig {
    /// 256×256 input, eight encoder layers, 64 base channels, shift at 32×32.
    pub fn full() -> Self {
        Self {
            input_size: 256,
            depth: 8,
            base_channels: 64,
            shift_layer: 3,
            shift_mode: ShiftMode::Nearest,
            slice_zero: SliceZero::None,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    /// 32×32 input, five encoder layers, 8 base channels, shift at 8×8.
    pub fn desk() -> Self {
        Self {
            input_size: 32,
            depth: 5,
            base_channels: 8,
            shift_layer: 2,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.input_size < 16 || !self.input_size.is_power_of_two() {
            return bad(alloc::format!(
                "input_size {} must be a power of two >= 16",
                self.input_size
            ));
        }
        if self.depth >= usize::BITS as usize || self.input_size >> self.depth != 1 {
            return bad(alloc::format!(
                "input_size {} / 2^{} must reach a 1x1 bottleneck",
                self.input_size, self.depth
            ));
        }
        if self.shift_layer == 0 || self.shift_layer >= self.depth {
            return bad(alloc::format!(
                "shift_layer {} must lie in 1..{}",
                self.shift_layer, self.depth
            ));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(alloc::format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.shift_mode == ShiftMode::Off && self.slice_zero == SliceZero::Shift {
            return bad("slice_zero=shift needs a shift slice (shift_mode is off)".into());
        }
        Ok(())
    }

    /// Output channels of encoder layer `i` (1-based): doubling from the base
    /// and capped at eight times the base.
    pub fn encoder_channels(&self, i: usize) -> usize {
        let cap = 8 * self.base_channels;
        (self.base_channels << (i - 1).min(3)).min(cap)
    }

    /// Spatial size of encoder layer `i` output.
    pub fn encoder_size(&self, i: usize) -> usize {
        self.input_size >> i
    }

    /// Index (1-based) of the decoder layer producing the shift-resolution
    /// feature.
    pub fn shift_decoder_layer(&self) -> usize {
        self.depth - self.shift_layer
    }
}

pub(crate) fn init_weight<T: Real>(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<T> {
    Tensor::randn(shape, INIT_STD, rng)
}
