use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{init_weight, IMAGE_CHANNELS, KERNEL};
use crate::error::{shape_err, Error, Result};
use crate::ops::activation::Activation;
use crate::ops::conv::Geometry;
use crate::ops::norm::INSTANCE_NORM_EPS;
use crate::param::{Bound, ParamSet};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// (stride, instance norm) per layer; the last layer ends in a sigmoid,
/// all others in a leaky ReLU.
const LAYERS: [(usize, bool); 5] = [(2, false), (2, true), (2, true), (1, true), (1, false)];

/// Five-convolution patch discriminator producing a map of real/fake
/// probabilities. Only the unnormalized layers carry a bias: instance norm
/// subtracts any per-channel constant, so a bias there is inert.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Real> {
    input_size: usize,
    output_size: usize,
    params: ParamSet<T>,
    /// `(weight, bias)` parameter indices per layer.
    slots: Vec<(usize, Option<usize>)>,
}

pub fn build_discriminator<T: Real>(
    input_size: usize,
    base_channels: usize,
    rng: &mut impl Rng,
) -> Result<Discriminator<T>> {
    if input_size < 16 || base_channels == 0 {
        return Err(Error::Config(format!(
            "discriminator needs input_size >= 16 and positive width, got {input_size}/{base_channels}"
        )));
    }
    let widths = [base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels, 1];
    let mut size = input_size;
    let mut params = ParamSet::new();
    let mut slots = Vec::with_capacity(LAYERS.len());
    let mut prev = IMAGE_CHANNELS;
    for (i, (&(stride, norm), &out)) in LAYERS.iter().zip(&widths).enumerate() {
        size = Geometry::new(stride, 1).conv_out(size, KERNEL).map_err(|_| {
            Error::Config(format!(
                "input_size {input_size} is too small: layer {} has no valid output",
                i + 1
            ))
        })?;
        let w = params.push(format!("D.conv{}.weight", i + 1), init_weight([out, prev, KERNEL, KERNEL], rng));
        let b = (!norm).then(|| params.push(format!("D.conv{}.bias", i + 1), Tensor::zeros([out])));
        slots.push((w, b));
        prev = out;
    }
    Ok(Discriminator {
        input_size,
        output_size: size,
        params,
        slots,
    })
}

impl<T: Real> Discriminator<T> {
    pub fn input_size(&self) -> usize {
        self.input_size
    }

    /// Side length of the probability map.
    pub fn output_size(&self) -> usize {
        self.output_size
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, image: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(image).dims4()?;
        if c != IMAGE_CHANNELS || h != self.input_size || w != self.input_size {
            return Err(shape_err(
                "discriminator",
                format!("expected 3x{0}x{0} input, got {c}x{h}x{w}", self.input_size),
            ));
        }
        let eps = T::lit(INSTANCE_NORM_EPS);
        let mut x = image;
        for (i, (&(stride, norm), &(wi, bi))) in LAYERS.iter().zip(&self.slots).enumerate() {
            let b = bi.map(|b| bound.get(b));
            x = tape.conv2d(x, bound.get(wi), b, Geometry::new(stride, 1))?;
            if norm {
                x = tape.instance_norm(x, eps)?;
            }
            let act = if i + 1 == LAYERS.len() {
                Activation::Sigmoid
            } else {
                Activation::LeakyRelu
            };
            x = tape.activation(act, x)?;
        }
        Ok(x)
    }

    /// Probability map for a plain tensor, no gradients kept.
    pub fn evaluate(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let x = tape.leaf(image.clone())?;
        let y = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn layer_count(&self) -> usize {
        LAYERS.len()
    }

    pub fn layer_strides(&self) -> Vec<usize> {
        LAYERS.iter().map(|l| l.0).collect()
    }
}
