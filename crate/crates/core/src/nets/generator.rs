use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::{init_weight, GeneratorConfig, ShiftMode, SliceZero, IMAGE_CHANNELS, KERNEL};
use crate::error::{shape_err, Error, Result};
use crate::mask::{propagate_mask, MaskImage, MaskPyramid};
use crate::ops::activation::Activation;
use crate::ops::conv::Geometry;
use crate::ops::norm::INSTANCE_NORM_EPS;
use crate::param::{Bound, ParamSet};
use crate::real::Real;
use crate::shift::{nn_search, random_assignment, ShiftAssignment};
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

const DOWN: Geometry = Geometry::new(2, 1);

/// U-Net generator. Parameters hold only convolution weights; every
/// convolution in the generator is bias-free.
#[derive(Debug, Clone)]
pub struct Generator<T: Real> {
    cfg: GeneratorConfig,
    params: ParamSet<T>,
    /// Input channel count of every decoder layer, 1-based index `k - 1`.
    decoder_inputs: Vec<usize>,
}

/// Per-call knobs of the forward pass.
#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Use this assignment instead of searching (the shift matrix is then a
    /// constant of the pass).
    pub frozen_assignment: Option<&'a ShiftAssignment>,
    /// Source of randomness for `ShiftMode::Random`.
    pub rng: Option<&'a mut dyn RngCore>,
}

/// Tape handles to the generator output and its tapped features.
#[derive(Debug, Clone)]
pub struct GeneratorTaps {
    pub output: Var,
    /// Φ_l(I): encoder feature at the shift layer.
    pub encoder_feature: Var,
    /// Φ_{L−l}(I): decoder feature at the mirror layer (guidance tap).
    pub decoder_feature: Var,
    /// Φ^shift_{L−l}(I), absent when the shift connection is off.
    pub shifted_feature: Option<Var>,
    pub assignment: Option<ShiftAssignment>,
}

pub struct GeneratorOutput<T: Real> {
    pub bound: Bound,
    pub input: Var,
    pub taps: GeneratorTaps,
    /// Φ_l(I^gt), computed on a separate tape so no gradient reaches it.
    pub target_feature: Option<Tensor<T>>,
}

pub fn build_generator<T: Real>(cfg: &GeneratorConfig, rng: &mut impl Rng) -> Result<Generator<T>> {
    cfg.validate()?;
    let depth = cfg.depth;
    let mut params = ParamSet::new();
    let mut prev = IMAGE_CHANNELS;
    for i in 1..=depth {
        let out = cfg.encoder_channels(i);
        params.push(format!("G.enc{i}.weight"), init_weight([out, prev, KERNEL, KERNEL], rng));
        prev = out;
    }
    let shift_k = cfg.shift_decoder_layer();
    let mut decoder_inputs = Vec::with_capacity(depth);
    let mut input = cfg.encoder_channels(depth);
    for k in 1..=depth {
        let out = if k < depth {
            cfg.encoder_channels(depth - k)
        } else {
            IMAGE_CHANNELS
        };
        params.push(format!("G.dec{k}.weight"), init_weight([input, out, KERNEL, KERNEL], rng));
        decoder_inputs.push(input);
        if k < depth {
            let skip = cfg.encoder_channels(depth - k);
            input = out + skip;
            if k == shift_k && cfg.shift_mode != ShiftMode::Off {
                input += skip;
            }
        }
    }
    Ok(Generator {
        cfg: cfg.clone(),
        params,
        decoder_inputs,
    })
}

impl<T: Real> Generator<T> {
    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn encoder_layers(&self) -> usize {
        self.cfg.depth
    }

    pub fn decoder_layers(&self) -> usize {
        self.cfg.depth
    }

    /// Input channels of decoder layer `k` (1-based).
    pub fn decoder_input_channels(&self, k: usize) -> usize {
        self.decoder_inputs[k - 1]
    }

    fn enc_weight(&self, bound: &Bound, i: usize) -> Var {
        bound.get(i - 1)
    }

    fn dec_weight(&self, bound: &Bound, k: usize) -> Var {
        bound.get(self.cfg.depth + k - 1)
    }

    /// Mask pyramid at this generator's depth and threshold.
    pub fn mask_pyramid(&self, mask: &MaskImage) -> Result<MaskPyramid> {
        propagate_mask(mask, self.cfg.depth, self.cfg.threshold)
    }

    /// Encoder layers `1..=upto`; returns every layer's output.
    pub fn encode(&self, tape: &mut Tape<T>, bound: &Bound, input: Var, upto: usize) -> Result<Vec<Var>> {
        let (_, c, h, w) = tape.value(input).dims4()?;
        if c != IMAGE_CHANNELS || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(shape_err(
                "generator",
                format!(
                    "expected 3x{0}x{0} input, got {c}x{h}x{w}",
                    self.cfg.input_size
                ),
            ));
        }
        let eps = T::lit(INSTANCE_NORM_EPS);
        let mut feats = Vec::with_capacity(upto);
        let mut h = tape.conv2d(input, self.enc_weight(bound, 1), None, DOWN)?;
        feats.push(h);
        for i in 2..=upto {
            let a = tape.activation(Activation::LeakyRelu, h)?;
            h = tape.conv2d(a, self.enc_weight(bound, i), None, DOWN)?;
            // The 1×1 bottleneck is left unnormalized: instance norm would
            // zero every activation there.
            if i < self.cfg.depth {
                h = tape.instance_norm(h, eps)?;
            }
            feats.push(h);
        }
        Ok(feats)
    }

    /// Φ_l(image) in a throwaway tape.
    pub fn target_feature(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let x = tape.leaf(image.clone())?;
        let feats = self.encode(&mut tape, &bound, x, self.cfg.shift_layer)?;
        Ok(tape.value(feats[self.cfg.shift_layer - 1]).clone())
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        input: Var,
        pyramid: &MaskPyramid,
        opts: ForwardOptions<'_>,
    ) -> Result<GeneratorTaps> {
        let cfg = &self.cfg;
        let depth = cfg.depth;
        let l = cfg.shift_layer;
        let shift_k = cfg.shift_decoder_layer();
        let level = pyramid.level(l)?;
        if (level.height(), level.width()) != (cfg.encoder_size(l), cfg.encoder_size(l)) {
            return Err(shape_err(
                "generator",
                format!(
                    "mask level {l} is {}x{}, shift features are {}x{}",
                    level.height(),
                    level.width(),
                    cfg.encoder_size(l),
                    cfg.encoder_size(l)
                ),
            ));
        }
        let eps = T::lit(INSTANCE_NORM_EPS);
        let feats = self.encode(tape, bound, input, depth)?;
        let mut rng = opts.rng;
        let mut cur = feats[depth - 1];
        let mut taps = None;
        for k in 1..=depth {
            let a = if k == 1 || k == depth {
                tape.activation(Activation::Relu, cur)?
            } else {
                cur
            };
            let mut w = self.dec_weight(bound, k);
            if k == shift_k + 1 && cfg.slice_zero != SliceZero::None {
                let c = cfg.encoder_channels(l);
                let start = match cfg.slice_zero {
                    SliceZero::Decoder => 0,
                    SliceZero::Encoder => c,
                    SliceZero::Shift => 2 * c,
                    SliceZero::None => unreachable!(),
                };
                w = tape.zero_channels(w, Axis::Dim0, start, start + c)?;
            }
            let d = tape.conv2d_transpose(a, w, None, DOWN)?;
            if k == depth {
                let output = tape.activation(Activation::Tanh, d)?;
                let (encoder_feature, decoder_feature, shifted_feature, assignment) =
                    taps.ok_or_else(|| Error::Invalid("shift layer was never reached".into()))?;
                return Ok(GeneratorTaps {
                    output,
                    encoder_feature,
                    decoder_feature,
                    shifted_feature,
                    assignment,
                });
            }
            let d = tape.instance_norm(d, eps)?;
            let skip = feats[depth - k - 1];
            let cat = if k == shift_k {
                let (shifted, assignment) = match cfg.shift_mode {
                    ShiftMode::Off => (None, None),
                    mode => {
                        let assignment = match (opts.frozen_assignment, mode) {
                            (Some(a), _) => a.clone(),
                            (None, ShiftMode::Nearest) => {
                                let lv = pyramid.shift_level(l)?;
                                nn_search(tape.value(d), tape.value(skip), lv)?
                            }
                            (None, _) => {
                                let lv = pyramid.shift_level(l)?;
                                let r = rng.as_deref_mut().ok_or_else(|| {
                                    Error::Config("shift_mode=random needs an rng".into())
                                })?;
                                random_assignment(lv, &mut &mut *r)?
                            }
                        };
                        (Some(tape.shift(skip, assignment.clone())?), Some(assignment))
                    }
                };
                taps = Some((skip, d, shifted, assignment));
                match shifted {
                    Some(s) => tape.concat_channels(&[d, skip, s])?,
                    None => tape.concat_channels(&[d, skip])?,
                }
            } else {
                tape.concat_channels(&[d, skip])?
            };
            cur = if k >= 2 {
                tape.activation(Activation::Relu, cat)?
            } else {
                cat
            };
        }
        unreachable!("decoder loop returns at its last layer")
    }
}

/// Binds parameters, runs the generator on `masked_image`, and when a ground
/// truth is supplied also computes its untracked encoder feature.
pub fn generator_forward<T: Real>(
    generator: &Generator<T>,
    tape: &mut Tape<T>,
    masked_image: &Tensor<T>,
    pyramid: &MaskPyramid,
    ground_truth: Option<&Tensor<T>>,
    opts: ForwardOptions<'_>,
) -> Result<GeneratorOutput<T>> {
    let bound = generator.params().bind(tape)?;
    let input = tape.leaf(masked_image.clone())?;
    let taps = generator.forward(tape, &bound, input, pyramid, opts)?;
    let target_feature = ground_truth
        .map(|gt| generator.target_feature(gt))
        .transpose()?;
    Ok(GeneratorOutput {
        bound,
        input,
        taps,
        target_feature,
    })
}
