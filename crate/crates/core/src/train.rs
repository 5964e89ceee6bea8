//! Adversarial training loop: one discriminator update followed by one
//! generator update per sample.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_ops::{composite, random_crop, resize_min_side};
use crate::losses::{
    discriminator_loss, generator_adversarial_loss, guidance_loss, l1_loss, weighted_objective,
    LossOptions, LossReport, LossWeights,
};
use crate::mask::MaskImage;
use crate::nets::{
    build_discriminator, build_generator, generator_forward, Discriminator, ForwardOptions,
    Generator, GeneratorConfig, ShiftMode,
};
use crate::param::AdamConfig;
use crate::real::Real;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Centred square covering a quarter of the image.
    Central,
    /// One to four random rectangles.
    Random,
}

impl core::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "central" => Ok(Self::Central),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown mask_kind '{other}'"))),
        }
    }
}

impl core::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Central => "central",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub loss: LossOptions,
    pub mask_kind: MaskKind,
    pub seed: u64,
    /// Images are resized so the short side is `resize_min`, then randomly
    /// cropped to the generator input size.
    pub resize_min: usize,
    /// Value written into missing pixels of the generator input.
    pub fill: f64,
    pub flip: bool,
    pub max_steps: Option<usize>,
    /// Discriminator base width; the generator base when `None`.
    pub disc_base_channels: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 1,
            adam: AdamConfig::default(),
            weights: LossWeights::STANDARD,
            loss: LossOptions::default(),
            mask_kind: MaskKind::Central,
            seed: 0,
            resize_min: 32,
            fill: 0.0,
            flip: true,
            max_steps: None,
            disc_base_channels: None,
        }
    }
}

impl TrainConfig {
    /// Optimizer and schedule used at 256×256.
    pub fn full() -> Self {
        Self::default()
    }

    /// Five epochs of the 64-image 32×32 toy corpus. The learning rate is
    /// raised tenfold because the run is a few hundred steps long.
    pub fn desk() -> Self {
        Self {
            epochs: 5,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self, gen: &GeneratorConfig) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch_size {} unsupported; only 1 is implemented",
                self.batch_size
            )));
        }
        if self.resize_min < gen.input_size {
            return Err(Error::Config(format!(
                "resize_min {} smaller than input_size {}",
                self.resize_min, gen.input_size
            )));
        }
        if !(-1.0..=1.0).contains(&self.fill) {
            return Err(Error::Config(format!("fill {} outside [-1, 1]", self.fill)));
        }
        self.weights.validate()
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone)]
pub struct Sample<T: Real> {
    pub gt: Tensor<T>,
    pub mask: MaskImage,
    /// `gt` with missing pixels replaced by the fill value.
    pub masked_input: Tensor<T>,
}

pub fn make_central_mask(size: usize) -> MaskImage {
    let (lo, hi) = (size / 4, size - size / 4);
    MaskImage::from_fn(size, size, |y, x| (lo..hi).contains(&y) && (lo..hi).contains(&x))
}

pub const RANDOM_MASK_COVERAGE: (f64, f64) = (0.10, 0.40);

/// Union of one to four rectangles, redrawn until its coverage lies in
/// `RANDOM_MASK_COVERAGE`.
pub fn make_random_mask(size: usize, rng: &mut impl Rng) -> MaskImage {
    let (lo, hi) = RANDOM_MASK_COVERAGE;
    let side_lo = (size / 8).max(1);
    let side_hi = (size / 2).max(side_lo + 1);
    for _ in 0..1000 {
        let rects: Vec<(usize, usize, usize, usize)> = (0..rng.gen_range(1..=4))
            .map(|_| {
                let h = rng.gen_range(side_lo..side_hi);
                let w = rng.gen_range(side_lo..side_hi);
                (rng.gen_range(0..=size - h), rng.gen_range(0..=size - w), h, w)
            })
            .collect();
        let mask = MaskImage::from_fn(size, size, |y, x| {
            rects
                .iter()
                .any(|&(t, l, h, w)| (t..t + h).contains(&y) && (l..l + w).contains(&x))
        });
        let c = mask.coverage();
        if (lo..=hi).contains(&c) && mask.has_known() {
            return mask;
        }
    }
    make_central_mask(size)
}

pub fn prepare_input<T: Real>(gt: &Tensor<T>, mask: &MaskImage, fill: f64) -> Result<Sample<T>> {
    let filler = Tensor::full(gt.shape().to_vec(), T::lit(fill));
    let masked_input = composite(&filler, gt, mask)?;
    Ok(Sample {
        gt: gt.clone(),
        mask: mask.clone(),
        masked_input,
    })
}

/// Generator output for a sample, raw and composited with the known pixels.
pub struct Inpainting<T: Real> {
    pub raw: Tensor<T>,
    pub composite: Tensor<T>,
}

pub fn inpaint<T: Real>(
    generator: &Generator<T>,
    sample: &Sample<T>,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<Inpainting<T>> {
    let pyramid = generator.mask_pyramid(&sample.mask)?;
    let mut tape = Tape::new();
    let out = generator_forward(
        generator,
        &mut tape,
        &sample.masked_input,
        &pyramid,
        None,
        ForwardOptions {
            frozen_assignment: None,
            rng,
        },
    )?;
    let raw = tape.value(out.taps.output).clone();
    let composite = composite(&raw, &sample.gt, &sample.mask)?;
    Ok(Inpainting { raw, composite })
}

/// Held-out losses of a generator: raw-output l1 and guidance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOut {
    pub l1: f64,
    pub guidance: f64,
}

pub fn held_out_losses<T: Real>(
    generator: &Generator<T>,
    samples: &[Sample<T>],
    loss: LossOptions,
    seed: u64,
) -> Result<HeldOut> {
    if samples.is_empty() {
        return Err(Error::Invalid("no held-out samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut l1, mut guidance) = (0.0, 0.0);
    for s in samples {
        let pyramid = generator.mask_pyramid(&s.mask)?;
        let mut tape = Tape::new();
        let out = generator_forward(
            generator,
            &mut tape,
            &s.masked_input,
            &pyramid,
            Some(&s.gt),
            ForwardOptions {
                frozen_assignment: None,
                rng: Some(&mut rng),
            },
        )?;
        let target = out.target_feature.as_ref().expect("ground truth was supplied");
        let missing = pyramid.level(generator.config().shift_layer)?.missing();
        let a = l1_loss(&mut tape, out.taps.output, &s.gt, loss)?;
        let g = guidance_loss(&mut tape, out.taps.decoder_feature, target, missing, loss)?;
        l1 += tape.value(a).item().as_f64();
        guidance += tape.value(g).item().as_f64();
    }
    let n = samples.len() as f64;
    Ok(HeldOut {
        l1: l1 / n,
        guidance: guidance / n,
    })
}

pub struct Trainer<T: Real> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    cfg: TrainConfig,
    data_rng: ChaCha8Rng,
    shift_rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
}

impl<T: Real> Trainer<T> {
    /// Networks are initialized from `seed`; data order, augmentation and
    /// random shifts draw from separate streams of the same seed.
    pub fn new(gen: &GeneratorConfig, cfg: TrainConfig) -> Result<Self> {
        gen.validate()?;
        cfg.validate(gen)?;
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = build_generator(gen, &mut init)?;
        let disc_base = cfg.disc_base_channels.unwrap_or(gen.base_channels);
        let discriminator = build_discriminator(gen.input_size, disc_base, &mut init)?;
        let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        data_rng.set_stream(1);
        let mut shift_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shift_rng.set_stream(2);
        Ok(Self {
            generator,
            discriminator,
            cfg,
            data_rng,
            shift_rng,
            step: 0,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn budget_left(&self) -> bool {
        self.cfg.max_steps.is_none_or(|m| self.step < m)
    }

    /// Resize, random crop, optional flip and mask for one source image.
    pub fn augment(&mut self, image: &Tensor<T>) -> Result<Sample<T>> {
        let size = self.generator.config().input_size;
        let img = resize_min_side(image, self.cfg.resize_min)?;
        let mut img = random_crop(&img, size, &mut self.data_rng)?;
        if self.cfg.flip && self.data_rng.gen_bool(0.5) {
            img = img.flip_horizontal()?;
        }
        let mask = match self.cfg.mask_kind {
            MaskKind::Central => make_central_mask(size),
            MaskKind::Random => make_random_mask(size, &mut self.data_rng),
        };
        prepare_input(&img, &mask, self.cfg.fill)
    }

    pub fn train_step(&mut self, sample: &Sample<T>) -> Result<LossReport> {
        let step = self.step;
        let wrap = |e: Error| match e {
            Error::NonFinite { op } => Error::NonFiniteLoss {
                step,
                detail: format!("non-finite value produced by {op}"),
            },
            other => other,
        };
        let opts = self.cfg.loss;
        let pyramid = self.generator.mask_pyramid(&sample.mask)?;
        let random = self.generator.config().shift_mode == ShiftMode::Random;
        let mut tape = Tape::new();
        let out = generator_forward(
            &self.generator,
            &mut tape,
            &sample.masked_input,
            &pyramid,
            Some(&sample.gt),
            ForwardOptions {
                frozen_assignment: None,
                rng: if random { Some(&mut self.shift_rng) } else { None },
            },
        )
        .map_err(wrap)?;

        // Discriminator on the ground truth and the detached fake.
        let d_loss = {
            let mut dt = Tape::new();
            let bound = self.discriminator.params().bind(&mut dt)?;
            let real = dt.leaf(sample.gt.clone())?;
            let fake = dt.leaf(tape.value(out.taps.output).clone())?;
            let pr = self.discriminator.forward(&mut dt, &bound, real).map_err(wrap)?;
            let pf = self.discriminator.forward(&mut dt, &bound, fake).map_err(wrap)?;
            let loss = discriminator_loss(&mut dt, pr, pf).map_err(wrap)?;
            let grads = dt.backward(loss)?;
            let params = self.discriminator.params_mut();
            params.zero_grad();
            params.accumulate(&bound, &grads)?;
            params.adam_step(&self.cfg.adam);
            dt.value(loss).item().as_f64()
        };

        // Generator through the updated discriminator.
        let d_bound = self.discriminator.params().bind(&mut tape)?;
        let pf = self
            .discriminator
            .forward(&mut tape, &d_bound, out.taps.output)
            .map_err(wrap)?;
        let adv = generator_adversarial_loss(&mut tape, pf, opts).map_err(wrap)?;
        let l1 = l1_loss(&mut tape, out.taps.output, &sample.gt, opts).map_err(wrap)?;
        let target = out.target_feature.as_ref().expect("ground truth was supplied");
        let missing = pyramid.level(self.generator.config().shift_layer)?.missing();
        let guid = guidance_loss(&mut tape, out.taps.decoder_feature, target, missing, opts).map_err(wrap)?;
        let total = weighted_objective(&mut tape, l1, guid, adv, self.cfg.weights).map_err(wrap)?;
        let report = LossReport {
            l1: tape.value(l1).item().as_f64(),
            guidance: tape.value(guid).item().as_f64(),
            g_adv: tape.value(adv).item().as_f64(),
            d_loss,
            total: tape.value(total).item().as_f64(),
        };
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("{report:?}"),
            });
        }
        let grads = tape.backward(total)?;
        let params = self.generator.params_mut();
        params.zero_grad();
        params.accumulate(&out.bound, &grads)?;
        params.adam_step(&self.cfg.adam);
        self.step += 1;
        Ok(report)
    }

    /// One pass over `images` in a freshly shuffled order. Stops early once
    /// `max_steps` is reached; returns the number of steps taken.
    pub fn run_epoch(
        &mut self,
        images: &[Tensor<T>],
        mut on_step: impl FnMut(usize, &LossReport),
    ) -> Result<usize> {
        if images.is_empty() {
            return Err(Error::Invalid("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut self.data_rng);
        let mut taken = 0;
        for i in order {
            if !self.budget_left() {
                break;
            }
            let sample = self.augment(&images[i])?;
            let report = self.train_step(&sample)?;
            taken += 1;
            on_step(self.step, &report);
        }
        self.epoch += 1;
        Ok(taken)
    }

    /// Runs configured epochs, calling `on_epoch` after each one.
    pub fn run(
        &mut self,
        images: &[Tensor<T>],
        mut on_step: impl FnMut(usize, &LossReport),
        mut on_epoch: impl FnMut(&Self, usize) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.cfg.epochs && self.budget_left() {
            self.run_epoch(images, &mut on_step)?;
            on_epoch(self, self.epoch)?;
        }
        Ok(())
    }
}
