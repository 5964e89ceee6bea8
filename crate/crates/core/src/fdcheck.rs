//! Central finite-difference gradient checks in 64-bit.
//!
//! A probe whose ±h evaluations fall on different linear pieces of a ReLU
//! or an absolute value is not a valid difference quotient; such probes are
//! skipped and counted.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mask::{propagate_mask, MaskImage, DEFAULT_THRESHOLD};
use crate::nets::{build_discriminator, build_generator, ForwardOptions, GeneratorConfig, ShiftMode, SliceZero};
use crate::ops::activation::Activation;
use crate::ops::conv::Geometry;
use crate::ops::norm::INSTANCE_NORM_EPS;
use crate::param::Bound;
use crate::shift::nn_search;
use crate::tape::{Axis, Reduction, Tape, Var};
use crate::tensor::Tensor;
use crate::train::prepare_input;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Added to `|fd|` in the denominator of the relative error.
pub const FD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Probes per input tensor; every entry when `None`.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: FD_STEP,
            tolerance: FD_TOLERANCE,
            max_entries: Some(24),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_error: f64,
    /// `(input, entry, analytic, finite difference)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub passed: bool,
}

impl core::fmt::Display for FdReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{} {:<28} checked={:<4} skipped={:<3} max_rel_err={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.skipped,
            self.max_error
        )?;
        if let (false, Some((i, e, a, d))) = (self.passed, self.worst) {
            write!(f, " worst input {i} entry {e}: analytic {a:.6e} fd {d:.6e}")?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (fd.abs() + FD_FLOOR)
}

fn evaluate<F>(inputs: &[Tensor<f64>], build: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    Ok((tape.value(loss).item(), tape.kink_signature()))
}

/// Compares the tape gradient of `build`'s scalar output with respect to
/// each input against central differences.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor<f64>], cfg: &FdConfig, build: F) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    let signature = tape.kink_signature();
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FdReport {
        name: name.into(),
        checked: 0,
        skipped: 0,
        max_error: 0.0,
        worst: None,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut order: Vec<usize> = (0..inputs[i].len()).collect();
        order.shuffle(&mut rng);
        let budget = cfg.max_entries.unwrap_or(order.len());
        let mut checked = 0;
        for e in order {
            if checked == budget {
                break;
            }
            let x = inputs[i].data()[e];
            probe[i].data_mut()[e] = x + cfg.step;
            let (fp, sp) = evaluate(&probe, &build)?;
            probe[i].data_mut()[e] = x - cfg.step;
            let (fm, sm) = evaluate(&probe, &build)?;
            probe[i].data_mut()[e] = x;
            if sp != signature || sm != signature {
                report.skipped += 1;
                continue;
            }
            checked += 1;
            let fd = (fp - fm) / (2.0 * cfg.step);
            let err = relative_error(analytic[e], fd);
            if err > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(err);
                report.worst = Some((i, e, analytic[e], fd));
            }
        }
        report.checked += checked;
    }
    report.passed = report.max_error < cfg.tolerance && report.checked > 0;
    Ok(report)
}

fn randn(shape: impl Into<Vec<usize>>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Standard normal values pushed at least `gap` away from zero.
fn away_from_zero(shape: impl Into<Vec<usize>>, gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    randn(shape, rng).map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

/// Random linear projection of a tensor to a scalar.
fn project(tape: &mut Tape<f64>, x: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = tape.value(x).shape().to_vec();
    tape.weighted_sum(x, randn(shape, &mut rng))
}

/// Small generator used by the full-model check: 16×16 input, four layers.
pub fn gradcheck_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        input_size: 16,
        depth: 4,
        base_channels: 4,
        shift_layer: 2,
        shift_mode: ShiftMode::Nearest,
        slice_zero: SliceZero::None,
        threshold: DEFAULT_THRESHOLD,
    }
}

/// Every layer kind, the losses, and the full generator (frozen shift
/// assignment) and discriminator.
pub fn standard_suite(seed: u64) -> Result<Vec<FdReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = FdConfig {
        seed,
        ..Default::default()
    };
    let p = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut out = Vec::new();

    let down = Geometry::new(2, 1);
    let x = randn([1, 2, 6, 6], &mut rng);
    let w = randn([3, 2, 4, 4], &mut rng);
    let b = randn([3], &mut rng);
    out.push(check_gradients("conv2d s2 p1", &[x, w, b], &cfg, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), down)?;
        project(t, y, p)
    })?);

    let x = randn([1, 2, 5, 5], &mut rng);
    let w = randn([2, 2, 3, 3], &mut rng);
    out.push(check_gradients("conv2d s1 p0", &[x, w], &cfg, |t, v| {
        let y = t.conv2d(v[0], v[1], None, Geometry::new(1, 0))?;
        project(t, y, p)
    })?);

    let x = randn([1, 3, 3, 3], &mut rng);
    let w = randn([3, 2, 4, 4], &mut rng);
    let b = randn([2], &mut rng);
    out.push(check_gradients("conv2d_transpose s2 p1", &[x, w, b], &cfg, |t, v| {
        let y = t.conv2d_transpose(v[0], v[1], Some(v[2]), down)?;
        project(t, y, p)
    })?);

    let x = randn([1, 2, 4, 4], &mut rng);
    out.push(check_gradients("instance_norm", &[x], &cfg, |t, v| {
        let y = t.instance_norm(v[0], INSTANCE_NORM_EPS)?;
        project(t, y, p)
    })?);

    for (name, kind) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
    ] {
        let x = away_from_zero([1, 2, 3, 3], 0.05, &mut rng);
        out.push(check_gradients(name, &[x], &cfg, |t, v| {
            let y = t.activation(kind, v[0])?;
            project(t, y, p)
        })?);
    }

    let a = randn([1, 2, 3, 3], &mut rng);
    let b = randn([1, 1, 3, 3], &mut rng);
    out.push(check_gradients("concat", &[a, b], &cfg, |t, v| {
        let y = t.concat_channels(&[v[0], v[1], v[0]])?;
        project(t, y, p)
    })?);

    let a = randn([1, 2, 3, 3], &mut rng);
    out.push(check_gradients("add/scale fan-out", &[a], &cfg, |t, v| {
        let s = t.scale(v[0], -0.7)?;
        let y = t.add(v[0], s)?;
        let z = t.activation(Activation::Tanh, v[0])?;
        let y = t.add(y, z)?;
        project(t, y, p)
    })?);

    let w = randn([4, 2, 3, 3], &mut rng);
    let x = randn([1, 4, 3, 3], &mut rng);
    out.push(check_gradients("zero_channels", &[x, w], &cfg, |t, v| {
        let w = t.zero_channels(v[1], Axis::Dim0, 1, 3)?;
        let y = t.conv2d_transpose(v[0], w, None, Geometry::new(1, 1))?;
        project(t, y, p)
    })?);

    // Shift with the assignment held fixed.
    let mask = MaskImage::from_fn(4, 4, |y, x| (1..3).contains(&y) && (1..4).contains(&x));
    let pyramid = propagate_mask(&mask, 0, DEFAULT_THRESHOLD)?;
    let level = pyramid.level(0)?.clone();
    let enc = randn([1, 3, 4, 4], &mut rng);
    let dec = randn([1, 3, 4, 4], &mut rng);
    let assignment = nn_search(&dec, &enc, &level)?;
    out.push(check_gradients("shift (frozen)", &[enc, dec], &cfg, |t, v| {
        let s = t.shift(v[0], assignment.clone())?;
        let y = t.concat_channels(&[v[1], v[0], s])?;
        project(t, y, p)
    })?);

    let x = randn([1, 3, 4, 4], &mut rng);
    let target = randn([1, 3, 4, 4], &mut rng);
    out.push(check_gradients("l1 mean", &[x.clone()], &cfg, |t, v| {
        t.l1(v[0], target.clone(), Reduction::Mean)
    })?);
    out.push(check_gradients("l1 sum", &[x.clone()], &cfg, |t, v| {
        t.l1(v[0], target.clone(), Reduction::Sum)
    })?);
    let positions = level.missing().to_vec();
    for (name, red) in [("guidance mean", Reduction::Mean), ("guidance sum", Reduction::Sum)] {
        out.push(check_gradients(name, &[x.clone()], &cfg, |t, v| {
            t.masked_sq_dist(v[0], target.clone(), positions.clone(), red)
        })?);
    }

    let real = randn([1, 1, 3, 3], &mut rng);
    let fake = randn([1, 1, 3, 3], &mut rng);
    out.push(check_gradients("d_loss", &[real, fake.clone()], &cfg, |t, v| {
        let r = t.activation(Activation::Sigmoid, v[0])?;
        let f = t.activation(Activation::Sigmoid, v[1])?;
        let a = t.neg_log_mean(r, false)?;
        let b = t.neg_log_mean(f, true)?;
        t.add(a, b)
    })?);
    for (name, complement) in [("g_loss", false), ("g_loss saturating", true)] {
        out.push(check_gradients(name, &[fake.clone()], &cfg, |t, v| {
            let f = t.activation(Activation::Sigmoid, v[0])?;
            t.neg_log_mean(f, complement)
        })?);
    }

    out.push(generator_check(seed, &cfg)?);
    out.push(discriminator_check(seed, &cfg)?);
    Ok(out)
}

/// Full generator: output projection + l1 + guidance, with respect to all
/// weights and the input image, shift assignment frozen at its initial
/// value.
pub fn generator_check(seed: u64, cfg: &FdConfig) -> Result<FdReport> {
    let gcfg = gradcheck_generator_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut g = build_generator::<f64>(&gcfg, &mut rng)?;
    // Larger weights than the training init keep activations well scaled.
    for param in g.params_mut().iter_mut() {
        param.value = param.value.scale(10.0);
    }
    let size = gcfg.input_size;
    let mask = MaskImage::from_fn(size, size, |y, x| (4..12).contains(&y) && (4..12).contains(&x));
    let pyramid = g.mask_pyramid(&mask)?;
    let gt = Tensor::uniform([1, 3, size, size], -1.0, 1.0, &mut rng);
    let input = prepare_input(&gt, &mask, 0.0)?.masked_input;
    let target = g.target_feature(&gt)?;
    let missing = pyramid.level(gcfg.shift_layer)?.missing().to_vec();

    let n = g.params().len();
    let assignment = {
        let mut tape = Tape::new();
        let bound = g.params().bind(&mut tape)?;
        let x = tape.leaf(input.clone())?;
        g.forward(&mut tape, &bound, x, &pyramid, ForwardOptions::default())?
            .assignment
            .expect("shift is on")
    };
    let mut inputs: Vec<Tensor<f64>> = g.params().iter().map(|p| p.value.clone()).collect();
    inputs.push(input);
    let p = seed ^ 0xD1CE;
    let report = check_gradients("generator (frozen shift)", &inputs, cfg, |t, v| {
        let bound = Bound::from_vars(v[..n].to_vec());
        let taps = g.forward(
            t,
            &bound,
            v[n],
            &pyramid,
            ForwardOptions {
                frozen_assignment: Some(&assignment),
                rng: None,
            },
        )?;
        let a = project(t, taps.output, p)?;
        let b = t.l1(taps.output, gt.clone(), Reduction::Mean)?;
        let c = t.masked_sq_dist(taps.decoder_feature, target.clone(), missing.clone(), Reduction::Mean)?;
        let s = t.add(a, b)?;
        t.add(s, c)
    })?;
    Ok(report)
}

pub fn discriminator_check(seed: u64, cfg: &FdConfig) -> Result<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15C);
    let mut d = build_discriminator::<f64>(32, 2, &mut rng)?;
    for param in d.params_mut().iter_mut() {
        let noise = Tensor::randn(param.value.shape().to_vec(), 0.2, &mut rng);
        param.value = param.value.zip_map(&noise, |a, b| 10.0 * a + b)?;
    }
    let n = d.params().len();
    let mut inputs: Vec<Tensor<f64>> = d.params().iter().map(|p| p.value.clone()).collect();
    inputs.push(Tensor::uniform([1, 3, 32, 32], -1.0, 1.0, &mut rng));
    check_gradients("discriminator", &inputs, cfg, |t, v| {
        let bound = Bound::from_vars(v[..n].to_vec());
        let y = d.forward(t, &bound, v[n])?;
        t.neg_log_mean(y, false)
    })
}

/// One line per check, for logs.
pub fn summarize(reports: &[FdReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!("{r}\n"));
    }
    s
}
