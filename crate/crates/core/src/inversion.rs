//! Feature inversion: recover an image whose encoder features match a
//! target on a set of feature positions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::nets::{Generator, IMAGE_CHANNELS};
use crate::ops::conv::Geometry;
use crate::param::Bound;
use crate::real::Real;
use crate::tape::{Reduction, Tape, Var};
use crate::tensor::Tensor;

/// A frozen map from an image to a feature tensor.
pub trait FeatureEncoder<T: Real> {
    /// Adds the encoder's parameters (as constants) to `tape`.
    fn bind(&self, tape: &mut Tape<T>) -> Result<Bound>;
    fn encode(&self, tape: &mut Tape<T>, bound: &Bound, image: Var) -> Result<Var>;
}

/// Generator encoder up to and including layer `layer`.
pub struct GeneratorEncoder<'a, T: Real> {
    pub generator: &'a Generator<T>,
    pub layer: usize,
}

impl<T: Real> FeatureEncoder<T> for GeneratorEncoder<'_, T> {
    fn bind(&self, tape: &mut Tape<T>) -> Result<Bound> {
        self.generator.params().bind(tape)
    }

    fn encode(&self, tape: &mut Tape<T>, bound: &Bound, image: Var) -> Result<Var> {
        let feats = self.generator.encode(tape, bound, image, self.layer)?;
        Ok(feats[self.layer - 1])
    }
}

/// A single 1×1 convolution with identity weights.
pub struct IdentityEncoder;

impl<T: Real> FeatureEncoder<T> for IdentityEncoder {
    fn bind(&self, tape: &mut Tape<T>) -> Result<Bound> {
        let c = IMAGE_CHANNELS;
        let w = Tensor::from_fn([c, c, 1, 1], |i| if i / c == i % c { T::one() } else { T::zero() });
        Ok(Bound::from_vars(vec![tape.leaf(w)?]))
    }

    fn encode(&self, tape: &mut Tape<T>, bound: &Bound, image: Var) -> Result<Var> {
        tape.conv2d(image, bound.get(0), None, Geometry::new(1, 0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub max_iters: usize,
    /// Initial step size.
    pub step: f64,
    /// Halve a rejected step until the objective does not increase; with
    /// this off, fixed steps are taken.
    pub backtracking: bool,
    pub max_halvings: usize,
    /// Stop once the objective falls below this value.
    pub tolerance: f64,
    /// Fixed-step runs fail after this many consecutive increases.
    pub divergence_window: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step: 0.1,
            backtracking: true,
            max_halvings: 40,
            tolerance: 1e-14,
            divergence_window: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inversion<T: Real> {
    pub image: Tensor<T>,
    /// Objective before the first step and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

struct Problem<'a, T: Real, E: FeatureEncoder<T>> {
    encoder: &'a E,
    target: &'a Tensor<T>,
    omega: &'a [usize],
}

impl<T: Real, E: FeatureEncoder<T>> Problem<'_, T, E> {
    fn objective(&self, image: &Tensor<T>, with_grad: bool) -> Result<(f64, Option<Tensor<T>>)> {
        let mut tape = Tape::new();
        let bound = self.encoder.bind(&mut tape)?;
        let x = tape.leaf(image.clone())?;
        let f = self.encoder.encode(&mut tape, &bound, x)?;
        if tape.value(f).shape() != self.target.shape() {
            return Err(shape_err("invert_feature", "target shape differs from encoder output"));
        }
        let loss = tape.masked_sq_dist(f, self.target.clone(), self.omega.to_vec(), Reduction::Sum)?;
        let value = tape.value(loss).item().as_f64();
        if !with_grad {
            return Ok((value, None));
        }
        let mut grads = tape.backward(loss)?;
        let g = grads.take(x).unwrap_or_else(|| Tensor::zeros(image.shape().to_vec()));
        Ok((value, Some(g)))
    }
}

fn descend<T: Real>(image: &Tensor<T>, grad: &Tensor<T>, step: f64) -> Tensor<T> {
    let s = T::lit(step);
    let (lo, hi) = (-T::one(), T::one());
    Tensor::new(
        image.shape().to_vec(),
        image
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| (x - s * g).max(lo).min(hi))
            .collect(),
    )
    .expect("same shape as image")
}

/// Projected gradient descent on `Σ_{y∈Ω} ‖Φ(H)_y − target_y‖²` starting from
/// mid-gray, with values clamped to `[−1, 1]` after every step.
pub fn invert_feature<T: Real, E: FeatureEncoder<T>>(
    encoder: &E,
    target: &Tensor<T>,
    omega: &[usize],
    image_shape: [usize; 4],
    cfg: InversionConfig,
) -> Result<Inversion<T>> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::Invalid(alloc::format!("step {} must be positive", cfg.step)));
    }
    let problem = Problem {
        encoder,
        target,
        omega,
    };
    let mut image = Tensor::zeros(image_shape);
    let (mut f, mut grad) = problem.objective(&image, true)?;
    if !f.is_finite() {
        return Err(Error::Diverged { iter: 0 });
    }
    let mut trace = vec![f];
    let mut step = cfg.step;
    let mut increases = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iters && f > cfg.tolerance {
        iterations += 1;
        let g = grad.take().expect("gradient computed with the objective");
        if cfg.backtracking {
            let mut accepted = None;
            for _ in 0..=cfg.max_halvings {
                let cand = descend(&image, &g, step);
                let (fc, _) = problem.objective(&cand, false)?;
                if fc.is_finite() && fc <= f {
                    accepted = Some((cand, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, _)) = accepted else {
                break;
            };
            image = cand;
            step *= 2.0;
        } else {
            image = descend(&image, &g, step);
        }
        let (fc, gc) = problem.objective(&image, true)?;
        if !fc.is_finite() {
            return Err(Error::Diverged { iter: iterations });
        }
        increases = if fc > f { increases + 1 } else { 0 };
        if increases >= cfg.divergence_window {
            return Err(Error::Diverged { iter: iterations });
        }
        f = fc;
        grad = gc;
        trace.push(f);
    }
    Ok(Inversion {
        image,
        trace,
        iterations,
    })
}
