//! Reconstruction, guidance and adversarial losses and their weighted sum.

use crate::error::{Error, Result};
use crate::nets::Discriminator;
use crate::real::Real;
use crate::tape::{Reduction, Tape, Var, LOG_CLAMP};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_adv: f64,
}

impl LossWeights {
    pub const STANDARD: Self = Self {
        lambda_g: 0.01,
        lambda_adv: 0.002,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_g", self.lambda_g), ("lambda_adv", self.lambda_adv)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(alloc::format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossOptions {
    /// Use plain sums for the l1 and guidance terms instead of means.
    pub sum_reduction: bool,
    /// Generator minimizes `log(1 − D(fake))` instead of `−log D(fake)`.
    pub saturating: bool,
}

impl LossOptions {
    fn reduction(&self) -> Reduction {
        if self.sum_reduction {
            Reduction::Sum
        } else {
            Reduction::Mean
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l1: f64,
    pub guidance: f64,
    pub g_adv: f64,
    pub d_loss: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l1, self.guidance, self.g_adv, self.d_loss, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Squared distance between decoder and ground-truth encoder vectors over
/// the missing positions only.
pub fn guidance_loss<T: Real>(
    tape: &mut Tape<T>,
    decoder_feature: Var,
    target: &Tensor<T>,
    missing: &[usize],
    opts: LossOptions,
) -> Result<Var> {
    tape.masked_sq_dist(decoder_feature, target.clone(), missing.to_vec(), opts.reduction())
}

pub fn l1_loss<T: Real>(tape: &mut Tape<T>, output: Var, gt: &Tensor<T>, opts: LossOptions) -> Result<Var> {
    tape.l1(output, gt.clone(), opts.reduction())
}

/// `−mean log D(real) − mean log(1 − D(fake))`; the caller passes the
/// discriminator response to a detached fake.
pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = tape.neg_log_mean(d_real, false)?;
    let fake = tape.neg_log_mean(d_fake, true)?;
    tape.add(real, fake)
}

pub fn generator_adversarial_loss<T: Real>(
    tape: &mut Tape<T>,
    d_fake: Var,
    opts: LossOptions,
) -> Result<Var> {
    if opts.saturating {
        let v = tape.neg_log_mean(d_fake, true)?;
        tape.scale(v, -T::one())
    } else {
        tape.neg_log_mean(d_fake, false)
    }
}

/// `l1 + λ_g·guidance + λ_adv·adv` on the tape.
pub fn weighted_objective<T: Real>(
    tape: &mut Tape<T>,
    l1: Var,
    guidance: Var,
    adversarial: Var,
    weights: LossWeights,
) -> Result<Var> {
    let g = tape.scale(guidance, T::lit(weights.lambda_g))?;
    let a = tape.scale(adversarial, T::lit(weights.lambda_adv))?;
    let s = tape.add(l1, g)?;
    tape.add(s, a)
}

/// The weighted sum from already-computed parts.
pub fn total_objective(l1: f64, guidance: f64, g_adv: f64, weights: LossWeights) -> Result<f64> {
    if !(l1.is_finite() && guidance.is_finite() && g_adv.is_finite()) {
        return Err(Error::NonFinite { op: "total_objective" });
    }
    weights.validate()?;
    Ok(l1 + weights.lambda_g * guidance + weights.lambda_adv * g_adv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Both adversarial losses for one real/fake pair, values only.
pub fn adversarial_losses<T: Real>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    opts: LossOptions,
) -> Result<AdversarialLosses> {
    real.expect_same_shape(fake, "adversarial_losses")?;
    let pr = d.evaluate(real)?;
    let pf = d.evaluate(fake)?;
    Ok(adversarial_from_probabilities(&pr, &pf, opts))
}

/// Adversarial losses from discriminator outputs.
pub fn adversarial_from_probabilities<T: Real>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
    opts: LossOptions,
) -> AdversarialLosses {
    let nlog = |t: &Tensor<T>, complement: bool| {
        t.data()
            .iter()
            .map(|&p| {
                let p = p.as_f64();
                let q = if complement { 1.0 - p } else { p };
                -num_traits::Float::ln(q.max(LOG_CLAMP))
            })
            .sum::<f64>()
            / t.len() as f64
    };
    let d_loss = nlog(d_real, false) + nlog(d_fake, true);
    let g_loss = if opts.saturating {
        -nlog(d_fake, true)
    } else {
        nlog(d_fake, false)
    };
    AdversarialLosses { d_loss, g_loss }
}
