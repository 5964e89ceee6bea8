//! Instance normalization without affine parameters.

use alloc::vec::Vec;

use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Forward pass output plus what backward needs.
pub struct NormOutput<T> {
    pub normalized: Tensor<T>,
    /// One `1/sqrt(var + eps)` per (n, c) plane.
    pub inv_std: Vec<T>,
}

/// Standardizes every (n, c) plane: `(x - mean) / sqrt(var + eps)` with the
/// biased variance.
pub fn instance_norm<T: Real>(x: &Tensor<T>, eps: T) -> Result<NormOutput<T>> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let count = T::lit(plane as f64);
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(n * c);
    for p in out.data_mut().chunks_mut(plane) {
        let mean = p.iter().copied().sum::<T>() / count;
        let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv = T::one() / (var + eps).sqrt();
        for v in p.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    Ok(NormOutput {
        normalized: out,
        inv_std,
    })
}

/// `dx = inv_std / N · (N·g − Σg − x̂·Σ(g·x̂))` per plane.
pub fn instance_norm_backward<T: Real>(
    grad: &Tensor<T>,
    normalized: &Tensor<T>,
    inv_std: &[T],
) -> Result<Tensor<T>> {
    grad.expect_same_shape(normalized, "instance_norm_backward")?;
    let (_, _, h, w) = grad.dims4()?;
    let plane = h * w;
    let count = T::lit(plane as f64);
    let mut gx = grad.clone();
    for ((gp, xp), &inv) in gx
        .data_mut()
        .chunks_mut(plane)
        .zip(normalized.data().chunks(plane))
        .zip(inv_std)
    {
        let sum_g = gp.iter().copied().sum::<T>();
        let sum_gx = gp.iter().zip(xp).map(|(&g, &x)| g * x).sum::<T>();
        for (g, &x) in gp.iter_mut().zip(xp) {
            *g = inv / count * (count * *g - sum_g - x * sum_gx);
        }
    }
    Ok(gx)
}
