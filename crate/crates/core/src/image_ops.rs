//! Image-space helpers: value-range conversion, compositing, resizing and
//! cropping. Images are `1×3×H×W` tensors in `[−1, 1]` unless noted.

use alloc::format;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::mask::MaskImage;
use crate::real::Real;
use crate::tensor::Tensor;

/// `[−1, 1]` → `[0, 1]`.
pub fn to_unit_range<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let half = T::lit(0.5);
    img.map(|v| (v + T::one()) * half)
}

/// Generated values inside the mask, `known` values (bit-exact) outside.
pub fn composite<T: Real>(generated: &Tensor<T>, known: &Tensor<T>, mask: &MaskImage) -> Result<Tensor<T>> {
    generated.expect_same_shape(known, "composite")?;
    let (n, c, h, w) = known.dims4()?;
    if (h, w) != (mask.height(), mask.width()) {
        return Err(shape_err(
            "composite",
            format!("image {h}x{w}, mask {}x{}", mask.height(), mask.width()),
        ));
    }
    let mut out = known.clone();
    let plane = h * w;
    let g = generated.data();
    let o = out.data_mut();
    for p in 0..n * c {
        for (i, &m) in mask.data().iter().enumerate() {
            if m == 1 {
                o[p * plane + i] = g[p * plane + i];
            }
        }
    }
    Ok(out)
}

/// Bilinear resize (half-pixel centres) so the shorter side equals
/// `min_side`. Returns a clone when it already does.
pub fn resize_min_side<T: Real>(img: &Tensor<T>, min_side: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = img.dims4()?;
    if h.min(w) == min_side {
        return Ok(img.clone());
    }
    let scale = min_side as f64 / h.min(w) as f64;
    let nh = (num_traits::Float::round(h as f64 * scale) as usize).max(min_side);
    let nw = (num_traits::Float::round(w as f64 * scale) as usize).max(min_side);
    let mut out = Tensor::zeros([n, c, nh, nw]);
    let src = img.data();
    for p in 0..n * c {
        for y in 0..nh {
            let fy = ((y as f64 + 0.5) * h as f64 / nh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = num_traits::Float::floor(fy) as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = T::lit(fy - y0 as f64);
            for x in 0..nw {
                let fx = ((x as f64 + 0.5) * w as f64 / nw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = num_traits::Float::floor(fx) as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = T::lit(fx - x0 as f64);
                let at = |yy: usize, xx: usize| src[(p * h + yy) * w + xx];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * tx;
                let bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * tx;
                out.data_mut()[(p * nh + y) * nw + x] = top + (bot - top) * ty;
            }
        }
    }
    Ok(out)
}

pub fn crop<T: Real>(img: &Tensor<T>, top: usize, left: usize, size: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = img.dims4()?;
    if top + size > h || left + size > w {
        return Err(shape_err(
            "crop",
            format!("{size}x{size} crop at ({top}, {left}) exceeds {h}x{w}"),
        ));
    }
    let src = img.data();
    let mut out = Tensor::zeros([n, c, size, size]);
    for p in 0..n * c {
        for y in 0..size {
            let s = (p * h + top + y) * w + left;
            let d = (p * size + y) * size;
            out.data_mut()[d..d + size].copy_from_slice(&src[s..s + size]);
        }
    }
    Ok(out)
}

pub fn random_crop<T: Real>(img: &Tensor<T>, size: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let (_, _, h, w) = img.dims4()?;
    if size > h || size > w {
        return Err(shape_err("random_crop", format!("crop {size} exceeds {h}x{w}")));
    }
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    crop(img, top, left, size)
}
