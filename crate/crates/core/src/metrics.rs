//! Image quality metrics on `[0, 1]` images: PSNR, SSIM and mean squared
//! error ("mean l2").

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::mask::MaskImage;
use crate::real::Real;
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mean_l2: f64,
}

/// Which pixels the metrics cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Region {
    #[default]
    Full,
    /// Only missing pixels (SSIM: only windows centred on a missing pixel).
    Hole,
}

fn pairwise<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    a.expect_same_shape(b, op)?;
    a.dims4()?;
    Ok(())
}

pub fn mean_l2<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    pairwise(a, b, "mean_l2")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * num_traits::Float::log10(1.0 / mse)).min(PSNR_CAP)
    }
}

/// `10·log10(1 / MSE)` for unit dynamic range, capped at 100 dB.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mean_l2(a, b)?))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = num_traits::Float::exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Channel-mean grayscale planes, one per batch item.
fn grayscale<T: Real>(t: &Tensor<T>) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let (n, c, h, w) = t.dims4()?;
    let plane = h * w;
    let planes = (0..n)
        .map(|b| {
            (0..plane)
                .map(|p| {
                    (0..c).map(|ch| t.data()[(b * c + ch) * plane + p].as_f64()).sum::<f64>()
                        / c as f64
                })
                .collect()
        })
        .collect();
    Ok((h, w, planes))
}

/// Valid-mode separable filtering of an h×w plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Local SSIM at every valid window position of each batch item.
fn ssim_maps<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    pairwise(a, b, "ssim")?;
    let (h, w, pa) = grayscale(a)?;
    let (_, _, pb) = grayscale(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let maps = pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| {
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
            let mx = filter(x, h, w, &taps);
            let my = filter(y, h, w, &taps);
            let sxx = filter(&xx, h, w, &taps);
            let syy = filter(&yy, h, w, &taps);
            let sxy = filter(&xy, h, w, &taps);
            (0..mx.len())
                .map(|i| {
                    let (ux, uy) = (mx[i], my[i]);
                    let vx = sxx[i] - ux * ux;
                    let vy = syy[i] - uy * uy;
                    let cov = sxy[i] - ux * uy;
                    ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                        / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
                })
                .collect()
        })
        .collect();
    Ok((h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1, maps))
}

/// Mean local SSIM of the channel-mean grayscale images (11×11 Gaussian
/// window, σ = 1.5, k1 = 0.01, k2 = 0.03, unit dynamic range).
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (_, _, maps) = ssim_maps(a, b)?;
    let count: usize = maps.iter().map(Vec::len).sum();
    Ok(maps.iter().flatten().sum::<f64>() / count as f64)
}

pub fn evaluate<T: Real>(a: &Tensor<T>, b: &Tensor<T>, mask: &MaskImage, region: Region) -> Result<MetricReport> {
    match region {
        Region::Full => {
            let mse = mean_l2(a, b)?;
            Ok(MetricReport {
                psnr: psnr_from_mse(mse),
                ssim: ssim(a, b)?,
                mean_l2: mse,
            })
        }
        Region::Hole => {
            let (n, c, h, w) = a.dims4()?;
            pairwise(a, b, "metrics")?;
            if (h, w) != (mask.height(), mask.width()) {
                return Err(shape_err("metrics", "mask size differs from image size"));
            }
            let plane = h * w;
            let (mut sum, mut count) = (0.0, 0usize);
            for p in 0..n * c {
                for (i, &m) in mask.data().iter().enumerate() {
                    if m == 1 {
                        let d = a.data()[p * plane + i].as_f64() - b.data()[p * plane + i].as_f64();
                        sum += d * d;
                        count += 1;
                    }
                }
            }
            let mse = if count == 0 { 0.0 } else { sum / count as f64 };
            let (mh, mw, maps) = ssim_maps(a, b)?;
            let r = SSIM_WINDOW / 2;
            let (mut s, mut k) = (0.0, 0usize);
            for map in &maps {
                for y in 0..mh {
                    for x in 0..mw {
                        if mask.is_missing(y + r, x + r) {
                            s += map[y * mw + x];
                            k += 1;
                        }
                    }
                }
            }
            Ok(MetricReport {
                psnr: psnr_from_mse(mse),
                ssim: if k == 0 { 1.0 } else { s / k as f64 },
                mean_l2: mse,
            })
        }
    }
}
