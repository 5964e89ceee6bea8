//! Missing-region masks and their propagation to feature resolutions.
//!
//! The mask is pushed through a width-1 copy of the encoder geometry (4×4,
//! stride 2, pad 1) whose filter taps are all 1/16, with no bias and no
//! nonlinearity. A feature position counts as missing at level `l` when the
//! propagated value reaches the threshold `T`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d, Geometry};
use crate::real::Real;
use crate::tensor::Tensor;

/// Threshold on the propagated mask used unless configured otherwise.
pub const DEFAULT_THRESHOLD: f64 = 5.0 / 16.0;

const PROPAGATION_KERNEL: usize = 4;
const PROPAGATION_GEOMETRY: Geometry = Geometry::new(2, 1);

/// Binary H×W map, 1 at missing pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Invalid(format!(
                "mask data of length {} for {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: alloc::vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut missing: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(missing(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_missing(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn missing_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn coverage(&self) -> f64 {
        self.missing_count() as f64 / self.data.len() as f64
    }

    pub fn has_known(&self) -> bool {
        self.data.iter().any(|&v| v == 0)
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| self.is_missing(y, self.width - 1 - x))
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |i| T::lit(f64::from(self.data[i])))
    }
}

/// One resolution of the propagated mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLevel {
    height: usize,
    width: usize,
    psi: Vec<f64>,
    missing: Vec<usize>,
    known: Vec<usize>,
}

impl MaskLevel {
    fn from_values(height: usize, width: usize, psi: Vec<f64>, is_missing: impl Fn(f64) -> bool) -> Self {
        let (mut missing, mut known) = (Vec::new(), Vec::new());
        for (i, &v) in psi.iter().enumerate() {
            if is_missing(v) {
                missing.push(i);
            } else {
                known.push(i);
            }
        }
        Self {
            height,
            width,
            psi,
            missing,
            known,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Propagated mask values, raster order.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// Raster indices of missing positions, ascending.
    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    /// Raster indices of known positions, ascending.
    pub fn known(&self) -> &[usize] {
        &self.known
    }

    pub fn is_missing(&self, index: usize) -> bool {
        self.missing.binary_search(&index).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskPyramid {
    threshold: f64,
    levels: Vec<MaskLevel>,
}

impl MaskPyramid {
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Number of propagated levels (level 0, the input mask, not counted).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> Result<&MaskLevel> {
        self.levels.get(l).ok_or_else(|| {
            Error::Invalid(format!("mask level {l} requested, pyramid depth {}", self.depth()))
        })
    }

    /// A level that can serve as the shift layer's search domain: it must
    /// have at least one known position whenever something is missing.
    pub fn shift_level(&self, l: usize) -> Result<&MaskLevel> {
        let level = self.level(l)?;
        if level.known.is_empty() && !level.missing.is_empty() {
            return Err(Error::NoKnownRegion { level: l });
        }
        Ok(level)
    }
}

/// Builds `Ψ_1 … Ψ_depth` and thresholds each at `threshold`. Level 0 is the
/// input mask itself.
pub fn propagate_mask(mask: &MaskImage, depth: usize, threshold: f64) -> Result<MaskPyramid> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    let mut levels = Vec::with_capacity(depth + 1);
    let input = mask.to_tensor::<f64>();
    levels.push(MaskLevel::from_values(
        mask.height,
        mask.width,
        input.data().to_vec(),
        |v| v == 1.0,
    ));
    let kernel = Tensor::<f64>::full(
        [1, 1, PROPAGATION_KERNEL, PROPAGATION_KERNEL],
        1.0 / (PROPAGATION_KERNEL * PROPAGATION_KERNEL) as f64,
    );
    let mut current = input;
    for _ in 0..depth {
        current = conv2d(&current, &kernel, None, PROPAGATION_GEOMETRY)?;
        let (_, _, h, w) = current.dims4()?;
        levels.push(MaskLevel::from_values(h, w, current.data().to_vec(), |v| {
            v >= threshold
        }));
    }
    Ok(MaskPyramid { threshold, levels })
}
