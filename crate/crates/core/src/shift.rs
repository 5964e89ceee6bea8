//! The shift-connection layer.
//!
//! For every missing position `y` at the shift resolution, the decoder
//! feature vector at `y` is matched against the encoder feature vectors at
//! all known positions by cosine similarity. The winning source `x*(y)` is
//! copied into the shifted map at `y`. As a matrix the assignment is a {0,1}
//! row selector `P` (one 1 per missing row, identity rows on the known
//! region), so the backward pass is a scatter-add by `Pᵀ`. The argmax is
//! treated as a constant.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::mask::MaskLevel;
use crate::ops::conv::{conv2d, Geometry};
use crate::real::Real;
use crate::tensor::Tensor;

/// Guard added to vector norms in the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftPair {
    /// Missing raster index `y`.
    pub target: usize,
    /// Known raster index `x*(y)`.
    pub source: usize,
    /// Cosine similarity of the match, NaN when the source was not searched.
    pub similarity: f64,
}

/// Sparse encoding of the shift matrix: one source per missing position,
/// ordered by target.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftAssignment {
    height: usize,
    width: usize,
    pairs: Vec<ShiftPair>,
}

impl ShiftAssignment {
    /// Builds an assignment from `(target, source)` raster pairs and checks it
    /// against the level: targets must be exactly the missing set and every
    /// source must be known.
    pub fn from_pairs(level: &MaskLevel, pairs: &[(usize, usize)]) -> Result<Self> {
        let pairs: Vec<ShiftPair> = pairs
            .iter()
            .map(|&(target, source)| ShiftPair {
                target,
                source,
                similarity: f64::NAN,
            })
            .collect();
        let a = Self {
            height: level.height(),
            width: level.width(),
            pairs,
        };
        a.validate(level)?;
        Ok(a)
    }

    /// Like [`from_pairs`](Self::from_pairs) but keeps the similarities of
    /// an externally run search. Pairs must be ordered by target.
    pub fn from_matches(level: &MaskLevel, pairs: Vec<ShiftPair>) -> Result<Self> {
        let a = Self {
            height: level.height(),
            width: level.width(),
            pairs,
        };
        a.validate(level)?;
        Ok(a)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pairs(&self) -> &[ShiftPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(target, source)` raster pairs, the part of the assignment that
    /// determines `P`.
    pub fn mapping(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.target, p.source)).collect()
    }

    /// Shift vectors `u_y = x*(y) − y` as (row, col) offsets.
    pub fn shift_vectors(&self) -> Vec<(isize, isize)> {
        let w = self.width as isize;
        self.pairs
            .iter()
            .map(|p| {
                let (ty, tx) = (p.target as isize / w, p.target as isize % w);
                let (sy, sx) = (p.source as isize / w, p.source as isize % w);
                (sy - ty, sx - tx)
            })
            .collect()
    }

    /// The full `P` as `(row, col, value)` triplets, identity rows included,
    /// row-major.
    pub fn sparse_matrix(&self) -> Vec<(usize, usize, u8)> {
        let n = self.height * self.width;
        let mut rows = Vec::with_capacity(n);
        let mut next = self.pairs.iter().peekable();
        for r in 0..n {
            match next.peek() {
                Some(p) if p.target == r => {
                    rows.push((r, p.source, 1));
                    next.next();
                }
                _ => rows.push((r, r, 1)),
            }
        }
        rows
    }

    fn validate(&self, level: &MaskLevel) -> Result<()> {
        if (self.height, self.width) != (level.height(), level.width()) {
            return Err(shape_err(
                "shift",
                format!(
                    "assignment is {}x{}, mask level is {}x{}",
                    self.height,
                    self.width,
                    level.height(),
                    level.width()
                ),
            ));
        }
        let missing = level.missing();
        for (i, &y) in missing.iter().enumerate() {
            match self.pairs.get(i) {
                Some(p) if p.target == y => {}
                _ => return Err(Error::IncompleteAssignment(y)),
            }
        }
        if self.pairs.len() != missing.len() {
            return Err(Error::Invalid(
                "assignment has targets outside the missing region".into(),
            ));
        }
        if let Some(p) = self.pairs.iter().find(|p| level.is_missing(p.source)) {
            return Err(Error::Invalid(format!(
                "source {} of target {} is not a known position",
                p.source, p.target
            )));
        }
        Ok(())
    }

    /// One line per pair: `y_row y_col -> x_row x_col sim=<value>`.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{} {} -> {} {} sim={:.6}",
                p.target / self.width,
                p.target % self.width,
                p.source / self.width,
                p.source % self.width,
                p.similarity
            );
        }
        out
    }
}

fn single_sample<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 {
        return Err(shape_err(op, format!("search needs batch size 1, got {n}")));
    }
    Ok((c, h, w))
}

/// Known-region encoder vectors, each divided by `‖e_x‖ + ε`, stored
/// contiguously. The shared kernel behind every search path.
pub struct SearchIndex<T> {
    channels: usize,
    sources: Vec<usize>,
    normalized: Vec<T>,
}

impl<T: Real> SearchIndex<T> {
    pub fn new(encoder: &Tensor<T>, level: &MaskLevel) -> Result<Self> {
        let (c, h, w) = single_sample(encoder, "nn_search")?;
        if (h, w) != (level.height(), level.width()) {
            return Err(shape_err(
                "nn_search",
                format!("features {h}x{w}, mask level {}x{}", level.height(), level.width()),
            ));
        }
        let plane = h * w;
        let sources = level.known().to_vec();
        if sources.is_empty() && !level.missing().is_empty() {
            return Err(Error::NoKnownRegion { level: 0 });
        }
        let mut normalized = Vec::with_capacity(sources.len() * c);
        let data = encoder.data();
        for &x in &sources {
            let start = normalized.len();
            for ch in 0..c {
                normalized.push(data[ch * plane + x]);
            }
            let v = &mut normalized[start..];
            let norm = v.iter().map(|&a| a * a).sum::<T>().sqrt() + T::lit(COSINE_EPS);
            v.iter_mut().for_each(|a| *a = *a / norm);
        }
        Ok(Self {
            channels: c,
            sources,
            normalized,
        })
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Row `k` of the normalized source matrix.
    pub fn source_vector(&self, k: usize) -> &[T] {
        &self.normalized[k * self.channels..(k + 1) * self.channels]
    }

    /// Best known source for one decoder vector: maximal cosine similarity,
    /// ties to the smallest raster index. Returns `(source, similarity)`.
    pub fn best_match(&self, query: &[T]) -> (usize, f64) {
        let mut best_k = 0;
        let mut best = T::neg_infinity();
        for k in 0..self.sources.len() {
            let score: T = query
                .iter()
                .zip(self.source_vector(k))
                .map(|(&a, &b)| a * b)
                .sum();
            if score > best {
                best = score;
                best_k = k;
            }
        }
        let qnorm = query.iter().map(|&a| a * a).sum::<T>().sqrt() + T::lit(COSINE_EPS);
        (self.sources[best_k], (best / qnorm).as_f64())
    }
}

/// Channel vector at raster position `p` of a single-sample NCHW map.
pub fn feature_vector<T: Real>(t: &Tensor<T>, p: usize) -> Vec<T> {
    let s = t.shape();
    let plane = s[2] * s[3];
    (0..s[1]).map(|c| t.data()[c * plane + p]).collect()
}

fn check_pair<T: Real>(dec: &Tensor<T>, enc: &Tensor<T>) -> Result<()> {
    let (dc, dh, dw) = single_sample(dec, "nn_search")?;
    let (ec, eh, ew) = single_sample(enc, "nn_search")?;
    if (dc, dh, dw) != (ec, eh, ew) {
        return Err(shape_err(
            "nn_search",
            format!("decoder {:?} vs encoder {:?}", dec.shape(), enc.shape()),
        ));
    }
    Ok(())
}

/// Cosine nearest-neighbour search, one independent argmax per missing
/// position.
pub fn nn_search<T: Real>(
    decoder: &Tensor<T>,
    encoder: &Tensor<T>,
    level: &MaskLevel,
) -> Result<ShiftAssignment> {
    check_pair(decoder, encoder)?;
    let index = SearchIndex::new(encoder, level)?;
    let pairs = level
        .missing()
        .iter()
        .map(|&y| {
            let (source, similarity) = index.best_match(&feature_vector(decoder, y));
            ShiftPair {
                target: y,
                source,
                similarity,
            }
        })
        .collect();
    Ok(ShiftAssignment {
        height: level.height(),
        width: level.width(),
        pairs,
    })
}

/// The same search phrased as a layer: the normalized known vectors become a
/// bank of 1×1 correlation filters, one convolution scores every (source,
/// position) pair, and the argmax runs over the filter axis.
pub fn nn_search_as_correlation<T: Real>(
    decoder: &Tensor<T>,
    encoder: &Tensor<T>,
    level: &MaskLevel,
) -> Result<ShiftAssignment> {
    check_pair(decoder, encoder)?;
    let index = SearchIndex::new(encoder, level)?;
    let (h, w) = (level.height(), level.width());
    if level.missing().is_empty() {
        return Ok(ShiftAssignment {
            height: h,
            width: w,
            pairs: Vec::new(),
        });
    }
    let k = index.sources().len();
    let filters = Tensor::new([k, index.channels(), 1, 1], index.normalized.clone())?;
    let scores = conv2d(decoder, &filters, None, Geometry::new(1, 0))?;
    let plane = h * w;
    let pairs = level
        .missing()
        .iter()
        .map(|&y| {
            let mut best_k = 0;
            let mut best = T::neg_infinity();
            for f in 0..k {
                let s = scores.data()[f * plane + y];
                if s > best {
                    best = s;
                    best_k = f;
                }
            }
            let q = feature_vector(decoder, y);
            let qnorm = q.iter().map(|&a| a * a).sum::<T>().sqrt() + T::lit(COSINE_EPS);
            ShiftPair {
                target: y,
                source: index.sources()[best_k],
                similarity: (best / qnorm).as_f64(),
            }
        })
        .collect();
    Ok(ShiftAssignment {
        height: h,
        width: w,
        pairs,
    })
}

/// Uniformly random known source for every missing position, the ablation
/// that replaces the nearest-neighbour search.
pub fn random_assignment(level: &MaskLevel, rng: &mut impl Rng) -> Result<ShiftAssignment> {
    let known = level.known();
    if known.is_empty() && !level.missing().is_empty() {
        return Err(Error::NoKnownRegion { level: 0 });
    }
    let pairs = level
        .missing()
        .iter()
        .map(|&y| ShiftPair {
            target: y,
            source: known[rng.gen_range(0..known.len())],
            similarity: f64::NAN,
        })
        .collect();
    Ok(ShiftAssignment {
        height: level.height(),
        width: level.width(),
        pairs,
    })
}

/// `P·Φ_l`: missing positions take their source's vector, known positions
/// copy themselves.
pub fn apply_shift<T: Real>(
    encoder: &Tensor<T>,
    assignment: &ShiftAssignment,
    level: &MaskLevel,
) -> Result<Tensor<T>> {
    assignment.validate(level)?;
    apply_assignment(encoder, assignment)
}

/// `Pᵀ·g`: every known position collects its own gradient plus the
/// gradients of all targets that copied it; missing positions get nothing.
pub fn shift_backward<T: Real>(
    grad: &Tensor<T>,
    assignment: &ShiftAssignment,
    level: &MaskLevel,
) -> Result<Tensor<T>> {
    assignment.validate(level)?;
    transpose_assignment(grad, assignment)
}

fn check_map<T: Real>(t: &Tensor<T>, a: &ShiftAssignment) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = t.dims4()?;
    if (h, w) != (a.height, a.width) {
        return Err(shape_err(
            "shift",
            format!("feature map {h}x{w}, assignment {}x{}", a.height, a.width),
        ));
    }
    Ok((n, c, h * w))
}

pub(crate) fn apply_assignment<T: Real>(
    encoder: &Tensor<T>,
    assignment: &ShiftAssignment,
) -> Result<Tensor<T>> {
    let (n, c, plane) = check_map(encoder, assignment)?;
    let mut out = encoder.clone();
    let src = encoder.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for p in &assignment.pairs {
                dst[base + p.target] = src[base + p.source];
            }
        }
    }
    Ok(out)
}

pub(crate) fn transpose_assignment<T: Real>(
    grad: &Tensor<T>,
    assignment: &ShiftAssignment,
) -> Result<Tensor<T>> {
    let (n, c, plane) = check_map(grad, assignment)?;
    let mut out = grad.clone();
    let g = grad.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for p in &assignment.pairs {
                dst[base + p.target] = T::zero();
            }
            // Targets are visited in ascending order, fixing the summation
            // order at each source.
            for p in &assignment.pairs {
                dst[base + p.source] = dst[base + p.source] + g[base + p.target];
            }
        }
    }
    Ok(out)
}
