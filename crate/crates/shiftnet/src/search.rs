//! Nearest-neighbour search split across threads by missing position.

use rayon::prelude::*;
use shiftnet_core::mask::MaskLevel;
use shiftnet_core::shift::{feature_vector, SearchIndex, ShiftAssignment, ShiftPair};
use shiftnet_core::{Real, Result, Tensor};

/// Same result as [`shiftnet_core::shift::nn_search`]; every target is an
/// independent argmax, so the split does not change any pair.
pub fn par_nn_search<T: Real + Send + Sync>(
    decoder: &Tensor<T>,
    encoder: &Tensor<T>,
    level: &MaskLevel,
) -> Result<ShiftAssignment> {
    decoder.expect_same_shape(encoder, "par_nn_search")?;
    let index = SearchIndex::new(encoder, level)?;
    let pairs: Vec<ShiftPair> = level
        .missing()
        .par_iter()
        .map(|&y| {
            let (source, similarity) = index.best_match(&feature_vector(decoder, y));
            ShiftPair {
                target: y,
                source,
                similarity,
            }
        })
        .collect();
    ShiftAssignment::from_matches(level, pairs)
}
