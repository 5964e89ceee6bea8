use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftnet_core::mask::{propagate_mask, MaskImage, MaskLevel};
use shiftnet_core::shift::{
    apply_shift, nn_search, nn_search_as_correlation, random_assignment, shift_backward, ShiftAssignment,
};
use shiftnet_core::Tensor;

fn level_of(mask: &MaskImage) -> MaskLevel {
    propagate_mask(mask, 0, 0.5).unwrap().level(0).unwrap().clone()
}

/// Exhaustive double loop over positions, using the textbook cosine.
fn brute_force(dec: &Tensor<f64>, enc: &Tensor<f64>, mask: &MaskImage) -> Vec<(usize, usize)> {
    let (_, c, h, w) = dec.dims4().unwrap();
    let plane = h * w;
    let at = |t: &Tensor<f64>, ch: usize, p: usize| t.data()[ch * plane + p];
    let mut out = Vec::new();
    for y in 0..plane {
        if mask.data()[y] == 0 {
            continue;
        }
        let dn: f64 = (0..c).map(|ch| at(dec, ch, y).powi(2)).sum::<f64>().sqrt() + 1e-8;
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for x in 0..plane {
            if mask.data()[x] == 1 {
                continue;
            }
            let en: f64 = (0..c).map(|ch| at(enc, ch, x).powi(2)).sum::<f64>().sqrt() + 1e-8;
            let cos: f64 = (0..c).map(|ch| at(dec, ch, y) * (at(enc, ch, x) / en)).sum::<f64>() / dn;
            if cos > best.1 {
                best = (x, cos);
            }
        }
        out.push((y, best.0));
    }
    out
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, MaskImage) {
    let h = rng.gen_range(2..=16);
    let w = rng.gen_range(2..=16);
    let c = rng.gen_range(1..=16);
    let p = rng.gen_range(0.1..0.9);
    let mut mask = MaskImage::from_fn(h, w, |_, _| rng.gen_bool(p));
    if !mask.has_known() {
        mask = MaskImage::from_fn(h, w, |y, x| y + x > 0);
    }
    let dec = Tensor::randn([1, c, h, w], 1.0, rng);
    let enc = Tensor::randn([1, c, h, w], 1.0, rng);
    (dec, enc, mask)
}

#[test]
fn three_search_routes_agree_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (dec, enc, mask) = random_instance(&mut rng);
        let level = level_of(&mask);
        let oracle = brute_force(&dec, &enc, &mask);
        assert_eq!(nn_search(&dec, &enc, &level).unwrap().mapping(), oracle);
        assert_eq!(nn_search_as_correlation(&dec, &enc, &level).unwrap().mapping(), oracle);
    }
}

#[test]
fn duplicate_sources_resolve_to_smaller_index() {
    // Known positions 1 and 3 hold the same vector; 0 is missing.
    let mask = MaskImage::new(1, 4, vec![1, 0, 0, 0]).unwrap();
    let level = level_of(&mask);
    let enc = Tensor::new([1, 2, 1, 4], vec![0.0, 1.0, -1.0, 1.0, 0.0, 2.0, 0.5, 2.0]).unwrap();
    let dec = Tensor::new([1, 2, 1, 4], vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
    for a in [
        nn_search(&dec, &enc, &level).unwrap(),
        nn_search_as_correlation(&dec, &enc, &level).unwrap(),
    ] {
        assert_eq!(a.mapping(), vec![(0, 1)]);
    }
}

#[test]
fn single_known_position_takes_everything() {
    let mask = MaskImage::from_fn(3, 3, |y, x| (y, x) != (2, 1));
    let level = level_of(&mask);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dec = Tensor::<f64>::randn([1, 4, 3, 3], 1.0, &mut rng);
    let enc = Tensor::randn([1, 4, 3, 3], 1.0, &mut rng);
    let a = nn_search(&dec, &enc, &level).unwrap();
    assert!(a.pairs().iter().all(|p| p.source == 7));
    let shifted = apply_shift(&enc, &a, &level).unwrap();
    for ch in 0..4 {
        for p in 0..9 {
            assert_eq!(shifted.data()[ch * 9 + p], enc.data()[ch * 9 + 7]);
        }
    }
}

#[test]
fn apply_shift_matches_gather_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (_, enc, mask) = random_instance(&mut rng);
        let level = level_of(&mask);
        let a = random_assignment(&level, &mut rng).unwrap();
        let (_, c, h, w) = enc.dims4().unwrap();
        let plane = h * w;
        let mut source: Vec<usize> = (0..plane).collect();
        for (t, s) in a.mapping() {
            source[t] = s;
        }
        let got = apply_shift(&enc, &a, &level).unwrap();
        for ch in 0..c {
            for p in 0..plane {
                assert_eq!(got.data()[ch * plane + p], enc.data()[ch * plane + source[p]]);
            }
        }
    }
}

#[test]
fn adjoint_identity_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (_, f, mask) = random_instance(&mut rng);
        let level = level_of(&mask);
        let a = random_assignment(&level, &mut rng).unwrap();
        let g = Tensor::randn(f.shape().to_vec(), 1.0, &mut rng);
        let lhs = apply_shift(&f, &a, &level).unwrap().dot(&g).unwrap();
        let rhs = f.dot(&shift_backward(&g, &a, &level).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn empty_hole_is_identity_both_ways() {
    let mask = MaskImage::empty(4, 4);
    let level = level_of(&mask);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = Tensor::<f64>::randn([1, 3, 4, 4], 1.0, &mut rng);
    let a = nn_search(&f, &f, &level).unwrap();
    assert!(a.is_empty());
    assert_eq!(apply_shift(&f, &a, &level).unwrap(), f);
    assert_eq!(shift_backward(&f, &a, &level).unwrap(), f);
}

#[test]
fn all_zero_decoder_vector_still_assigned() {
    let mask = MaskImage::from_fn(2, 2, |y, x| y == 0 && x == 0);
    let level = level_of(&mask);
    let enc = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let dec = Tensor::zeros([1, 1, 2, 2]);
    let a = nn_search(&dec, &enc, &level).unwrap();
    assert_eq!(a.len(), 1);
    assert!(level.known().contains(&a.pairs()[0].source));
}

#[test]
fn golden_debug_dump() {
    let mask = MaskImage::new(2, 3, vec![0, 1, 0, 0, 0, 1]).unwrap();
    let level = level_of(&mask);
    // Known directions: (1,0) (0,1) (1,1) (-1,0); the hole values are noise.
    let enc = Tensor::new(
        [1, 2, 2, 3],
        vec![1.0, 7.0, 0.0, 1.0, -1.0, 5.0, 0.0, 7.0, 1.0, 1.0, 0.0, 5.0],
    )
    .unwrap();
    let dec = Tensor::new(
        [1, 2, 2, 3],
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0],
    )
    .unwrap();
    let a = nn_search(&dec, &enc, &level).unwrap();
    let expected = "0 1 -> 0 2 sim=1.000000\n1 2 -> 1 0 sim=1.000000\n";
    assert_eq!(a.debug_dump(), expected);
}

#[test]
fn from_pairs_rejects_bad_rows() {
    let mask = MaskImage::new(1, 3, vec![1, 0, 1]).unwrap();
    let level = level_of(&mask);
    assert!(ShiftAssignment::from_pairs(&level, &[(0, 1), (2, 1)]).is_ok());
    // Missing a row, sourcing from a hole, and targeting a known position.
    assert!(ShiftAssignment::from_pairs(&level, &[(0, 1)]).is_err());
    assert!(ShiftAssignment::from_pairs(&level, &[(0, 2), (2, 1)]).is_err());
    assert!(ShiftAssignment::from_pairs(&level, &[(0, 1), (2, 1), (1, 1)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_scaling_keeps_assignment(seed in any::<u64>(), k in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dec, enc, mask) = random_instance(&mut rng);
        let level = level_of(&mask);
        let a = nn_search(&dec, &enc, &level).unwrap();
        let b = nn_search(&dec.scale(k), &enc, &level).unwrap();
        prop_assert_eq!(a.mapping(), b.mapping());
    }

    #[test]
    fn sparse_rows_sum_to_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dec, enc, mask) = random_instance(&mut rng);
        let level = level_of(&mask);
        let a = nn_search(&dec, &enc, &level).unwrap();
        let plane = mask.height() * mask.width();
        let mut sums = vec![0u32; plane];
        for (row, col, v) in a.sparse_matrix() {
            sums[row] += u32::from(v);
            if level.is_missing(row) {
                prop_assert!(!level.is_missing(col));
            } else {
                prop_assert_eq!(row, col);
            }
        }
        prop_assert!(sums.iter().all(|&s| s == 1));
    }
}
