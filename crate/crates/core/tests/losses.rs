use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftnet_core::fdcheck::gradcheck_generator_config;
use shiftnet_core::losses::{guidance_loss, l1_loss, LossOptions};
use shiftnet_core::nets::{build_generator, generator_forward, ForwardOptions, Generator};
use shiftnet_core::shift::ShiftAssignment;
use shiftnet_core::train::{make_central_mask, prepare_input};
use shiftnet_core::{Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn guidance_value(dec: &Tensor<f64>, target: &Tensor<f64>, missing: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let d = tape.leaf(dec.clone()).unwrap();
    let l = guidance_loss(&mut tape, d, target, missing, LossOptions::default()).unwrap();
    tape.value(l).item()
}

#[test]
fn guidance_ignores_known_positions() {
    let mut r = rng(0);
    let dec = Tensor::<f64>::randn([1, 4, 5, 5], 1.0, &mut r);
    let target = Tensor::<f64>::randn([1, 4, 5, 5], 1.0, &mut r);
    let missing = [6usize, 7, 12, 18];
    let base = guidance_value(&dec, &target, &missing);
    let mut moved = target.clone();
    for c in 0..4 {
        for p in (0..25).filter(|p| !missing.contains(p)) {
            moved.data_mut()[c * 25 + p] += 5.0;
        }
    }
    assert_eq!(base, guidance_value(&dec, &moved, &missing));
    // mean over positions of the squared vector distance
    let oracle: f64 = missing
        .iter()
        .map(|&p| (0..4).map(|c| (dec.data()[c * 25 + p] - target.data()[c * 25 + p]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / missing.len() as f64;
    assert!((base - oracle).abs() < 1e-12);
}

#[test]
fn l1_matches_scalar_oracle() {
    let mut r = rng(1);
    let out = Tensor::<f64>::randn([1, 3, 4, 4], 1.0, &mut r);
    let gt = Tensor::<f64>::randn([1, 3, 4, 4], 1.0, &mut r);
    let oracle = out.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 48.0;
    for (sum, expect) in [(false, oracle), (true, oracle * 48.0)] {
        let mut tape = Tape::new();
        let o = tape.leaf(out.clone()).unwrap();
        let opts = LossOptions {
            sum_reduction: sum,
            ..Default::default()
        };
        let l = l1_loss(&mut tape, o, &gt, opts).unwrap();
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn guidance_is_non_negative(seed in 0u64..1000, k in 0usize..9) {
        let mut r = rng(seed);
        let dec = Tensor::<f64>::randn([1, 2, 3, 3], 1.0, &mut r);
        let target = Tensor::<f64>::randn([1, 2, 3, 3], 1.0, &mut r);
        let missing: Vec<usize> = (0..k).collect();
        prop_assert!(guidance_value(&dec, &target, &missing) >= 0.0);
    }
}

/// Guidance loss of `g` against a fixed target, or with the target
/// recomputed from `g` itself.
fn guidance_of(
    g: &Generator<f64>,
    input: &Tensor<f64>,
    gt: &Tensor<f64>,
    frozen: &ShiftAssignment,
    target: Option<&Tensor<f64>>,
) -> f64 {
    let mask = make_central_mask(16);
    let pyramid = g.mask_pyramid(&mask).unwrap();
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        frozen_assignment: Some(frozen),
        rng: None,
    };
    let out = generator_forward(g, &mut tape, input, &pyramid, Some(gt), opts).unwrap();
    let t = target.cloned().unwrap_or(out.target_feature.unwrap());
    let missing = pyramid.level(g.config().shift_layer).unwrap().missing().to_vec();
    let l = guidance_loss(&mut tape, out.taps.decoder_feature, &t, &missing, LossOptions::default()).unwrap();
    tape.value(l).item()
}

#[test]
fn ground_truth_branch_carries_no_gradient() {
    let cfg = gradcheck_generator_config();
    let mut g = build_generator::<f64>(&cfg, &mut rng(2)).unwrap();
    for p in g.params_mut().iter_mut() {
        p.value = p.value.scale(10.0);
    }
    let gt = Tensor::<f64>::uniform([1, 3, 16, 16], -1.0, 1.0, &mut rng(3));
    let mask = make_central_mask(16);
    let input = prepare_input(&gt, &mask, 0.0).unwrap().masked_input;
    let pyramid = g.mask_pyramid(&mask).unwrap();

    let mut tape = Tape::new();
    let out = generator_forward(&g, &mut tape, &input, &pyramid, Some(&gt), ForwardOptions::default()).unwrap();
    let frozen = out.taps.assignment.clone().unwrap();
    let target = out.target_feature.clone().unwrap();
    let missing = pyramid.level(cfg.shift_layer).unwrap().missing().to_vec();
    let l = guidance_loss(&mut tape, out.taps.decoder_feature, &target, &missing, LossOptions::default()).unwrap();
    let grads = tape.backward(l).unwrap();
    // first encoder layer feeds both the decoder tap and the target
    let analytic = grads.get(out.bound.get(0)).unwrap().clone();

    let h = 1e-6;
    let (mut frozen_hits, mut live_misses) = (0, 0);
    let probes = [3usize, 17, 40, 77, 120, 150];
    for &j in &probes {
        let fd = |live: bool| {
            let eval = |delta: f64| {
                let mut gp = g.clone();
                gp.params_mut().get_mut(0).value.data_mut()[j] += delta;
                let t = if live { None } else { Some(&target) };
                guidance_of(&gp, &input, &gt, &frozen, t)
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        };
        let a = analytic.data()[j];
        let rel = |v: f64| (a - v).abs() / a.abs().max(v.abs()).max(1e-8);
        if rel(fd(false)) < 1e-4 {
            frozen_hits += 1;
        }
        if rel(fd(true)) > 1e-3 {
            live_misses += 1;
        }
    }
    assert_eq!(frozen_hits, probes.len());
    assert!(live_misses > 0);
}
