//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fail.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shiftnet::dataset::generate_toy_dataset;
use shiftnet::search::par_nn_search;
use shiftnet_core::fdcheck::standard_suite;
use shiftnet_core::image_ops::to_unit_range;
use shiftnet_core::inversion::{invert_feature, GeneratorEncoder, IdentityEncoder, InversionConfig};
use shiftnet_core::mask::{propagate_mask, MaskImage};
use shiftnet_core::metrics::{mean_l2, psnr, ssim, PSNR_CAP};
use shiftnet_core::nets::{build_generator, generator_forward, ForwardOptions, Generator, GeneratorConfig, ShiftMode, SliceZero};
use shiftnet_core::shift::{apply_shift, nn_search, nn_search_as_correlation, random_assignment, shift_backward};
use shiftnet_core::train::{held_out_losses, inpaint, make_central_mask, make_random_mask, prepare_input, MaskKind, Sample, TrainConfig, Trainer};
use shiftnet_core::{Tape, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---- 1 --------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let runs: Vec<_> = (0..10u64).into_par_iter().map(|s| (s, standard_suite(s))).collect();
    let elapsed = start.elapsed();
    let mut checks = 0;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (seed, r) in runs {
        match r {
            Ok(reports) => {
                for r in reports {
                    checks += 1;
                    worst = worst.max(r.max_error);
                    if !r.passed {
                        failures.push(format!("seed {seed} {}", r.name));
                    }
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "{checks} checks over 10 seeds, worst rel err {worst:.2e} (tol 1e-4), {:.1}s (limit 120s){}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    )
}

// ---- 2, 3 -----------------------------------------------------------------

fn random_instance(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, MaskImage) {
    let h = rng.gen_range(2..=16);
    let w = rng.gen_range(2..=16);
    let c = rng.gen_range(1..=16);
    let p = rng.gen_range(0.1..0.9);
    let mut mask = MaskImage::from_fn(h, w, |_, _| rng.gen_bool(p));
    if !mask.has_known() {
        mask = MaskImage::from_fn(h, w, |y, x| y + x > 0);
    }
    (Tensor::randn([1, c, h, w], 1.0, rng), Tensor::randn([1, c, h, w], 1.0, rng), mask)
}

/// Cosine argmax by exhaustive loops; strict `>` keeps the smallest index.
fn brute_force(dec: &Tensor<f64>, enc: &Tensor<f64>, mask: &MaskImage) -> Vec<(usize, usize)> {
    let (_, c, h, w) = dec.dims4().unwrap();
    let plane = h * w;
    let at = |t: &Tensor<f64>, ch: usize, p: usize| t.data()[ch * plane + p];
    let mut out = Vec::new();
    for y in (0..plane).filter(|&y| mask.data()[y] == 1) {
        let dn = (0..c).map(|ch| at(dec, ch, y).powi(2)).sum::<f64>().sqrt() + 1e-8;
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for x in (0..plane).filter(|&x| mask.data()[x] == 0) {
            let en = (0..c).map(|ch| at(enc, ch, x).powi(2)).sum::<f64>().sqrt() + 1e-8;
            let cos = (0..c).map(|ch| at(dec, ch, y) * (at(enc, ch, x) / en)).sum::<f64>() / dn;
            if cos > best.1 {
                best = (x, cos);
            }
        }
        out.push((y, best.0));
    }
    out
}

fn level_of(mask: &MaskImage) -> shiftnet_core::mask::MaskLevel {
    propagate_mask(mask, 0, 0.5).unwrap().level(0).unwrap().clone()
}

fn shift_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut targets = 0;
    for _ in 0..100 {
        let (dec, enc, mask) = random_instance(&mut rng);
        let level = level_of(&mask);
        let oracle = brute_force(&dec, &enc, &mask);
        let a = nn_search(&dec, &enc, &level).unwrap().mapping();
        let b = nn_search_as_correlation(&dec, &enc, &level).unwrap().mapping();
        let c = par_nn_search(&dec, &enc, &level).unwrap().mapping();
        targets += oracle.len();
        if a != oracle || b != oracle || c != oracle {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!(
            "100 instances ({targets} targets), {mismatches} with any index mismatch, {:.2}s (limit 30s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn adjoint_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (dec, enc, mask) = random_instance(&mut rng);
        let level = level_of(&mask);
        let a = if i % 2 == 0 {
            nn_search(&dec, &enc, &level).unwrap()
        } else {
            random_assignment(&level, &mut rng).unwrap()
        };
        let f = enc;
        let g: Tensor<f64> = Tensor::randn(f.shape().to_vec(), 1.0, &mut rng);
        let lhs = apply_shift(&f, &a, &level).unwrap().dot(&g).unwrap();
        let rhs = f.dot(&shift_backward(&g, &a, &level).unwrap()).unwrap();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    outcome(worst <= 1e-10, format!("100 instances, worst relative gap {worst:.2e} (tol 1e-10)"))
}

// ---- 4 --------------------------------------------------------------------

fn mask_propagation() -> Outcome {
    let t = 5.0 / 16.0;
    let central = |s: usize, lo: usize, hi: usize| MaskImage::from_fn(s, s, |y, x| (lo..hi).contains(&y) && (lo..hi).contains(&x));

    let empty = propagate_mask(&MaskImage::empty(32, 32), 5, t).unwrap();
    let a_empty = (0..=5).all(|l| empty.level(l).unwrap().missing().is_empty());
    let full = propagate_mask(&MaskImage::from_fn(32, 32, |_, _| true), 5, t).unwrap();
    let a_full = (1..=5).all(|l| {
        let lv = full.level(l).unwrap();
        let s = lv.width();
        (0..s * s)
            .filter(|p| p / s > 0 && p / s + 1 < s && p % s > 0 && p % s + 1 < s)
            .all(|p| lv.is_missing(p))
    });

    let m = central(32, 8, 24);
    let sweep: Vec<_> = [4.0, 5.0, 6.0].iter().map(|k| propagate_mask(&m, 5, k / 16.0).unwrap()).collect();
    let b = (1..=5).all(|l| {
        sweep.windows(2).all(|w| {
            let (lo, hi) = (w[0].level(l).unwrap(), w[1].level(l).unwrap());
            hi.missing().iter().all(|y| lo.is_missing(*y))
        })
    });

    // Rows/cols 2..6 of 8×8: each 4×4 stride-2 window (pad 1) sees 1, 3, 3, 1
    // hole rows, so Ψ¹ is the outer product of (1,3,3,1)/4 with itself.
    let p = propagate_mask(&central(8, 2, 6), 1, t).unwrap();
    let l1 = p.level(1).unwrap();
    let v = [1.0, 3.0, 3.0, 1.0];
    let psi_ok = (0..16).all(|i| l1.psi()[i] == v[i / 4] * v[i % 4] / 16.0);
    let c = psi_ok && l1.missing() == [5, 6, 9, 10];

    outcome(
        a_empty && a_full && b && c,
        format!("(a) empty {a_empty} interior-full {a_full}; (b) monotone over T=4,5,6/16 {b}; (c) 8x8 hand case {c}"),
    )
}

// ---- 5, 9 -----------------------------------------------------------------

struct DeskRun {
    generator: Generator<f32>,
    before: (f64, f64),
    after: (f64, f64),
    psnr: f64,
}

fn composite_psnr(g: &Generator<f32>, samples: &[Sample<f32>]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    samples
        .iter()
        .map(|s| {
            let out = inpaint(g, s, Some(&mut rng)).unwrap();
            psnr(&to_unit_range(&out.composite), &to_unit_range(&s.gt)).unwrap()
        })
        .sum::<f64>()
        / samples.len() as f64
}

fn desk_run(train: &[Tensor<f32>], held: &[Sample<f32>], mode: ShiftMode, steps: usize, seed: u64) -> DeskRun {
    let gen = GeneratorConfig {
        shift_mode: mode,
        ..GeneratorConfig::desk()
    };
    let cfg = TrainConfig {
        seed,
        max_steps: Some(steps),
        ..TrainConfig::desk()
    };
    let mut t = Trainer::<f32>::new(&gen, cfg.clone()).unwrap();
    let before = held_out_losses(&t.generator, held, cfg.loss, 0).unwrap();
    t.run(train, |_, _| {}, |_, _| Ok(())).unwrap();
    assert_eq!(t.steps_done(), steps);
    let after = held_out_losses(&t.generator, held, cfg.loss, 0).unwrap();
    DeskRun {
        psnr: composite_psnr(&t.generator, held),
        before: (before.l1, before.guidance),
        after: (after.l1, after.guidance),
        generator: t.generator,
    }
}

fn desk_corpus(dir: &Path) -> (Vec<Tensor<f32>>, Vec<Sample<f32>>) {
    let corpus = generate_toy_dataset(dir, 64, 32, 42).unwrap();
    let train = corpus.train.load::<f32>().unwrap();
    let mask = make_central_mask(32);
    let held = corpus
        .heldout
        .load::<f32>()
        .unwrap()
        .iter()
        .map(|gt| prepare_input(gt, &mask, 0.0).unwrap())
        .collect();
    (train, held)
}

fn desk_learning(dir: &Path) -> (Outcome, Generator<f32>, Vec<Sample<f32>>) {
    let start = Instant::now();
    let (train, held) = desk_corpus(dir);
    let nearest = desk_run(&train, &held, ShiftMode::Nearest, 300, 7);
    let off = desk_run(&train, &held, ShiftMode::Off, 300, 7);
    let elapsed = start.elapsed();
    let l1_drop = 1.0 - nearest.after.0 / nearest.before.0;
    let g_drop = 1.0 - nearest.after.1 / nearest.before.1;
    let pass = l1_drop >= 0.5 && g_drop >= 0.3 && nearest.psnr >= off.psnr && elapsed < Duration::from_secs(900);
    let detail = format!(
        "held-out l1 {:.4} -> {:.4} (drop {:.1}%, need 50%), guidance {:.3} -> {:.3} (drop {:.1}%, need 30%), \
         PSNR nearest {:.2} dB vs off {:.2} dB, {:.1}s (limit 900s)",
        nearest.before.0,
        nearest.after.0,
        100.0 * l1_drop,
        nearest.before.1,
        nearest.after.1,
        100.0 * g_drop,
        nearest.psnr,
        off.psnr,
        elapsed.as_secs_f64()
    );
    (outcome(pass, detail), nearest.generator, held)
}

fn feature_inversion(trained: &Generator<f32>, held: &[Sample<f32>]) -> Outcome {
    // Inversion runs in 64-bit on the trained weights.
    let cfg = trained.config().clone();
    let mut g = build_generator::<f64>(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let weights: Vec<Tensor<f64>> = trained.params().iter().map(|p| p.value.cast()).collect();
    for (p, w) in g.params_mut().iter_mut().zip(weights) {
        p.value = w;
    }
    let gt: Tensor<f64> = held[0].gt.cast();
    let target = g.target_feature(&gt).unwrap();
    let pyramid = g.mask_pyramid(&held[0].mask).unwrap();
    let omega = pyramid.level(cfg.shift_layer).unwrap().missing().to_vec();
    let enc = GeneratorEncoder {
        generator: &g,
        layer: cfg.shift_layer,
    };
    let s = cfg.input_size;
    let inv = invert_feature(&enc, &target, &omega, [1, 3, s, s], InversionConfig::default()).unwrap();
    let monotone = inv.trace.windows(2).all(|w| w[1] <= w[0]);
    let (f0, f1) = (inv.trace[0], *inv.trace.last().unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img: Tensor<f64> = shiftnet_core::toy::texture(16, &mut rng);
    let all: Vec<usize> = (0..256).collect();
    let id = invert_feature(&IdentityEncoder, &img, &all, [1, 3, 16, 16], InversionConfig::default()).unwrap();
    let err = id.image.max_abs_diff(&img).unwrap();
    outcome(
        monotone && err <= 1e-6 && id.iterations <= 500,
        format!(
            "trained encoder: objective {f0:.4} -> {f1:.4} over {} steps, non-increasing {monotone}; \
             identity: max err {err:.1e} (tol 1e-6) in {} iterations (limit 500)",
            inv.iterations, id.iterations
        ),
    )
}

// ---- 6 --------------------------------------------------------------------

fn ablation_harness(train: &[Tensor<f32>]) -> Outcome {
    let variants = [
        (ShiftMode::Random, SliceZero::None),
        (ShiftMode::Nearest, SliceZero::Decoder),
        (ShiftMode::Nearest, SliceZero::Encoder),
        (ShiftMode::Nearest, SliceZero::Shift),
    ];
    let results: Vec<String> = variants
        .par_iter()
        .map(|&(mode, zero)| {
            let gen = GeneratorConfig {
                shift_mode: mode,
                slice_zero: zero,
                ..GeneratorConfig::desk()
            };
            let cfg = TrainConfig {
                max_steps: Some(100),
                mask_kind: MaskKind::Random,
                seed: 3,
                ..TrainConfig::desk()
            };
            let mut t = Trainer::<f32>::new(&gen, cfg).unwrap();
            let mut finite = true;
            match t.run(train, |_, r| finite &= r.is_finite(), |_, _| Ok(())) {
                Ok(()) if finite && t.steps_done() == 100 => String::new(),
                Ok(()) => format!("{mode}/{zero}: non-finite report"),
                Err(e) => format!("{mode}/{zero}: {e}"),
            }
        })
        .filter(|s| !s.is_empty())
        .collect();

    // Severed slice: any two assignments give the same output.
    let gen = GeneratorConfig {
        slice_zero: SliceZero::Shift,
        ..GeneratorConfig::desk()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = build_generator::<f64>(&gen, &mut rng).unwrap();
    let mut invariant = true;
    for _ in 0..5 {
        let gt = Tensor::uniform([1, 3, 32, 32], -1.0, 1.0, &mut rng);
        let mask = make_random_mask(32, &mut rng);
        let input = prepare_input(&gt, &mask, 0.0).unwrap().masked_input;
        let pyramid = g.mask_pyramid(&mask).unwrap();
        let level = pyramid.shift_level(gen.shift_layer).unwrap().clone();
        let outputs: Vec<Tensor<f64>> = (0..2)
            .map(|_| {
                let a = random_assignment(&level, &mut rng).unwrap();
                let mut tape = Tape::new();
                let opts = ForwardOptions {
                    frozen_assignment: Some(&a),
                    rng: None,
                };
                let out = generator_forward(&g, &mut tape, &input, &pyramid, None, opts).unwrap();
                tape.value(out.taps.output).clone()
            })
            .collect();
        invariant &= outputs[0] == outputs[1];
    }
    outcome(
        results.is_empty() && invariant,
        format!(
            "random + 3 slice_zero variants x 100 steps: {}; slice_zero=shift output identical under reassignment: {invariant}",
            if results.is_empty() { "all finite".to_string() } else { results.join("; ") }
        ),
    )
}

// ---- 7 --------------------------------------------------------------------

fn determinism(dir: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_shiftnet");
    let run = |args: &[&str]| {
        let o = Command::new(bin).args(args).current_dir(dir).output().unwrap();
        (o.status.success(), String::from_utf8_lossy(&o.stderr).into_owned())
    };
    let (ok, err) = run(&["toydata", "corpus", "--count", "64", "--seed", "11"]);
    if !ok {
        return outcome(false, format!("toydata failed: {err}"));
    }
    std::fs::write(
        dir.join("det.conf"),
        "epochs = 2\nlr = 0.002\nprecision = f32\nmask_kind = random\ndata_dir = corpus/train\n",
    )
    .unwrap();
    for out in ["a", "b"] {
        let (ok, err) = run(&["train", "det.conf", "--out-dir", out, "--seed", "5"]);
        if !ok {
            return outcome(false, format!("train failed: {err}"));
        }
    }
    let read = |p: &str| std::fs::read(dir.join(p)).unwrap();
    let (a, b) = (read("a/ckpt/epoch_1.snet"), read("b/ckpt/epoch_1.snet"));
    let same = a == b;
    let csv_same = read("a/losses.csv") == read("b/losses.csv");
    outcome(
        same && csv_same,
        format!("two CLI train runs: epoch_1.snet ({} bytes) identical {same}, losses.csv identical {csv_same}", a.len()),
    )
}

// ---- 8 --------------------------------------------------------------------

fn oracle_gray(t: &Tensor<f64>) -> Vec<f64> {
    let (_, c, h, w) = t.dims4().unwrap();
    (0..h * w)
        .map(|p| (0..c).map(|ch| t.data()[ch * h * w + p]).sum::<f64>() / c as f64)
        .collect()
}

/// Direct 2-D weighted window statistics with centred second moments.
fn oracle_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (_, _, h, w) = a.dims4().unwrap();
    let (x, y) = (oracle_gray(a), oracle_gray(b));
    let k = 11;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let at = |v: &[f64], i: usize, j: usize| v[(oy + i) * w + ox + j];
            let mut mx = 0.0;
            let mut my = 0.0;
            for i in 0..k {
                for j in 0..k {
                    mx += win[i * k + j] * at(&x, i, j);
                    my += win[i * k + j] * at(&y, i, j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (dx, dy) = (at(&x, i, j) - mx, at(&y, i, j) - my);
                    vx += win[i * k + j] * dx * dx;
                    vy += win[i * k + j] * dy * dy;
                    cov += win[i * k + j] * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn oracle_mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let n = a.len() as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (h, w) = (rng.gen_range(11..=24), rng.gen_range(11..=24));
        let a = Tensor::<f64>::uniform([1, 3, h, w], 0.0, 1.0, &mut rng);
        let b = if i % 2 == 0 {
            a.map(|v| 1.0 - v)
        } else {
            Tensor::uniform([1, 3, h, w], 0.0, 1.0, &mut rng)
        };
        let mse = oracle_mse(&a, &b);
        worst = worst
            .max((mean_l2(&a, &b).unwrap() - mse).abs())
            .max((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs())
            .max((ssim(&a, &b).unwrap() - oracle_ssim(&a, &b)).abs());
    }
    let a = Tensor::<f64>::uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let edges = psnr(&a, &a).unwrap() == PSNR_CAP
        && (ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12
        && mean_l2(&a, &a).unwrap() == 0.0;
    outcome(
        worst <= 1e-9 && edges,
        format!("20 random pairs, worst |metric - oracle| {worst:.1e} (tol 1e-9); identical images give 100/1/0: {edges}"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("{} {n} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient-correctness", gradient_correctness());
    report(2, "shift-oracle-equivalence", shift_oracle());
    report(3, "adjoint-identity", adjoint_identity());
    report(4, "mask-propagation", mask_propagation());
    let desk_dir = tmp.path().join("desk");
    let (o, trained, held) = desk_learning(&desk_dir);
    report(5, "desk-scale-learning", o);
    let (train, _) = desk_corpus(&desk_dir);
    report(6, "ablation-harness", ablation_harness(&train));
    let det_dir = tmp.path().join("det");
    std::fs::create_dir_all(&det_dir).unwrap();
    report(7, "determinism", determinism(&det_dir));
    report(8, "metric-oracles", metric_oracles());
    report(9, "feature-inversion", feature_inversion(&trained, &held));
    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
