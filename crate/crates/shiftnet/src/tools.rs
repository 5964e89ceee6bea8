//! Inpainting, evaluation, timing and feature visualization on files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shiftnet_core::image_ops::{crop, resize_min_side, to_unit_range};
use shiftnet_core::inversion::{invert_feature, GeneratorEncoder, Inversion, InversionConfig};
use shiftnet_core::mask::MaskImage;
use shiftnet_core::metrics::{evaluate, MetricReport, Region};
use shiftnet_core::nets::{generator_forward, ForwardOptions, Generator};
use shiftnet_core::train::{inpaint, make_central_mask, make_random_mask, prepare_input, MaskKind, Sample};
use shiftnet_core::{Real, Tape, Tensor};

use crate::config::RunConfig;
use crate::dataset::{mask_path_for, DatasetIndex, Split};
use crate::ppm::{read_image, read_mask, write_image, ImageFile};

fn check_size(what: &str, h: usize, w: usize, size: usize) -> Result<()> {
    if (h, w) != (size, size) {
        bail!("{what} is {w}x{h}, the model expects {size}x{size}");
    }
    Ok(())
}

/// Inpaints one image file with one mask file and writes the composite.
pub fn inpaint_file<T: Real>(
    g: &Generator<T>,
    cfg: &RunConfig,
    image: &Path,
    mask: &Path,
    out: &Path,
) -> Result<()> {
    let size = g.config().input_size;
    let img = read_image(image)?;
    check_size(&image.display().to_string(), img.height, img.width, size)?;
    let m = read_mask(mask)?;
    check_size(&mask.display().to_string(), m.height(), m.width(), size)?;
    let sample = prepare_input(&img.to_tensor::<T>(), &m, cfg.train.fill)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let result = inpaint(g, &sample, Some(&mut rng))?;
    write_image(out, &ImageFile::from_tensor(&result.composite)?).with_context(|| format!("writing {}", out.display()))
}

/// Brings an image to the model size: short side resized, then centre crop.
pub fn fit_to_model<T: Real>(img: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let r = resize_min_side(img, size)?;
    let (_, _, h, w) = r.dims4()?;
    Ok(crop(&r, (h - size) / 2, (w - size) / 2, size)?)
}

/// Evaluation masks: a `name.mask.ppm` next to the image wins, otherwise the
/// configured kind (random masks drawn from the run seed in index order).
fn eval_masks(index: &DatasetIndex, cfg: &RunConfig) -> Result<Vec<MaskImage>> {
    let size = cfg.generator.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    index
        .paths
        .iter()
        .map(|p| {
            let generated = match cfg.train.mask_kind {
                MaskKind::Central => make_central_mask(size),
                MaskKind::Random => make_random_mask(size, &mut rng),
            };
            let side = mask_path_for(p);
            if side.exists() {
                let m = read_mask(&side)?;
                check_size(&side.display().to_string(), m.height(), m.width(), size)?;
                Ok(m)
            } else {
                Ok(generated)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<(String, MetricReport)>,
    pub mean: MetricReport,
}

impl EvalReport {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "filename,psnr,ssim,mean_l2")?;
        for (name, m) in &self.rows {
            writeln!(w, "{name},{},{},{}", m.psnr, m.ssim, m.mean_l2)?;
        }
        writeln!(w, "mean,{},{},{}", self.mean.psnr, self.mean.ssim, self.mean.mean_l2)
    }
}

/// Metrics of the composited output against every image of `dir`, computed
/// on `[0, 1]` images.
pub fn evaluate_dir<T: Real + Send + Sync>(
    g: &Generator<T>,
    cfg: &RunConfig,
    dir: &Path,
    region: Region,
) -> Result<EvalReport> {
    let index = DatasetIndex::scan(dir, Split::HeldOut)?;
    let images = index.load::<T>()?;
    let masks = eval_masks(&index, cfg)?;
    let size = cfg.generator.input_size;
    let rows = index
        .paths
        .par_iter()
        .zip(images.par_iter().zip(masks.par_iter()))
        .enumerate()
        .map(|(i, (path, (img, mask)))| {
            let gt = fit_to_model(img, size)?;
            let sample = prepare_input(&gt, mask, cfg.train.fill)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(i as u64));
            let out = inpaint(g, &sample, Some(&mut rng))?;
            let m = evaluate(&to_unit_range(&out.composite), &to_unit_range(&gt), mask, region)?;
            let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            Ok((name, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean = MetricReport {
        psnr: rows.iter().map(|(_, m)| m.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|(_, m)| m.ssim).sum::<f64>() / n,
        mean_l2: rows.iter().map(|(_, m)| m.mean_l2).sum::<f64>() / n,
    };
    Ok(EvalReport { rows, mean })
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub runs: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Median wall-clock time of `n_runs` inpainting passes on a toy image with
/// the central mask.
pub fn bench_inference<T: Real>(g: &Generator<T>, n_runs: usize) -> Result<BenchReport> {
    if n_runs == 0 {
        bail!("bench needs at least one run");
    }
    let size = g.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gt = shiftnet_core::toy::texture::<T>(size, &mut rng);
    let sample = prepare_input(&gt, &make_central_mask(size), 0.0)?;
    let mut times = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t = Instant::now();
        inpaint(g, &sample, Some(&mut rng))?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median_ms = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    Ok(BenchReport {
        runs: n_runs,
        median_ms,
        min_ms: times[0],
        max_ms: times[times.len() - 1],
    })
}

pub struct Visualization<T: Real> {
    /// Image whose shift-layer encoder features match the ground truth's.
    pub from_gt: Inversion<T>,
    /// Image whose shift-layer encoder features match the decoder feature.
    pub from_decoder: Inversion<T>,
}

/// Inverts `Φ_l(gt)` and the decoder feature at the mirror layer over the
/// missing positions of the shift level.
pub fn visualize<T: Real>(g: &Generator<T>, sample: &Sample<T>, inv: InversionConfig) -> Result<Visualization<T>> {
    let cfg = g.config();
    let l = cfg.shift_layer;
    let pyramid = g.mask_pyramid(&sample.mask)?;
    let omega = pyramid.level(l)?.missing().to_vec();
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = generator_forward(
        g,
        &mut tape,
        &sample.masked_input,
        &pyramid,
        Some(&sample.gt),
        ForwardOptions {
            frozen_assignment: None,
            rng: Some(&mut rng),
        },
    )?;
    let decoder = tape.value(out.taps.decoder_feature).clone();
    let target = out.target_feature.expect("ground truth was supplied");
    let enc = GeneratorEncoder { generator: g, layer: l };
    let s = cfg.input_size;
    let shape = [1, 3, s, s];
    Ok(Visualization {
        from_gt: invert_feature(&enc, &target, &omega, shape, inv)?,
        from_decoder: invert_feature(&enc, &decoder, &omega, shape, inv)?,
    })
}

/// Runs [`visualize`] on an image file (central mask unless a mask file is
/// given) and writes `<stem>_hgt.ppm` and `<stem>_hde.ppm` into `out_dir`.
pub fn visualize_file<T: Real>(
    g: &Generator<T>,
    cfg: &RunConfig,
    image: &Path,
    mask: Option<&Path>,
    out_dir: &Path,
    inv: InversionConfig,
) -> Result<[PathBuf; 2]> {
    let size = g.config().input_size;
    let img = read_image(image)?;
    let gt = fit_to_model(&img.to_tensor::<T>(), size)?;
    let mask = match mask {
        Some(p) => read_mask(p)?,
        None => make_central_mask(size),
    };
    check_size("mask", mask.height(), mask.width(), size)?;
    let v = visualize(g, &prepare_input(&gt, &mask, cfg.train.fill)?, inv)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let paths = [out_dir.join(format!("{stem}_hgt.ppm")), out_dir.join(format!("{stem}_hde.ppm"))];
    for (p, inv) in paths.iter().zip([&v.from_gt, &v.from_decoder]) {
        write_image(p, &ImageFile::from_tensor(&inv.image)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(paths)
}
