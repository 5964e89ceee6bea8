//! Command-line surface. Exit codes: 0 ok, 1 runtime failure, 2 usage.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shiftnet_core::fdcheck::{standard_suite, FdReport};
use shiftnet_core::inversion::InversionConfig;
use shiftnet_core::metrics::Region;
use shiftnet_core::train::{make_central_mask, make_random_mask, MaskKind};
use shiftnet_core::Real;

use crate::config::{Precision, RunConfig};
use crate::dataset::{generate_toy_dataset, TOY_COUNT, TOY_SIZE};
use crate::model::{config_for_checkpoint, load_generator};
use crate::ppm::write_mask;
use crate::{driver, tools};

#[derive(Parser, Debug)]
#[command(name = "shiftnet", version, about = "Inpainting with a shift-connection U-Net")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config overrides, applied after the config file is read.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "threshold-T", value_name = "T")]
    pub threshold_t: Option<String>,
    #[arg(long, value_name = "nearest|random|off")]
    pub shift_mode: Option<String>,
    #[arg(long, value_name = "none|decoder|encoder|shift")]
    pub slice_zero: Option<String>,
    #[arg(long)]
    pub lambda_g: Option<String>,
    #[arg(long)]
    pub lambda_adv: Option<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let seed = self.seed.map(|s| s.to_string());
        let pairs = [
            ("seed", &seed),
            ("threshold_T", &self.threshold_t),
            ("shift_mode", &self.shift_mode),
            ("slice_zero", &self.slice_zero),
            ("lambda_g", &self.lambda_g),
            ("lambda_adv", &self.lambda_adv),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, v).map_err(|e| anyhow::anyhow!("--{}: {e}", k.replace('_', "-")))?;
            }
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Run config; defaults to config.txt of the checkpoint's run directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl ModelArgs {
    fn resolve(&self, ckpt: &Path) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => config_for_checkpoint(ckpt)?,
        };
        self.overrides.apply(&mut cfg)?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train from a config file.
    Train {
        config: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fill the white region of MASK in IMAGE and write the composite.
    Inpaint {
        ckpt: PathBuf,
        image: PathBuf,
        mask: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// PSNR, SSIM and mean l2 over a directory of images, as CSV.
    Evaluate {
        ckpt: PathBuf,
        dir: PathBuf,
        /// Restrict metrics to the missing region.
        #[arg(long)]
        hole: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Finite-difference check of every layer, loss and both networks.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
    /// Invert ground-truth and decoder features into images.
    Visualize {
        ckpt: PathBuf,
        image: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Median inference time per image.
    Bench {
        ckpt: PathBuf,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Write a mask file (white = missing).
    Mask {
        out: PathBuf,
        #[arg(long, default_value_t = TOY_SIZE)]
        size: usize,
        #[arg(long, default_value = "central", value_name = "central|random")]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the procedural toy corpus.
    Toydata {
        dir: PathBuf,
        #[arg(long, default_value_t = TOY_COUNT)]
        count: usize,
        #[arg(long, default_value_t = TOY_SIZE)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn with_precision<R>(p: Precision, f32_run: impl FnOnce() -> R, f64_run: impl FnOnce() -> R) -> R {
    match p {
        Precision::F32 => f32_run(),
        Precision::F64 => f64_run(),
    }
}

/// `Ok(false)` signals a completed run with a failed outcome.
fn execute(cmd: Command, out: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::Train {
            config,
            data_dir,
            out_dir,
            overrides,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(d) = data_dir {
                cfg.data_dir = Some(d);
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            overrides.apply(&mut cfg)?;
            let mut log = |s: &str| {
                let _ = writeln!(out, "{s}");
            };
            let summary = match cfg.precision {
                Precision::F32 => driver::train::<f32>(&cfg, &mut log)?,
                Precision::F64 => driver::train::<f64>(&cfg, &mut log)?,
            };
            writeln!(out, "{} steps over {} epochs", summary.steps, summary.epochs)?;
        }
        Command::Inpaint {
            ckpt,
            image,
            mask,
            out: dst,
            model,
        } => {
            let cfg = model.resolve(&ckpt)?;
            fn go<T: Real>(cfg: &RunConfig, ckpt: &Path, image: &Path, mask: &Path, dst: &Path) -> Result<()> {
                let g = load_generator::<T>(ckpt, &cfg.generator)?;
                tools::inpaint_file(&g, cfg, image, mask, dst)
            }
            with_precision(
                cfg.precision,
                || go::<f32>(&cfg, &ckpt, &image, &mask, &dst),
                || go::<f64>(&cfg, &ckpt, &image, &mask, &dst),
            )?;
            writeln!(out, "wrote {}", dst.display())?;
        }
        Command::Evaluate {
            ckpt,
            dir,
            hole,
            out: dst,
            model,
        } => {
            let cfg = model.resolve(&ckpt)?;
            let region = if hole { Region::Hole } else { Region::Full };
            fn go<T: Real + Send + Sync>(
                cfg: &RunConfig,
                ckpt: &Path,
                dir: &Path,
                region: Region,
            ) -> Result<tools::EvalReport> {
                let g = load_generator::<T>(ckpt, &cfg.generator)?;
                tools::evaluate_dir(&g, cfg, dir, region)
            }
            let report = with_precision(
                cfg.precision,
                || go::<f32>(&cfg, &ckpt, &dir, region),
                || go::<f64>(&cfg, &ckpt, &dir, region),
            )?;
            match dst {
                Some(p) => {
                    let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    report.write_csv(std::io::BufWriter::new(f))?;
                    writeln!(
                        out,
                        "mean psnr {:.3} ssim {:.4} mean_l2 {:.5}",
                        report.mean.psnr, report.mean.ssim, report.mean.mean_l2
                    )?;
                }
                None => report.write_csv(&mut *out)?,
            }
        }
        Command::Gradcheck { seeds, first_seed } => {
            let runs: Vec<(u64, Vec<FdReport>)> = (first_seed..first_seed + seeds)
                .into_par_iter()
                .map(|s| Ok((s, standard_suite(s)?)))
                .collect::<Result<_>>()?;
            let mut all = true;
            for (seed, reports) in &runs {
                for r in reports {
                    writeln!(out, "seed {seed} {r}")?;
                    all &= r.passed;
                }
            }
            let total: usize = runs.iter().map(|(_, r)| r.len()).sum();
            let failed: usize = runs.iter().flat_map(|(_, r)| r).filter(|r| !r.passed).count();
            writeln!(out, "{} of {total} checks passed", total - failed)?;
            return Ok(all);
        }
        Command::Visualize {
            ckpt,
            image,
            mask,
            out_dir,
            iters,
            model,
        } => {
            let cfg = model.resolve(&ckpt)?;
            let inv = InversionConfig {
                max_iters: iters,
                ..Default::default()
            };
            fn go<T: Real>(
                cfg: &RunConfig,
                ckpt: &Path,
                image: &Path,
                mask: Option<&Path>,
                dir: &Path,
                inv: InversionConfig,
            ) -> Result<[PathBuf; 2]> {
                let g = load_generator::<T>(ckpt, &cfg.generator)?;
                tools::visualize_file(&g, cfg, image, mask, dir, inv)
            }
            let m = mask.as_deref();
            let paths = with_precision(
                cfg.precision,
                || go::<f32>(&cfg, &ckpt, &image, m, &out_dir, inv),
                || go::<f64>(&cfg, &ckpt, &image, m, &out_dir, inv),
            )?;
            for p in paths {
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Bench { ckpt, runs, model } => {
            let cfg = model.resolve(&ckpt)?;
            fn go<T: Real>(cfg: &RunConfig, ckpt: &Path, runs: usize) -> Result<tools::BenchReport> {
                let g = load_generator::<T>(ckpt, &cfg.generator)?;
                tools::bench_inference(&g, runs)
            }
            let r = with_precision(
                cfg.precision,
                || go::<f32>(&cfg, &ckpt, runs),
                || go::<f64>(&cfg, &ckpt, runs),
            )?;
            let s = cfg.generator.input_size;
            writeln!(
                out,
                "{s}x{s} inpainting, {} runs: median {:.3} ms (min {:.3}, max {:.3})",
                r.runs, r.median_ms, r.min_ms, r.max_ms
            )?;
        }
        Command::Mask { out: dst, size, kind, seed } => {
            if size < 8 {
                anyhow::bail!("mask size {size} is below 8");
            }
            let mask = match kind.parse::<MaskKind>()? {
                MaskKind::Central => make_central_mask(size),
                MaskKind::Random => make_random_mask(size, &mut ChaCha8Rng::seed_from_u64(seed)),
            };
            write_mask(&dst, &mask)?;
            writeln!(out, "wrote {} ({:.1}% missing)", dst.display(), 100.0 * mask.coverage())?;
        }
        Command::Toydata { dir, count, size, seed } => {
            let corpus = generate_toy_dataset(&dir, count, size, seed)?;
            writeln!(
                out,
                "wrote {} training and {} held-out images under {}",
                corpus.train.len(),
                corpus.heldout.len(),
                dir.display()
            )?;
        }
    }
    Ok(true)
}
