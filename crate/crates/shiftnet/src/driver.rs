//! Epoch driver: loads the data, runs the trainer, writes the loss CSV and
//! one checkpoint per epoch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use shiftnet_core::losses::LossReport;
use shiftnet_core::train::Trainer;
use shiftnet_core::Real;

use crate::config::RunConfig;
use crate::dataset::{DatasetIndex, Split};
use crate::model::{checkpoint_path, save_checkpoint, CONFIG_FILE, LOSS_FILE};

pub const DIAGNOSTIC_FILE: &str = "diagnostic.txt";
pub const LOSS_HEADER: &str = "step,l1,guidance,g_adv,d_loss,total";

pub fn loss_row(step: usize, r: &LossReport) -> String {
    format!("{step},{},{},{},{},{}", r.l1, r.guidance, r.g_adv, r.d_loss, r.total)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub checkpoints: Vec<PathBuf>,
    pub last: Option<LossReport>,
}

pub fn train<T: Real>(cfg: &RunConfig, mut log: impl FnMut(&str)) -> Result<TrainSummary> {
    cfg.validate()?;
    let data_dir = cfg
        .data_dir
        .as_ref()
        .ok_or_else(|| anyhow!("data_dir is not set"))?;
    let index = DatasetIndex::scan(data_dir, Split::Train)?;
    let images = index.load::<T>()?;
    log(&format!("{} training images from {}", images.len(), data_dir.display()));

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_text()).with_context(|| format!("writing {}", cfg_path.display()))?;
    let loss_path = out.join(LOSS_FILE);
    let mut csv = BufWriter::new(File::create(&loss_path).with_context(|| format!("creating {}", loss_path.display()))?);
    writeln!(csv, "{LOSS_HEADER}")?;

    let mut trainer = Trainer::<T>::new(&cfg.generator, cfg.train.clone())?;
    let mut last = None;
    let mut io_error = None;
    let mut checkpoints = Vec::new();
    let result = trainer.run(
        &images,
        |step, r| {
            if io_error.is_none() {
                if let Err(e) = writeln!(csv, "{}", loss_row(step, r)) {
                    io_error = Some(e);
                }
            }
            last = Some(*r);
        },
        |t, epoch| {
            let path = checkpoint_path(out, epoch);
            save_checkpoint(&path, &t.generator, &t.discriminator)
                .map_err(|e| shiftnet_core::Error::Checkpoint(format!("{e:#}")))?;
            checkpoints.push(path);
            Ok(())
        },
    );
    csv.flush().with_context(|| format!("writing {}", loss_path.display()))?;
    if let Some(e) = io_error {
        return Err(e).with_context(|| format!("writing {}", loss_path.display()));
    }
    if let Err(e @ shiftnet_core::Error::NonFiniteLoss { .. }) = &result {
        let path = out.join(DIAGNOSTIC_FILE);
        let dump = format!("{e}\nlast finite report: {last:?}\nconfig:\n{}", cfg.to_text());
        std::fs::write(&path, dump).with_context(|| format!("writing {}", path.display()))?;
        log(&format!("diagnostics written to {}", path.display()));
    }
    result.context("training aborted")?;
    if let (Some(r), Some(p)) = (&last, checkpoints.last()) {
        log(&format!(
            "step {} l1 {:.4} guidance {:.4} d_loss {:.4}; saved {}",
            trainer.steps_done(),
            r.l1,
            r.guidance,
            r.d_loss,
            p.display()
        ));
    }
    Ok(TrainSummary {
        steps: trainer.steps_done(),
        epochs: trainer.epochs_done(),
        checkpoints,
        last,
    })
}
