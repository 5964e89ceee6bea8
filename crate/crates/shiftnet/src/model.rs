//! Checkpoint files: generator tensors under `g.`, discriminator under `d.`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftnet_core::checkpoint;
use shiftnet_core::nets::{build_generator, Discriminator, Generator, GeneratorConfig};
use shiftnet_core::{Real, Tensor};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "losses.csv";
pub const CKPT_DIR: &str = "ckpt";

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(CKPT_DIR).join(format!("epoch_{epoch}.snet"))
}

pub fn encode_checkpoint<T: Real>(g: &Generator<T>, d: &Discriminator<T>) -> Vec<u8> {
    let names: Vec<(String, &Tensor<T>)> = g
        .params()
        .named_values()
        .into_iter()
        .map(|(n, t)| (format!("g.{n}"), t))
        .chain(d.params().named_values().into_iter().map(|(n, t)| (format!("d.{n}"), t)))
        .collect();
    let refs: Vec<(&str, &Tensor<T>)> = names.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    checkpoint::encode(&refs)
}

pub fn save_checkpoint<T: Real>(path: &Path, g: &Generator<T>, d: &Discriminator<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, encode_checkpoint(g, d)).with_context(|| format!("writing {}", path.display()))
}

/// Rebuilds the generator described by `cfg` and loads its weights.
pub fn load_generator<T: Real>(path: &Path, cfg: &GeneratorConfig) -> Result<Generator<T>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let tensors = checkpoint::decode::<T>(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    let mut g = build_generator::<T>(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    g.params_mut()
        .load(|name| {
            let key = format!("g.{name}");
            tensors.iter().find(|(k, _)| *k == key).map(|(_, t)| t.clone())
        })
        .with_context(|| format!("loading generator weights from {}", path.display()))?;
    Ok(g)
}

/// The run config stored next to a checkpoint: `<out>/ckpt/epoch_n.snet`
/// is paired with `<out>/config.txt`.
pub fn config_for_checkpoint(ckpt: &Path) -> Result<RunConfig> {
    let out = ckpt
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| anyhow!("cannot locate the run directory of {}", ckpt.display()))?;
    let path = out.join(CONFIG_FILE);
    RunConfig::load(&path).with_context(|| format!("no usable {CONFIG_FILE} for {}; pass --config", ckpt.display()))
}
