//! Image directories and the procedural toy corpus.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shiftnet_core::toy::texture;
use shiftnet_core::{Real, Tensor};

use crate::ppm::{read_image, write_image, ImageFile};

pub const TOY_SIZE: usize = 32;
pub const TOY_COUNT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOut => "heldout",
        }
    }
}

/// PPM files of one directory in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub split: Split,
    pub paths: Vec<PathBuf>,
}

impl DatasetIndex {
    pub fn scan(dir: &Path, split: Split) -> Result<Self> {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
            if is_ppm && !is_mask(&path) {
                paths.push(path);
            }
        }
        if paths.is_empty() {
            bail!("no .ppm images in {}", dir.display());
        }
        paths.sort();
        Ok(Self { split, paths })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Decodes every image; order follows the index.
    pub fn load<T: Real>(&self) -> Result<Vec<Tensor<T>>> {
        self.paths
            .par_iter()
            .map(|p| Ok(read_image(p).with_context(|| format!("loading {}", p.display()))?.to_tensor()))
            .collect()
    }
}

/// `name.mask.ppm` files sit next to their image and are not images
/// themselves.
pub fn is_mask(path: &Path) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with(".mask"))
}

pub fn mask_path_for(image: &Path) -> PathBuf {
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    image.with_file_name(format!("{stem}.mask.ppm"))
}

pub struct ToyCorpus {
    pub train: DatasetIndex,
    pub heldout: DatasetIndex,
}

/// Writes `n` training textures to `out_dir/train` and `max(1, n/4)`
/// held-out textures to `out_dir/heldout`.
pub fn generate_toy_dataset(out_dir: &Path, n: usize, size: usize, seed: u64) -> Result<ToyCorpus> {
    if n < 2 {
        bail!("toy corpus needs at least 2 images, got {n}");
    }
    if size < 8 {
        bail!("toy image size {size} is below 8");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut write_split = |split: Split, count: usize| -> Result<DatasetIndex> {
        let dir = out_dir.join(split.dir_name());
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut paths = Vec::with_capacity(count);
        for i in 0..count {
            let img = ImageFile::from_tensor(&texture::<f64>(size, &mut rng))?;
            let path = dir.join(format!("toy_{i:04}.ppm"));
            write_image(&path, &img)?;
            paths.push(path);
        }
        Ok(DatasetIndex { split, paths })
    };
    let train = write_split(Split::Train, n)?;
    let heldout = write_split(Split::HeldOut, (n / 4).max(1))?;
    Ok(ToyCorpus { train, heldout })
}
