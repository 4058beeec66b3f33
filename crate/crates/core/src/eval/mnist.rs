use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::diversity::{detect_collapse, CollapseReport, DEFAULT_COLLAPSE_THRESHOLD};
use super::grid::{render_grid, sample_indices};
use super::{MapGenerator, ModelGenerator};
use crate::data::{save_png, InMemoryPairs, PairSource};
use crate::error::{Error, Result};
use crate::losses::{LossReport, LossWeights, RecNorm};
use crate::models::{ArchConfig, Variant};
use crate::training::{train_on, TrainConfig, LOSS_FILE};
use crate::Tensor;

/// Grayscale images from an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

fn read_idx(path: &Path, magic: u32, dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Parse {
        line: 0,
        message: format!("{}: {m}", path.display()),
    };
    let word = |i: usize| -> Result<u32> {
        buf.get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated header".into()))
    };
    if word(0)? != magic {
        return Err(bad(format!(
            "magic {:#010x}, expected {magic:#010x}",
            word(0)?
        )));
    }
    let shape: Vec<usize> = (1..=dims)
        .map(|i| word(i).map(|w| w as usize))
        .collect::<Result<_>>()?;
    let body = &buf[4 * (dims + 1)..];
    let want: usize = shape.iter().product();
    if body.len() != want {
        return Err(bad(format!(
            "{} data bytes for shape {shape:?}",
            body.len()
        )));
    }
    Ok((shape, body.to_vec()))
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let (shape, body) = read_idx(path, 0x0803, 3)?;
    let per = shape[1] * shape[2];
    Ok(IdxImages {
        rows: shape[1],
        cols: shape[2],
        pixels: body.chunks(per.max(1)).map(<[u8]>::to_vec).collect(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    Ok(read_idx(path, 0x0801, 1)?.1)
}

/// A digit centred on a black `size`² canvas, replicated to three channels,
/// `[1, size, size, 3]` in [−1, 1].
pub fn mnist_map_image(pixels: &[u8], rows: usize, cols: usize, size: usize) -> Result<Tensor> {
    if rows > size || cols > size || pixels.len() != rows * cols {
        return Err(Error::invalid(format!(
            "{rows}×{cols} digit does not fit a {size} px canvas"
        )));
    }
    let (top, left) = ((size - rows) / 2, (size - cols) / 2);
    Ok(Tensor::from_fn(&[1, size, size, 3], |i| {
        let (y, x) = (i / 3 / size, i / 3 % size);
        let v = if (top..top + rows).contains(&y) && (left..left + cols).contains(&x) {
            pixels[(y - top) * cols + (x - left)]
        } else {
            0
        };
        v as f64 / 127.5 - 1.0
    }))
}

/// Condition image for digit `index`: seeded Gaussian noise (σ = 0.5)
/// clipped to [−1, 1]. Digits have no satellite counterpart, so the
/// encoder sees pure noise and the model learns the digit distribution.
pub fn mnist_cond_image(size: usize, seed: u64, index: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = Normal::new(0.0f64, 0.5).expect("valid deviation");
    Tensor::from_fn(&[1, size, size, 3], |_| n.sample(&mut rng).clamp(-1.0, 1.0))
}

pub fn mnist_pairs(
    images: &IdxImages,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<InMemoryPairs> {
    if count > images.pixels.len() {
        return Err(Error::invalid(format!(
            "asked for {count} digits, file has {}",
            images.pixels.len()
        )));
    }
    let pairs = images.pixels[..count]
        .iter()
        .enumerate()
        .map(|(i, px)| {
            Ok((
                mnist_cond_image(size, seed, i as u64),
                mnist_map_image(px, images.rows, images.cols, size)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(InMemoryPairs::new(pairs))
}

#[derive(Debug, Clone)]
pub struct MnistConfig {
    pub images: PathBuf,
    pub count: usize,
    pub train: TrainConfig,
    /// Generated and real samples compared by the collapse detector.
    pub diversity_samples: usize,
    pub collapse_threshold: f64,
}

impl MnistConfig {
    /// Encoder GAN at 32×32, adversarial loss only, one epoch of batch 16.
    pub fn new(images: PathBuf) -> Self {
        let arch = ArchConfig::new(Variant::EncoderGan).with_image_size(32);
        let mut train = TrainConfig::new(arch);
        train.weights = LossWeights {
            w_gan: 1.0,
            w_rec: 0.0,
            w_style: 0.0,
            rec_norm: RecNorm::L2,
        };
        train.epochs = 1;
        train.checkpoint_interval = 0;
        train.deterministic = true;
        Self {
            images,
            count: 2000,
            train,
            diversity_samples: 64,
            collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnistReport {
    pub reports: Vec<LossReport>,
    pub all_finite: bool,
    pub loss_file: PathBuf,
    pub grid: PathBuf,
    pub collapse: CollapseReport,
    pub seconds: f64,
}

/// Brief training on digits, then a sample grid and the collapse check.
pub fn mnist_sanity(cfg: &MnistConfig, out_dir: &Path) -> Result<MnistReport> {
    let started = Instant::now();
    let images = read_idx_images(&cfg.images)?;
    let size = cfg.train.arch.image_size;
    let seed = cfg.train.seed;
    let data = mnist_pairs(&images, cfg.count, size, seed)?;
    let outcome = train_on(&cfg.train, &data, out_dir, None)?;
    let gen = ModelGenerator {
        params: &outcome.state.params,
        arch: &cfg.train.arch,
        seed,
    };
    let k = cfg.diversity_samples.max(2);
    let mut fakes = Vec::with_capacity(k);
    for i in 0..k {
        let cond = mnist_cond_image(size, seed ^ 0xd1ce, i as u64);
        fakes.push(gen.generate(&cond, &cond)?);
    }
    let real = sample_indices(data.len(), k.min(data.len()), seed)?
        .into_iter()
        .map(|i| data.pair(i).map(|p| p.1))
        .collect::<Result<Vec<_>>>()?;
    let collapse = detect_collapse(&fakes, &real, cfg.collapse_threshold)?;
    let side = ((cfg.train.grid_size.min(k) as f64).sqrt() as usize).max(1);
    let grid = out_dir.join("mnist_grid.png");
    save_png(&render_grid(&fakes[..side * side])?, &grid)?;
    Ok(MnistReport {
        all_finite: outcome.reports.iter().all(LossReport::all_finite),
        reports: outcome.reports,
        loss_file: out_dir.join(LOSS_FILE),
        grid,
        collapse,
        seconds: started.elapsed().as_secs_f64(),
    })
}
