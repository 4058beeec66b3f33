use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::TrainState;
use super::step::{train_step, Batch};
use super::TrainConfig;
use crate::data::{save_png, ManifestDataset, PairSource};
use crate::error::{Error, Result};
use crate::eval::{sample_grid, ModelGenerator};
use crate::losses::LossReport;

pub const LOSS_FILE: &str = "losses.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SAMPLE_DIR: &str = "samples";
pub const LATEST_FILE: &str = "latest.ckpt";
pub const ABORT_FILE: &str = "abort.ckpt";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Reports of the steps run by this call.
    pub reports: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
    pub grids: Vec<PathBuf>,
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

/// Sample order for an epoch, a pure function of (seed, epoch).
pub fn epoch_order(samples: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(2));
    let mut v: Vec<usize> = (0..samples).collect();
    v.shuffle(&mut rng);
    v
}

/// Trains on the manifest named in the config.
pub fn train(
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    let path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| Error::invalid("training needs a dataset manifest"))?;
    let data = ManifestDataset::open(path, cfg.arch.image_size as u32)?;
    train_on(cfg, &data, out_dir, resume)
}

/// Keeps the loss lines of steps up to `step`, so a resumed run continues
/// the file without duplicates.
fn truncate_losses(path: &Path, step: u64) -> Result<()> {
    if step == 0 || !path.exists() {
        return File::create(path)
            .map(|_| ())
            .map_err(|e| Error::io(path, e));
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if LossReport::parse_csv_line(&line)?.step <= step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn checkpoint(state: &TrainState, dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join(name);
    state.save(&p)?;
    Ok(p)
}

/// Iterates seeded epochs over `data`, logging every step, checkpointing on
/// the interval and rendering a sample grid at each epoch end. Resuming
/// from a state continues at its step count.
pub fn train_on(
    cfg: &TrainConfig,
    data: &dyn PairSource,
    out_dir: &Path,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut state = match resume {
        Some(s) => {
            s.check_arch(&cfg.arch)?;
            s
        }
        None => TrainState::new(&cfg.arch, cfg.seed)?,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    let loss_path = out_dir.join(LOSS_FILE);
    truncate_losses(&loss_path, state.step)?;
    let mut log = OpenOptions::new()
        .append(true)
        .open(&loss_path)
        .map_err(|e| Error::io(&loss_path, e))?;

    let n = data.len();
    let spe = steps_per_epoch(n, cfg.batch_size) as u64;
    let mut total = spe * cfg.epochs as u64;
    if let Some(m) = cfg.max_steps {
        total = total.min(m);
    }
    let grid_n = {
        let k = (cfg.grid_size.min(n) as f64).sqrt().floor() as usize;
        k * k
    };
    let mut out = TrainOutcome {
        state: state.clone(),
        reports: Vec::new(),
        checkpoints: Vec::new(),
        grids: Vec::new(),
    };
    let mut order = Vec::new();
    let mut order_epoch = None;
    while state.step < total {
        let epoch = state.step / spe;
        let k = (state.step % spe) as usize;
        if order_epoch != Some(epoch) {
            order = epoch_order(n, cfg.seed, epoch);
            order_epoch = Some(epoch);
        }
        let idx = &order[k * cfg.batch_size..((k + 1) * cfg.batch_size).min(n)];
        let (sat, map) = data.batch(idx)?;
        let batch = Batch::new(sat, map)?;
        let report = match train_step(&mut state, &batch, cfg) {
            Ok(r) => r,
            Err(e @ Error::Numerical { .. }) => {
                let p = checkpoint(&state, &ckpt_dir, ABORT_FILE)?;
                log::error!(
                    "step {}: {e}; state saved to {}",
                    state.step + 1,
                    p.display()
                );
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{}", report.csv_line()).map_err(|e| Error::io(&loss_path, e))?;
        log::debug!("{}", report.csv_line());
        out.reports.push(report);
        if cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 {
            out.checkpoints.push(checkpoint(
                &state,
                &ckpt_dir,
                &format!("step_{:08}.ckpt", state.step),
            )?);
        }
        if state.step % spe == 0 && grid_n > 0 {
            let gen = ModelGenerator {
                params: &state.params,
                arch: &cfg.arch,
                seed: cfg.seed,
            };
            let img = sample_grid(&gen, data, grid_n, cfg.seed.wrapping_add(epoch))?;
            let p = out_dir
                .join(SAMPLE_DIR)
                .join(format!("epoch_{:03}.png", epoch + 1));
            save_png(&img, &p)?;
            out.grids.push(p);
        }
    }
    log.flush().map_err(|e| Error::io(&loss_path, e))?;
    out.checkpoints
        .push(checkpoint(&state, &ckpt_dir, LATEST_FILE)?);
    out.state = state;
    Ok(out)
}
