use std::path::{Path, PathBuf};

use geogan::losses::RecNorm;
use geogan::models::{ArchConfig, NoiseMode, NoiseScale, Variant};
use geogan::training::TrainConfig;
use geogan::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::ModelArgs;

/// Flat run settings as read from a TOML file; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub arch: Option<Variant>,
    pub image_size: Option<usize>,
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    pub rec_norm: Option<RecNorm>,
    pub w_gan: Option<f64>,
    pub w_rec: Option<f64>,
    pub w_style: Option<f64>,
    pub noise_mode: Option<NoiseMode>,
    pub noise_scale: Option<NoiseScale>,
    pub noise_fraction: Option<f64>,
    pub noise_std: Option<f64>,
    pub noise_dim: Option<usize>,
    pub separate_disc_encoder: Option<bool>,
    pub flow_raw_scale: Option<bool>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub g_steps: Option<usize>,
    pub checkpoint_interval: Option<u64>,
    pub max_steps: Option<u64>,
    pub grid_size: Option<usize>,
    pub manifest: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    /// Every setting of `cfg`, suitable for reloading with `--config`.
    pub fn from_train(cfg: &TrainConfig) -> Self {
        let a = &cfg.arch;
        Self {
            arch: Some(a.variant),
            image_size: Some(a.image_size),
            seed: Some(cfg.seed),
            deterministic: Some(cfg.deterministic),
            rec_norm: Some(cfg.weights.rec_norm),
            w_gan: Some(cfg.weights.w_gan),
            w_rec: Some(cfg.weights.w_rec),
            w_style: Some(cfg.weights.w_style),
            noise_mode: Some(a.noise.mode),
            noise_scale: Some(a.noise.scale),
            noise_fraction: Some(a.noise.fraction),
            noise_std: Some(a.noise.std),
            noise_dim: Some(a.noise.dim),
            separate_disc_encoder: Some(a.separate_disc_encoder),
            flow_raw_scale: Some(a.flow_raw_scale),
            lr: Some(cfg.learning_rate),
            beta1: Some(cfg.beta1),
            beta2: Some(cfg.beta2),
            adam_eps: Some(cfg.adam_eps),
            batch_size: Some(cfg.batch_size),
            epochs: Some(cfg.epochs),
            g_steps: Some(cfg.g_steps_per_d_step),
            checkpoint_interval: Some(cfg.checkpoint_interval),
            max_steps: cfg.max_steps,
            grid_size: Some(cfg.grid_size),
            manifest: cfg.manifest.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }

    /// Keys set in `over` replace those in `self`.
    pub fn overlay(self, over: FileConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => {
                Self { $($f: over.$f.or(self.$f)),* }
            };
        }
        pick!(
            arch,
            image_size,
            seed,
            deterministic,
            rec_norm,
            w_gan,
            w_rec,
            w_style,
            noise_mode,
            noise_scale,
            noise_fraction,
            noise_std,
            noise_dim,
            separate_disc_encoder,
            flow_raw_scale,
            lr,
            beta1,
            beta2,
            adam_eps,
            batch_size,
            epochs,
            g_steps,
            checkpoint_interval,
            max_steps,
            grid_size,
            manifest
        )
    }

    /// Built-in defaults with the set keys applied.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let variant = self.arch.unwrap_or(Variant::EncoderGan);
        let mut arch = ArchConfig::new(variant);
        if let Some(s) = self.image_size {
            arch.image_size = s;
        }
        let n = &mut arch.noise;
        n.mode = self.noise_mode.unwrap_or(n.mode);
        n.scale = self.noise_scale.unwrap_or(n.scale);
        n.fraction = self.noise_fraction.unwrap_or(n.fraction);
        n.std = self.noise_std.unwrap_or(n.std);
        n.dim = self.noise_dim.unwrap_or(n.dim);
        arch.separate_disc_encoder = self
            .separate_disc_encoder
            .unwrap_or(arch.separate_disc_encoder);
        arch.flow_raw_scale = self.flow_raw_scale.unwrap_or(arch.flow_raw_scale);

        let mut cfg = TrainConfig::new(arch);
        let w = &mut cfg.weights;
        w.w_gan = self.w_gan.unwrap_or(w.w_gan);
        w.w_rec = self.w_rec.unwrap_or(w.w_rec);
        w.w_style = self.w_style.unwrap_or(w.w_style);
        w.rec_norm = self.rec_norm.unwrap_or(w.rec_norm);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.deterministic = self.deterministic.unwrap_or(cfg.deterministic);
        cfg.learning_rate = self.lr.unwrap_or(cfg.learning_rate);
        cfg.beta1 = self.beta1.unwrap_or(cfg.beta1);
        cfg.beta2 = self.beta2.unwrap_or(cfg.beta2);
        cfg.adam_eps = self.adam_eps.unwrap_or(cfg.adam_eps);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.g_steps_per_d_step = self.g_steps.unwrap_or(cfg.g_steps_per_d_step);
        cfg.checkpoint_interval = self.checkpoint_interval.unwrap_or(cfg.checkpoint_interval);
        cfg.max_steps = self.max_steps.or(cfg.max_steps);
        cfg.grid_size = self.grid_size.unwrap_or(cfg.grid_size);
        cfg.manifest = self.manifest.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&ModelArgs> for FileConfig {
    fn from(a: &ModelArgs) -> Self {
        Self {
            arch: a.arch,
            image_size: a.image_size,
            seed: a.seed,
            deterministic: a.deterministic.then_some(true),
            rec_norm: a.rec_norm,
            w_gan: a.w_gan,
            w_rec: a.w_rec,
            w_style: a.w_style,
            noise_mode: a.noise_mode,
            noise_scale: None,
            noise_fraction: a.noise_fraction,
            noise_std: a.noise_std,
            noise_dim: a.noise_dim,
            separate_disc_encoder: a.separate_disc_encoder,
            flow_raw_scale: a.flow_raw_scale,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: None,
            batch_size: a.batch_size,
            epochs: a.epochs,
            g_steps: a.g_steps,
            checkpoint_interval: a.checkpoint_interval,
            max_steps: a.max_steps,
            grid_size: a.grid_size,
            manifest: None,
        }
    }
}

/// Defaults, then the config file named by the flags, then the flags.
pub fn layered(args: &ModelArgs, data_root: Option<&Path>) -> Result<FileConfig> {
    let file = match &args.config {
        Some(p) => FileConfig::load(&resolve_path(data_root, p))?,
        None => FileConfig::default(),
    };
    Ok(file.overlay(FileConfig::from(args)))
}

/// `p` under `root` when `p` is relative and a root is set.
pub fn resolve_path(root: Option<&Path>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_builtin_defaults() {
        let cfg = FileConfig::default().resolve().unwrap();
        assert_eq!(cfg, TrainConfig::new(ArchConfig::new(Variant::EncoderGan)));
    }

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("lr = 0.001\nbatch_size = 8\n").unwrap();
        let flags = FileConfig {
            batch_size: Some(2),
            ..FileConfig::default()
        };
        let cfg = file.overlay(flags).resolve().unwrap();
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.batch_size, 2);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(toml::from_str::<FileConfig>("learning_rte = 1.0\n").is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = TrainConfig::new(ArchConfig::new(Variant::DirectGan));
        cfg.max_steps = Some(7);
        cfg.weights.rec_norm = RecNorm::L1;
        let text = FileConfig::from_train(&cfg).to_toml();
        let back: FileConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.resolve().unwrap(), cfg);
    }
}
