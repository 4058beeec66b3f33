use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use crate::error::{Error, Result};
use crate::models::{init_params, ArchConfig, Archive, ParamSet, Variant};

pub const STATE_KIND: &str = "train-state";

/// Everything a run needs to continue exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamSet,
    pub adam: Adam,
    pub step: u64,
    /// Draws the generator noise.
    pub rng: ChaCha8Rng,
    pub variant: Variant,
    pub image_size: usize,
}

impl TrainState {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            params: init_params(arch, seed)?,
            adam: Adam::default(),
            step: 0,
            rng,
            variant: arch.variant,
            image_size: arch.image_size,
        })
    }

    /// Errors unless the state was trained for `arch`.
    pub fn check_arch(&self, arch: &ArchConfig) -> Result<()> {
        if self.variant != arch.variant || self.image_size != arch.image_size {
            return Err(Error::invalid(format!(
                "state is for {} at {} px, config asks for {} at {} px",
                self.variant, self.image_size, arch.variant, arch.image_size
            )));
        }
        self.params.check_layout(&crate::models::layout(arch)?)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(STATE_KIND);
        a.meta.insert("step".into(), self.step.to_string());
        a.meta.insert("variant".into(), self.variant.to_string());
        a.meta
            .insert("image_size".into(), self.image_size.to_string());
        let seed: String = self
            .rng
            .get_seed()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        a.meta.insert("rng/seed".into(), seed);
        a.meta
            .insert("rng/stream".into(), self.rng.get_stream().to_string());
        a.meta
            .insert("rng/word_pos".into(), self.rng.get_word_pos().to_string());
        for (name, t) in self.params.iter() {
            a.tensors.insert(format!("params/{name}"), t.clone());
        }
        for (name, t) in &self.adam.m {
            a.tensors
                .insert(format!("adam/m/{name}"), Arc::new(t.clone()));
        }
        for (name, t) in &self.adam.v {
            a.tensors
                .insert(format!("adam/v/{name}"), Arc::new(t.clone()));
        }
        for (name, n) in &self.adam.steps {
            a.meta.insert(format!("adam/steps/{name}"), n.to_string());
        }
        a
    }

    pub fn from_archive(a: Archive) -> Result<Self> {
        let a = a.expect_kind(STATE_KIND)?;
        let hex: String = a.meta_parse("rng/seed")?;
        if hex.len() != 64 {
            return Err(Error::invalid("rng seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::invalid(format!("bad rng seed {hex:?}")))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(a.meta_parse("rng/stream")?);
        rng.set_word_pos(a.meta_parse("rng/word_pos")?);
        let mut adam = Adam::default();
        for (key, v) in &a.meta {
            if let Some(name) = key.strip_prefix("adam/steps/") {
                let n = v
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad step count {key}={v:?}")))?;
                adam.steps.insert(name.to_string(), n);
            }
        }
        let step = a.meta_parse("step")?;
        let variant = a.meta_parse("variant")?;
        let image_size = a.meta_parse("image_size")?;
        let mut params = ParamSet::new();
        for (key, t) in a.tensors {
            if let Some(name) = key.strip_prefix("params/") {
                params.insert(name, Arc::unwrap_or_clone(t));
            } else if let Some(name) = key.strip_prefix("adam/m/") {
                adam.m.insert(name.to_string(), Arc::unwrap_or_clone(t));
            } else if let Some(name) = key.strip_prefix("adam/v/") {
                adam.v.insert(name.to_string(), Arc::unwrap_or_clone(t));
            } else {
                return Err(Error::invalid(format!(
                    "unexpected tensor {key} in training state"
                )));
            }
        }
        Ok(Self {
            params,
            adam,
            step,
            rng,
            variant,
            image_size,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(Archive::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use rand::Rng;

    #[test]
    fn archive_round_trip_is_exact() {
        let arch = ArchConfig::reduced(Variant::DirectGan, 8);
        let mut s = TrainState::new(&arch, 3).unwrap();
        s.step = 17;
        let _: f64 = s.rng.random();
        s.adam
            .m
            .insert("generator/out/bias".into(), Tensor::full(&[3], 0.1 + 0.2));
        s.adam
            .v
            .insert("generator/out/bias".into(), Tensor::full(&[3], 1e-300));
        s.adam.steps.insert("generator/out/bias".into(), 17);
        let back =
            TrainState::from_archive(Archive::from_bytes(&s.to_archive().to_bytes()).unwrap())
                .unwrap();
        assert_eq!(back, s);
        let mut r1 = s.rng.clone();
        let mut r2 = back.rng.clone();
        assert_eq!(r1.random::<u64>(), r2.random::<u64>());
        back.check_arch(&arch).unwrap();
        assert!(back
            .check_arch(&ArchConfig::reduced(Variant::FlowGan, 8))
            .is_err());
    }
}
