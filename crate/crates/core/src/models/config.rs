use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Encoder → embedding (+ noise) → transposed-conv generator.
    #[serde(rename = "encoder")]
    EncoderGan,
    /// Full-resolution convolutional translator.
    #[serde(rename = "direct")]
    DirectGan,
    /// RealNVP coupling stack applied to the flattened satellite image.
    #[serde(rename = "flow")]
    FlowGan,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::EncoderGan, Variant::DirectGan, Variant::FlowGan];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::EncoderGan => "encoder",
            Variant::DirectGan => "direct",
            Variant::FlowGan => "flow",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "encoder" | "encoder_gan" => Ok(Variant::EncoderGan),
            "direct" | "direct_gan" => Ok(Variant::DirectGan),
            "flow" | "flow_gan" => Ok(Variant::FlowGan),
            _ => Err(Error::invalid(format!(
                "unknown architecture {s:?}; expected encoder, direct or flow"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Append,
    Add,
    None,
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "append" => Ok(NoiseMode::Append),
            "add" => Ok(NoiseMode::Add),
            "none" => Ok(NoiseMode::None),
            _ => Err(Error::invalid(format!(
                "unknown noise mode {s:?}; expected append, add or none"
            ))),
        }
    }
}

/// What `std` is measured against for additive noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScale {
    /// `std` is an absolute standard deviation.
    Absolute,
    /// `std` multiplies the root-mean-square of each sample's embedding.
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    /// Appended coordinates (APPEND only).
    pub dim: usize,
    pub std: f64,
    /// Relative magnitude of additive noise, 0 to 1.
    pub fraction: f64,
    pub scale: NoiseScale,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Add,
            dim: 100,
            std: 1.0,
            fraction: 0.1,
            scale: NoiseScale::Rms,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            mode: NoiseMode::None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == NoiseMode::Append && self.dim == 0 {
            return Err(Error::invalid("appended noise needs dim > 0"));
        }
        if !(self.std > 0.0) || !self.std.is_finite() {
            return Err(Error::invalid(format!(
                "noise std must be positive, got {}",
                self.std
            )));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::invalid(format!(
                "noise fraction {} outside [0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }

    /// Extra latent coordinates this spec adds to an embedding.
    pub fn extra_dim(&self) -> usize {
        if self.mode == NoiseMode::Append {
            self.dim
        } else {
            0
        }
    }
}

/// Architecture and layer tables.
///
/// Stride-2 stages are taken from the front of each filter list; an image of
/// size `s` uses `log2(s / 4)` of them, so a 32-pixel input drops one stage
/// of the 64-pixel layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub noise: NoiseSpec,
    pub leaky_slope: f64,
    pub encoder_filters: Vec<usize>,
    /// First transposed layer (4×4, stride 1, 1→4 spatial).
    pub gen_base_filters: usize,
    /// Hidden stride-2 transposed layers as (kernel, filters); the output
    /// layer to `channels` is appended after them.
    pub gen_layers: Vec<(usize, usize)>,
    pub gen_out_kernel: usize,
    pub disc_enc_filters: Vec<usize>,
    pub disc_enc_head: usize,
    pub disc_fc: usize,
    /// Give the discriminator its own encoder instead of sharing the
    /// generator's.
    pub separate_disc_encoder: bool,
    pub direct_widths: Vec<usize>,
    pub direct_disc_filters: Vec<usize>,
    pub flow_hidden: usize,
    /// Feed the raw scale-net output to `exp` instead of bounding it with tanh.
    pub flow_raw_scale: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ArchConfig {
    /// Layer tables of the published architectures at their native size.
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            image_size: match variant {
                Variant::DirectGan => 256,
                _ => 64,
            },
            channels: 3,
            embed_dim: 512,
            noise: NoiseSpec::default(),
            leaky_slope: 0.2,
            encoder_filters: vec![1024, 512, 256, 128],
            gen_base_filters: 1024,
            gen_layers: vec![(8, 512), (3, 128), (3, 32)],
            gen_out_kernel: 3,
            disc_enc_filters: vec![128, 256, 512, 1024],
            disc_enc_head: 512,
            disc_fc: 512,
            separate_disc_encoder: false,
            direct_widths: vec![300, 150, 60, 20],
            direct_disc_filters: vec![128, 256, 512, 768, 1024],
            flow_hidden: 512,
            flow_raw_scale: false,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self
    }

    /// Same topology with every width shrunk, for finite-difference checks.
    pub fn reduced(variant: Variant, image_size: usize) -> Self {
        Self {
            image_size,
            embed_dim: 6,
            noise: NoiseSpec {
                dim: 3,
                ..NoiseSpec::default()
            },
            encoder_filters: vec![5, 4, 4, 3],
            gen_base_filters: 5,
            gen_layers: vec![(8, 4), (3, 4), (3, 3)],
            disc_enc_filters: vec![3, 4, 4, 5],
            disc_enc_head: 4,
            disc_fc: 5,
            direct_widths: vec![4, 3, 3, 2],
            direct_disc_filters: vec![3, 4, 4, 5, 5],
            flow_hidden: 6,
            ..Self::new(variant)
        }
    }

    /// Number of stride-2 stages from 4×4 up to the image size.
    pub fn stages(&self) -> usize {
        (self.image_size / 4).trailing_zeros() as usize
    }

    pub fn latent_dim(&self) -> usize {
        self.embed_dim + self.noise.extra_dim()
    }

    pub fn flat_dim(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    /// Discriminator stride-2 stages for the direct/flow discriminator: as
    /// many as bring the image to 4×4, capped by the filter list.
    pub fn direct_disc_stages(&self) -> usize {
        self.stages().min(self.direct_disc_filters.len())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.image_size;
        if s < 8 || !s.is_power_of_two() {
            return Err(Error::invalid(format!(
                "image size must be a power of two ≥ 8, got {s}"
            )));
        }
        if self.channels == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("channels and embed_dim must be positive"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid(format!(
                "leaky slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(Error::invalid(
                "batch-norm momentum must be in [0, 1) and eps positive",
            ));
        }
        self.noise.validate()?;
        let n = self.stages();
        match self.variant {
            Variant::EncoderGan => {
                if self.encoder_filters.len() < n
                    || self.disc_enc_filters.len() < n
                    || self.gen_layers.len() + 1 < n
                {
                    return Err(Error::invalid(format!(
                        "{s}×{s} images need {n} stride-2 stages; the layer tables are too short"
                    )));
                }
            }
            Variant::DirectGan | Variant::FlowGan => {
                if self.direct_disc_stages() == 0 {
                    return Err(Error::invalid(
                        "discriminator needs at least one stride-2 layer",
                    ));
                }
                if self.variant == Variant::DirectGan && self.direct_widths.is_empty() {
                    return Err(Error::invalid(
                        "generator needs at least one dual-kernel layer",
                    ));
                }
                if self.variant == Variant::FlowGan && self.flow_hidden == 0 {
                    return Err(Error::invalid("coupling nets need hidden units"));
                }
            }
        }
        if [
            &self.encoder_filters,
            &self.disc_enc_filters,
            &self.direct_widths,
            &self.direct_disc_filters,
        ]
        .iter()
        .any(|v| v.contains(&0))
            || self.gen_layers.iter().any(|&(k, f)| k == 0 || f == 0)
        {
            return Err(Error::invalid("layer widths and kernels must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn native_sizes_and_stage_counts() {
        assert_eq!(ArchConfig::new(Variant::EncoderGan).stages(), 4);
        assert_eq!(ArchConfig::new(Variant::DirectGan).image_size, 256);
        assert_eq!(ArchConfig::new(Variant::DirectGan).direct_disc_stages(), 5);
        assert_eq!(
            ArchConfig::new(Variant::EncoderGan)
                .with_image_size(32)
                .stages(),
            3
        );
        for v in Variant::ALL {
            ArchConfig::new(v).validate().unwrap();
            ArchConfig::reduced(v, 16).validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(ArchConfig::new(Variant::EncoderGan)
            .with_image_size(48)
            .validate()
            .is_err());
        assert!(ArchConfig::new(Variant::EncoderGan)
            .with_image_size(128)
            .validate()
            .is_err());
        let mut c = ArchConfig::new(Variant::EncoderGan);
        c.noise = NoiseSpec {
            mode: NoiseMode::Append,
            dim: 0,
            ..NoiseSpec::default()
        };
        assert!(c.validate().is_err());
        assert!("gan".parse::<Variant>().is_err());
        assert_eq!("Flow".parse::<Variant>().unwrap(), Variant::FlowGan);
    }
}
