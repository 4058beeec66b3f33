//! The three architectures as forward computations over a [`ParamSet`].
//!
//! Graph-level functions take a [`Ctx`] and return graph variables so the
//! trainer can differentiate them; the `*_forward` functions at the bottom
//! run a pass in inference mode and return plain tensors.

mod checkpoint;
mod config;
mod ctx;
pub mod direct_gan;
pub mod encoder_gan;
pub mod flow;
mod params;

use autograd::{Graph, Var};
use rand::Rng;

pub use checkpoint::{Archive, CHECKPOINT_VERSION};
pub use config::{ArchConfig, NoiseMode, NoiseScale, NoiseSpec, Variant};
pub use ctx::{update_running_stats, Ctx, GradScope, Mode, Trace};
pub use encoder_gan::{draw_noise, inject_noise, inject_noise_tensor};
pub use flow::{couplings, make_mask, CouplingLayer, MaskKind, Parity};
pub use params::{
    init_layout, is_trainable, truncated_normal, Init, Layout, ParamSet, Phase, INIT_STD,
    PARAMS_KIND,
};

use crate::error::{Error, Result};
use crate::Tensor;

/// Every tensor the architecture needs.
pub fn layout(cfg: &ArchConfig) -> Result<Layout> {
    cfg.validate()?;
    let mut l = Layout::default();
    match cfg.variant {
        Variant::EncoderGan => {
            encoder_gan::encoder_layout(cfg, "encoder", &mut l);
            encoder_gan::generator_layout(cfg, &mut l);
            encoder_gan::discriminator_layout(cfg, &mut l);
        }
        Variant::DirectGan => {
            direct_gan::generator_layout(cfg, &mut l);
            direct_gan::discriminator_layout(cfg, &mut l);
        }
        Variant::FlowGan => {
            flow::flow_layout(cfg, &mut l)?;
            direct_gan::discriminator_layout(cfg, &mut l);
        }
    }
    Ok(l)
}

/// Fresh parameters: truncated-normal kernels (σ = 0.02), zero biases,
/// unit batch-norm scales and identity running statistics.
pub fn init_params(cfg: &ArchConfig, seed: u64) -> Result<ParamSet> {
    init_layout(&layout(cfg)?, seed)
}

/// Generator output plus the satellite embedding the encoder variant feeds
/// to its discriminator.
#[derive(Debug, Clone, Copy)]
pub struct Generated {
    pub fake: Var,
    pub cond: Option<Var>,
}

/// Satellite batch → generated maps.
pub fn generate(ctx: &mut Ctx<'_>, sat: Var, rng: &mut impl Rng) -> Result<Generated> {
    match ctx.cfg.variant {
        Variant::EncoderGan => {
            let embed = encoder_gan::encoder(ctx, "encoder", sat)?;
            let noise = ctx.cfg.noise;
            let latent = inject_noise(ctx, embed, &noise, rng)?;
            let fake = encoder_gan::generator(ctx, latent)?;
            Ok(Generated {
                fake,
                cond: Some(embed),
            })
        }
        Variant::DirectGan => Ok(Generated {
            fake: direct_gan::generator(ctx, sat)?,
            cond: None,
        }),
        Variant::FlowGan => Ok(Generated {
            fake: flow::generator(ctx, sat)?,
            cond: None,
        }),
    }
}

/// Probability `[batch, 1]` that `map` is the real map for `sat`.
///
/// The encoder variant conditions on `cond` (the shared embedding) unless
/// the config gives the discriminator its own encoder.
pub fn discriminate(ctx: &mut Ctx<'_>, sat: Var, map: Var, cond: Option<Var>) -> Result<Var> {
    match ctx.cfg.variant {
        Variant::EncoderGan => {
            let cond = if ctx.cfg.separate_disc_encoder {
                encoder_gan::encoder(ctx, "discriminator/encoder", sat)?
            } else {
                cond.ok_or_else(|| {
                    Error::invalid("encoder discriminator needs the satellite embedding")
                })?
            };
            encoder_gan::discriminator(ctx, map, cond)
        }
        Variant::DirectGan | Variant::FlowGan => direct_gan::discriminator(ctx, sat, map),
    }
}

fn inference<T>(
    cfg: &ArchConfig,
    params: &ParamSet,
    f: impl FnOnce(&mut Ctx<'_>) -> Result<T>,
) -> Result<T> {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, cfg, params, Mode::Inference, GradScope::None);
    f(&mut ctx)
}

fn value(ctx: &Ctx<'_>, v: Var) -> Tensor {
    ctx.g.value(v).clone()
}

pub fn encoder_forward(params: &ParamSet, cfg: &ArchConfig, sat: &Tensor) -> Result<Tensor> {
    inference(cfg, params, |ctx| {
        let x = ctx.g.constant(sat.clone());
        let e = encoder_gan::encoder(ctx, "encoder", x)?;
        Ok(value(ctx, e))
    })
}

pub fn generator_enc_forward(
    params: &ParamSet,
    cfg: &ArchConfig,
    latent: &Tensor,
) -> Result<Tensor> {
    inference(cfg, params, |ctx| {
        let x = ctx.g.constant(latent.clone());
        let y = encoder_gan::generator(ctx, x)?;
        Ok(value(ctx, y))
    })
}

pub fn discriminator_enc_forward(
    params: &ParamSet,
    cfg: &ArchConfig,
    map: &Tensor,
    cond: &Tensor,
) -> Result<Tensor> {
    inference(cfg, params, |ctx| {
        let m = ctx.g.constant(map.clone());
        let c = ctx.g.constant(cond.clone());
        let y = encoder_gan::discriminator(ctx, m, c)?;
        Ok(value(ctx, y))
    })
}

pub fn generator_direct_forward(
    params: &ParamSet,
    cfg: &ArchConfig,
    sat: &Tensor,
) -> Result<Tensor> {
    inference(cfg, params, |ctx| {
        let x = ctx.g.constant(sat.clone());
        let y = direct_gan::generator(ctx, x)?;
        Ok(value(ctx, y))
    })
}

pub fn discriminator_direct_forward(
    params: &ParamSet,
    cfg: &ArchConfig,
    sat: &Tensor,
    map: &Tensor,
) -> Result<Tensor> {
    inference(cfg, params, |ctx| {
        let s = ctx.g.constant(sat.clone());
        let m = ctx.g.constant(map.clone());
        let y = direct_gan::discriminator(ctx, s, m)?;
        Ok(value(ctx, y))
    })
}

/// `(x, log_det)` for flat inputs `[batch, flat_dim]`.
pub fn nvp_forward_tensor(
    params: &ParamSet,
    cfg: &ArchConfig,
    layers: &[CouplingLayer],
    z: &Tensor,
) -> Result<(Tensor, Tensor)> {
    inference(cfg, params, |ctx| {
        let v = ctx.g.constant(z.clone());
        let (x, ld) = flow::nvp_forward(ctx, layers, v)?;
        Ok((value(ctx, x), value(ctx, ld)))
    })
}

pub fn nvp_inverse_tensor(
    params: &ParamSet,
    cfg: &ArchConfig,
    layers: &[CouplingLayer],
    x: &Tensor,
) -> Result<(Tensor, Tensor)> {
    inference(cfg, params, |ctx| {
        let v = ctx.g.constant(x.clone());
        let (z, ld) = flow::nvp_inverse(ctx, layers, v)?;
        Ok((value(ctx, z), value(ctx, ld)))
    })
}

/// Generated maps for a satellite batch, inference mode.
pub fn generate_tensor(
    params: &ParamSet,
    cfg: &ArchConfig,
    sat: &Tensor,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    inference(cfg, params, |ctx| {
        let x = ctx.g.constant(sat.clone());
        let out = generate(ctx, x, rng)?;
        Ok(value(ctx, out.fake))
    })
}

/// Discriminator probabilities `[batch]`, inference mode.
pub fn discriminate_tensor(
    params: &ParamSet,
    cfg: &ArchConfig,
    sat: &Tensor,
    map: &Tensor,
) -> Result<Vec<f64>> {
    inference(cfg, params, |ctx| {
        let s = ctx.g.constant(sat.clone());
        let m = ctx.g.constant(map.clone());
        let cond = if cfg.variant == Variant::EncoderGan && !cfg.separate_disc_encoder {
            Some(encoder_gan::encoder(ctx, "encoder", s)?)
        } else {
            None
        };
        let p = discriminate(ctx, s, m, cond)?;
        Ok(ctx.g.value(p).data().to_vec())
    })
}
