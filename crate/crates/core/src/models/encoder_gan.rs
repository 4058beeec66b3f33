//! Encoder-conditioned GAN at 64×64 (32×32 drops one stage).
//!
//! Encoder: 3×3 stride-2 convolutions (1024, 512, 256, 128) then a 4×4 valid
//! convolution to the embedding with batch norm. Generator: a 4×4 transposed
//! convolution from 1×1 to 4×4, then stride-2 transposed layers doubling the
//! size, ending in tanh. Discriminator: stride-2 convolutions (128 … 1024), a
//! 4×4 valid convolution to 512 units, concatenation with the satellite
//! embedding and two fully connected layers.

use autograd::{Padding, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ArchConfig, NoiseMode, NoiseScale, NoiseSpec};
use super::ctx::Ctx;
use super::params::Layout;
use crate::error::{Error, Result};
use crate::Tensor;

pub(crate) fn check_image(layer: &str, shape: &[usize], cfg: &ArchConfig) -> Result<usize> {
    let s = cfg.image_size;
    match *shape {
        [b, h, w, c] if h == s && w == s && c == cfg.channels && b > 0 => Ok(b),
        _ => Err(Error::Shape {
            layer: layer.to_string(),
            detail: format!(
                "expected [batch, {s}, {s}, {}], got {shape:?}",
                cfg.channels
            ),
        }),
    }
}

pub fn encoder_layout(cfg: &ArchConfig, prefix: &str, l: &mut Layout) {
    let mut cin = cfg.channels;
    for (i, &f) in cfg.encoder_filters[..cfg.stages()].iter().enumerate() {
        l.conv(&format!("{prefix}/conv{i}"), [3, 3, cin, f], true);
        cin = f;
    }
    l.conv(&format!("{prefix}/head"), [4, 4, cin, cfg.embed_dim], false);
    l.batch_norm(&format!("{prefix}/head/bn"), cfg.embed_dim);
}

/// Satellite image → `[batch, 1, 1, embed_dim]`.
pub fn encoder(ctx: &mut Ctx<'_>, prefix: &str, sat: Var) -> Result<Var> {
    check_image(&format!("{prefix}/input"), ctx.shape(sat), ctx.cfg)?;
    let mut x = sat;
    for i in 0..ctx.cfg.stages() {
        x = ctx.conv(&format!("{prefix}/conv{i}"), x, 2, Padding::Same, true)?;
        x = ctx.lrelu(x);
    }
    x = ctx.conv(&format!("{prefix}/head"), x, 1, Padding::Valid, false)?;
    x = ctx.batch_norm(&format!("{prefix}/head/bn"), x)?;
    Ok(ctx.lrelu(x))
}

/// Gaussian draws scaled by everything except the embedding RMS.
fn raw_noise(embed: &Tensor, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<Option<Tensor>> {
    spec.validate()?;
    let (b, h, w, _) = embed.dims4().map_err(|e| Error::shape("noise", e))?;
    let (shape, scale) = match spec.mode {
        NoiseMode::None => return Ok(None),
        NoiseMode::Append => (vec![b, h, w, spec.dim], spec.std),
        NoiseMode::Add => (embed.shape().to_vec(), spec.fraction * spec.std),
    };
    Ok(Some(Tensor::from_fn(&shape, |_| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })))
}

fn relative(spec: &NoiseSpec) -> bool {
    spec.mode == NoiseMode::Add && spec.scale == NoiseScale::Rms
}

/// The noise tensor `inject_noise` combines with `embed`, if any.
pub fn draw_noise(embed: &Tensor, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<Option<Tensor>> {
    let Some(mut t) = raw_noise(embed, spec, rng)? else {
        return Ok(None);
    };
    if relative(spec) {
        let per = embed.len() / embed.batch();
        for (chunk, e) in t.data_mut().chunks_mut(per).zip(embed.data().chunks(per)) {
            let rms = (e.iter().map(|v| v * v).sum::<f64>() / per as f64).sqrt();
            chunk.iter_mut().for_each(|v| *v *= rms);
        }
    }
    Ok(Some(t))
}

/// Embedding → generator latent. ADD gives `embed + fraction·σ·g`, APPEND
/// concatenates `std·g` of length `dim`, NONE passes through. A relative σ
/// stays in the graph, so gradients see its dependence on the embedding.
pub fn inject_noise(
    ctx: &mut Ctx<'_>,
    embed: Var,
    spec: &NoiseSpec,
    rng: &mut impl Rng,
) -> Result<Var> {
    let raw = raw_noise(ctx.g.value(embed), spec, rng)?;
    let Some(raw) = raw else { return Ok(embed) };
    let shape = raw.shape().to_vec();
    let n = ctx.g.constant(raw);
    let out = match spec.mode {
        NoiseMode::Append => ctx.g.concat(&[embed, n]),
        _ if relative(spec) => {
            let b = shape[0];
            let per = shape[1..].iter().product::<usize>();
            let norm = ctx.g.norm_per_sample(embed);
            let rms = ctx.g.affine(norm, 1.0 / (per as f64).sqrt(), 0.0);
            let rms = ctx.reshape("noise", rms, &[b, 1])?;
            let ones = ctx.g.constant(Tensor::full(&[1, per], 1.0));
            let scale = ctx
                .g
                .linear(rms, ones, None)
                .map_err(|e| Error::shape("noise", e))?;
            let scale = ctx.reshape("noise", scale, &shape)?;
            let scaled = ctx.g.mul(scale, n).map_err(|e| Error::shape("noise", e))?;
            ctx.g.add(embed, scaled)
        }
        _ => ctx.g.add(embed, n),
    };
    out.map_err(|e| Error::shape("noise", e))
}

/// Tensor form of [`inject_noise`].
pub fn inject_noise_tensor(embed: &Tensor, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<Tensor> {
    let Some(noise) = draw_noise(embed, spec, rng)? else {
        return Ok(embed.clone());
    };
    if spec.mode == NoiseMode::Append {
        let (b, h, w, d) = embed.dims4().map_err(|e| Error::shape("noise", e))?;
        let mut data = Vec::with_capacity(embed.len() + noise.len());
        for (e, n) in embed.data().chunks(d).zip(noise.data().chunks(spec.dim)) {
            data.extend_from_slice(e);
            data.extend_from_slice(n);
        }
        return Tensor::new(vec![b, h, w, d + spec.dim], data)
            .map_err(|e| Error::shape("noise", e));
    }
    embed
        .zip_map(&noise, |a, b| a + b)
        .map_err(|e| Error::shape("noise", e))
}

pub fn generator_layout(cfg: &ArchConfig, l: &mut Layout) {
    let mut cin = cfg.gen_base_filters;
    l.conv_t("generator/deconv0", [4, 4, cin, cfg.latent_dim()], true);
    let hidden = cfg.stages() - 1;
    for (i, &(k, f)) in cfg.gen_layers[..hidden].iter().enumerate() {
        l.conv_t(&format!("generator/deconv{}", i + 1), [k, k, f, cin], true);
        cin = f;
    }
    let k = cfg.gen_out_kernel;
    l.conv_t("generator/out", [k, k, cfg.channels, cin], true);
}

/// Latent `[batch, 1, 1, latent_dim]` → image in (−1, 1).
pub fn generator(ctx: &mut Ctx<'_>, latent: Var) -> Result<Var> {
    let l = ctx.cfg.latent_dim();
    match *ctx.shape(latent) {
        [b, 1, 1, d] if d == l && b > 0 => {}
        ref s => {
            return Err(Error::Shape {
                layer: "generator/input".into(),
                detail: format!("expected [batch, 1, 1, {l}], got {s:?}"),
            })
        }
    }
    let mut x = ctx.conv_t("generator/deconv0", latent, 1, Padding::Valid, true)?;
    x = ctx.lrelu(x);
    for i in 1..ctx.cfg.stages() {
        x = ctx.conv_t(&format!("generator/deconv{i}"), x, 2, Padding::Same, true)?;
        x = ctx.lrelu(x);
    }
    x = ctx.conv_t("generator/out", x, 2, Padding::Same, true)?;
    Ok(ctx.g.tanh(x))
}

pub fn discriminator_layout(cfg: &ArchConfig, l: &mut Layout) {
    let mut cin = cfg.channels;
    for (i, &f) in cfg.disc_enc_filters[..cfg.stages()].iter().enumerate() {
        l.conv(&format!("discriminator/conv{i}"), [3, 3, cin, f], true);
        cin = f;
    }
    l.conv("discriminator/head", [4, 4, cin, cfg.disc_enc_head], true);
    l.linear(
        "discriminator/fc0",
        cfg.disc_enc_head + cfg.embed_dim,
        cfg.disc_fc,
        true,
    );
    l.linear("discriminator/fc1", cfg.disc_fc, 1, true);
    if cfg.separate_disc_encoder {
        encoder_layout(cfg, "discriminator/encoder", l);
    }
}

/// (map, satellite embedding) → probability `[batch, 1]` that the map is real.
pub fn discriminator(ctx: &mut Ctx<'_>, map: Var, cond: Var) -> Result<Var> {
    let b = check_image("discriminator/input", ctx.shape(map), ctx.cfg)?;
    let e = ctx.cfg.embed_dim;
    if ctx.shape(cond) != [b, 1, 1, e] {
        return Err(Error::Shape {
            layer: "discriminator/concat".into(),
            detail: format!(
                "embedding must be [{b}, 1, 1, {e}], got {:?}",
                ctx.shape(cond)
            ),
        });
    }
    let mut x = map;
    for i in 0..ctx.cfg.stages() {
        x = ctx.conv(&format!("discriminator/conv{i}"), x, 2, Padding::Same, true)?;
        x = ctx.lrelu(x);
    }
    x = ctx.conv("discriminator/head", x, 1, Padding::Valid, true)?;
    x = ctx.lrelu(x);
    let h = ctx.cfg.disc_enc_head;
    let x = ctx.reshape("discriminator/flatten", x, &[b, h])?;
    let c = ctx.reshape("discriminator/concat", cond, &[b, e])?;
    let x = ctx
        .g
        .concat(&[x, c])
        .map_err(|err| Error::shape("discriminator/concat", err))?;
    let x = ctx.linear("discriminator/fc0", x, true)?;
    let x = ctx.lrelu(x);
    let x = ctx.linear("discriminator/fc1", x, true)?;
    Ok(ctx.g.sigmoid(x))
}
