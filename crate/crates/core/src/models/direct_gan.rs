//! Encoder-free translator and the channel-concatenating discriminator.
//!
//! Each generator layer concatenates `n` 3×3 and `n` 5×5 same-padded
//! convolutions (n = 300, 150, 60, 20) followed by leaky ReLU; a transposed
//! 3×3 convolution maps the last 40 channels to the image and tanh bounds it.
//! The discriminator sees satellite and map stacked on the channel axis,
//! halves the size with 3×3 stride-2 convolutions (128, 256, 512, 768, 1024)
//! until 4×4 is reached or the filters run out, and ends in a 4×4 valid
//! convolution whose logits are averaged before the sigmoid.

use autograd::{Padding, Var};

use super::config::ArchConfig;
use super::ctx::Ctx;
use super::encoder_gan::check_image;
use super::params::Layout;
use crate::error::{Error, Result};

pub fn generator_layout(cfg: &ArchConfig, l: &mut Layout) {
    let mut cin = cfg.channels;
    for (i, &n) in cfg.direct_widths.iter().enumerate() {
        l.conv(&format!("generator/layer{i}/k3"), [3, 3, cin, n], true);
        l.conv(&format!("generator/layer{i}/k5"), [5, 5, cin, n], true);
        cin = 2 * n;
    }
    l.conv_t("generator/out", [3, 3, cfg.channels, cin], true);
}

/// Dual-kernel layer `i`: `[b, h, w, cin]` → `[b, h, w, 2n]`.
pub fn dual_kernel_layer(ctx: &mut Ctx<'_>, i: usize, x: Var) -> Result<Var> {
    let a = ctx.conv(&format!("generator/layer{i}/k3"), x, 1, Padding::Same, true)?;
    let b = ctx.conv(&format!("generator/layer{i}/k5"), x, 1, Padding::Same, true)?;
    let y = ctx
        .g
        .concat(&[a, b])
        .map_err(|e| Error::shape(&format!("generator/layer{i}"), e))?;
    Ok(ctx.lrelu(y))
}

/// Satellite image → map image, same size.
pub fn generator(ctx: &mut Ctx<'_>, sat: Var) -> Result<Var> {
    check_image("generator/input", ctx.shape(sat), ctx.cfg)?;
    let mut x = sat;
    for i in 0..ctx.cfg.direct_widths.len() {
        x = dual_kernel_layer(ctx, i, x)?;
    }
    let x = ctx.conv_t("generator/out", x, 1, Padding::Same, true)?;
    Ok(ctx.g.tanh(x))
}

pub fn discriminator_layout(cfg: &ArchConfig, l: &mut Layout) {
    let mut cin = 2 * cfg.channels;
    for (i, &f) in cfg.direct_disc_filters[..cfg.direct_disc_stages()]
        .iter()
        .enumerate()
    {
        l.conv(&format!("discriminator/conv{i}"), [3, 3, cin, f], true);
        cin = f;
    }
    l.conv("discriminator/head", [4, 4, cin, 1], true);
}

/// Channel-wise stack of satellite and map, `[b, s, s, 2c]`.
pub fn pair_input(ctx: &mut Ctx<'_>, sat: Var, map: Var) -> Result<Var> {
    check_image("discriminator/input", ctx.shape(sat), ctx.cfg)?;
    check_image("discriminator/input", ctx.shape(map), ctx.cfg)?;
    if ctx.shape(sat) != ctx.shape(map) {
        return Err(Error::Shape {
            layer: "discriminator/input".into(),
            detail: format!(
                "satellite {:?} and map {:?} differ",
                ctx.shape(sat),
                ctx.shape(map)
            ),
        });
    }
    ctx.g
        .concat(&[sat, map])
        .map_err(|e| Error::shape("discriminator/input", e))
}

/// (satellite, map) → probability `[batch, 1]` that the map is real.
pub fn discriminator(ctx: &mut Ctx<'_>, sat: Var, map: Var) -> Result<Var> {
    let mut x = pair_input(ctx, sat, map)?;
    for i in 0..ctx.cfg.direct_disc_stages() {
        x = ctx.conv(&format!("discriminator/conv{i}"), x, 2, Padding::Same, true)?;
        x = ctx.lrelu(x);
    }
    let x = ctx.conv("discriminator/head", x, 1, Padding::Valid, true)?;
    let (b, h, w) = match *ctx.shape(x) {
        [b, h, w, _] => (b, h, w),
        _ => unreachable!("conv output is rank 4"),
    };
    let s = ctx.g.sum_per_sample(x);
    let mean = ctx.g.affine(s, 1.0 / (h * w) as f64, 0.0);
    let logit = ctx.reshape("discriminator/logit", mean, &[b, 1])?;
    Ok(ctx.g.sigmoid(logit))
}
