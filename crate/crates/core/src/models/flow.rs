//! RealNVP affine couplings over flattened images.
//!
//! A coupling with binary mask `m` (1 = pass through) maps
//! `y = m⊙u + (1−m)⊙(u⊙exp(s) + t)` where `s` and `t` are fully connected
//! nets (two hidden layers with batch norm) of the passed-through
//! coordinates. The nets read the pass-through coordinates and emit only the
//! transformed ones. The default stack is checkerboard even/odd followed by
//! channel even/odd.

use std::sync::Arc;

use autograd::Var;

use super::config::ArchConfig;
use super::ctx::Ctx;
use super::encoder_gan::check_image;
use super::params::Layout;
use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Checkerboard,
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// `[h, w, c]` binary mask. Checkerboard EVEN is 1 where `i + j` is even;
/// channel EVEN is 1 on the first ⌈c/2⌉ channels. ODD is the complement.
pub fn make_mask(kind: MaskKind, parity: Parity, h: usize, w: usize, c: usize) -> Result<Tensor> {
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::invalid(format!(
            "mask dimensions must be positive, got {h}×{w}×{c}"
        )));
    }
    let odd = parity == Parity::Odd;
    Ok(Tensor::from_fn(&[h, w, c], |idx| {
        let (i, j, k) = (idx / (w * c), idx / c % w, idx % c);
        let on = match kind {
            MaskKind::Checkerboard => (i + j) % 2 == 0,
            MaskKind::Channel => k < c.div_ceil(2),
        };
        (on != odd) as u8 as f64
    }))
}

#[derive(Debug, Clone)]
pub struct CouplingLayer {
    pub index: usize,
    pub kind: MaskKind,
    pub parity: Parity,
    /// Flat indices the mask passes through.
    pub pass: Arc<Vec<usize>>,
    /// Flat indices the coupling rescales and shifts.
    pub transform: Arc<Vec<usize>>,
}

impl CouplingLayer {
    pub fn new(
        index: usize,
        kind: MaskKind,
        parity: Parity,
        h: usize,
        w: usize,
        c: usize,
    ) -> Result<Self> {
        let m = make_mask(kind, parity, h, w, c)?;
        let (pass, transform): (Vec<usize>, Vec<usize>) =
            (0..m.len()).partition(|&i| m.data()[i] == 1.0);
        Ok(Self {
            index,
            kind,
            parity,
            pass: Arc::new(pass),
            transform: Arc::new(transform),
        })
    }

    pub fn prefix(&self) -> String {
        format!("flow/coupling{}", self.index)
    }
}

/// The default four-coupling stack for `cfg`'s image shape.
pub fn couplings(cfg: &ArchConfig) -> Result<Vec<CouplingLayer>> {
    let s = cfg.image_size;
    [
        (MaskKind::Checkerboard, Parity::Even),
        (MaskKind::Checkerboard, Parity::Odd),
        (MaskKind::Channel, Parity::Even),
        (MaskKind::Channel, Parity::Odd),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (k, p))| CouplingLayer::new(i, k, p, s, s, cfg.channels))
    .collect()
}

pub fn flow_layout(cfg: &ArchConfig, l: &mut Layout) -> Result<()> {
    let hidden = cfg.flow_hidden;
    for c in couplings(cfg)? {
        for net in ["scale", "shift"] {
            let p = format!("{}/{net}", c.prefix());
            l.linear(&format!("{p}/fc0"), c.pass.len(), hidden, false);
            l.batch_norm(&format!("{p}/bn0"), hidden);
            l.linear(&format!("{p}/fc1"), hidden, hidden, false);
            l.batch_norm(&format!("{p}/bn1"), hidden);
            l.linear(&format!("{p}/fc2"), hidden, c.transform.len(), true);
        }
    }
    Ok(())
}

fn fc_net(ctx: &mut Ctx<'_>, prefix: &str, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..2 {
        h = ctx.linear(&format!("{prefix}/fc{i}"), h, false)?;
        h = ctx.batch_norm(&format!("{prefix}/bn{i}"), h)?;
        h = ctx.lrelu(h);
    }
    ctx.linear(&format!("{prefix}/fc2"), h, true)
}

/// Log-scale and shift for the transformed half, given the pass-through half.
fn scale_shift(ctx: &mut Ctx<'_>, c: &CouplingLayer, a: Var) -> Result<(Var, Var)> {
    let p = c.prefix();
    let mut s = fc_net(ctx, &format!("{p}/scale"), a)?;
    if !ctx.cfg.flow_raw_scale {
        s = ctx.g.tanh(s);
    }
    let t = fc_net(ctx, &format!("{p}/shift"), a)?;
    if !ctx.g.value(s).all_finite() {
        return Err(Error::numerical(format!("{p}/scale")));
    }
    if !ctx.g.value(t).all_finite() {
        return Err(Error::numerical(format!("{p}/shift")));
    }
    Ok((s, t))
}

fn check_flat(ctx: &Ctx<'_>, layer: &str, x: Var) -> Result<()> {
    let d = ctx.cfg.flat_dim();
    match *ctx.shape(x) {
        [b, n] if n == d && b > 0 => Ok(()),
        ref s => Err(Error::Shape {
            layer: layer.to_string(),
            detail: format!("expected [batch, {d}], got {s:?}"),
        }),
    }
}

fn finite_or(ctx: &Ctx<'_>, v: Var, component: String) -> Result<Var> {
    if ctx.g.value(v).all_finite() {
        Ok(v)
    } else {
        Err(Error::numerical(component))
    }
}

/// One coupling in the forward direction. Returns `y` and the per-sample
/// log-determinant `Σ(1−m)⊙s`.
pub fn coupling_forward(ctx: &mut Ctx<'_>, c: &CouplingLayer, u: Var) -> Result<(Var, Var)> {
    let name = c.prefix();
    let err = |e| Error::shape(&name, e);
    let a = ctx.g.gather_cols(u, Arc::clone(&c.pass)).map_err(err)?;
    let (s, t) = scale_shift(ctx, c, a)?;
    let ub = ctx
        .g
        .gather_cols(u, Arc::clone(&c.transform))
        .map_err(err)?;
    let e = ctx.g.exp(s);
    let e = finite_or(ctx, e, format!("{name}/scale"))?;
    let scaled = ctx.g.mul(ub, e).map_err(err)?;
    let yb = ctx.g.add(scaled, t).map_err(err)?;
    let yb = finite_or(ctx, yb, format!("{name}/output"))?;
    let y = ctx
        .g
        .merge_cols(a, Arc::clone(&c.pass), yb, Arc::clone(&c.transform))
        .map_err(err)?;
    let ld = ctx.g.sum_per_sample(s);
    Ok((y, ld))
}

/// One coupling in the inverse direction, `u_b = (y_b − t)⊙exp(−s)`.
pub fn coupling_inverse(ctx: &mut Ctx<'_>, c: &CouplingLayer, y: Var) -> Result<(Var, Var)> {
    let name = c.prefix();
    let err = |e| Error::shape(&name, e);
    let a = ctx.g.gather_cols(y, Arc::clone(&c.pass)).map_err(err)?;
    let (s, t) = scale_shift(ctx, c, a)?;
    let yb = ctx
        .g
        .gather_cols(y, Arc::clone(&c.transform))
        .map_err(err)?;
    let neg = ctx.g.affine(s, -1.0, 0.0);
    let e = ctx.g.exp(neg);
    let e = finite_or(ctx, e, format!("{name}/scale"))?;
    let shifted = ctx.g.sub(yb, t).map_err(err)?;
    let ub = ctx.g.mul(shifted, e).map_err(err)?;
    let u = ctx
        .g
        .merge_cols(a, Arc::clone(&c.pass), ub, Arc::clone(&c.transform))
        .map_err(err)?;
    let s_sum = ctx.g.sum_per_sample(s);
    let ld = ctx.g.affine(s_sum, -1.0, 0.0);
    Ok((u, ld))
}

fn accumulate(ctx: &mut Ctx<'_>, total: Option<Var>, ld: Var) -> Result<Var> {
    match total {
        None => Ok(ld),
        Some(t) => ctx
            .g
            .add(t, ld)
            .map_err(|e| Error::shape("flow/log_det", e)),
    }
}

/// `z: [batch, flat]` through every coupling; returns `(x, log_det [batch])`.
pub fn nvp_forward(ctx: &mut Ctx<'_>, layers: &[CouplingLayer], z: Var) -> Result<(Var, Var)> {
    check_flat(ctx, "flow/input", z)?;
    let mut x = z;
    let mut total = None;
    for c in layers {
        let (y, ld) = coupling_forward(ctx, c, x)?;
        x = y;
        total = Some(accumulate(ctx, total, ld)?);
    }
    let total = match total {
        Some(t) => t,
        None => {
            let b = ctx.shape(z)[0];
            ctx.g.constant(Tensor::zeros(&[b]))
        }
    };
    Ok((x, total))
}

/// Inverse of [`nvp_forward`], couplings applied last to first.
pub fn nvp_inverse(ctx: &mut Ctx<'_>, layers: &[CouplingLayer], x: Var) -> Result<(Var, Var)> {
    check_flat(ctx, "flow/input", x)?;
    let mut z = x;
    let mut total = None;
    for c in layers.iter().rev() {
        let (u, ld) = coupling_inverse(ctx, c, z)?;
        z = u;
        total = Some(accumulate(ctx, total, ld)?);
    }
    let total = match total {
        Some(t) => t,
        None => {
            let b = ctx.shape(x)[0];
            ctx.g.constant(Tensor::zeros(&[b]))
        }
    };
    Ok((z, total))
}

/// Flow generator: flatten the satellite image, run the couplings and bound
/// the result with tanh.
pub fn generator(ctx: &mut Ctx<'_>, sat: Var) -> Result<Var> {
    let b = check_image("flow/input", ctx.shape(sat), ctx.cfg)?;
    let shape = ctx.shape(sat).to_vec();
    let layers = couplings(ctx.cfg)?;
    let z = ctx.reshape("flow/input", sat, &[b, ctx.cfg.flat_dim()])?;
    let (x, _) = nvp_forward(ctx, &layers, z)?;
    let x = ctx.g.tanh(x);
    ctx.reshape("flow/output", x, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: &Tensor) -> Vec<f64> {
        t.data().to_vec()
    }

    #[test]
    fn checkerboard_even_two_by_two() {
        let m = make_mask(MaskKind::Checkerboard, Parity::Even, 2, 2, 1).unwrap();
        assert_eq!(grid(&m), vec![1.0, 0.0, 0.0, 1.0]);
        let m3 = make_mask(MaskKind::Checkerboard, Parity::Even, 2, 2, 3).unwrap();
        assert_eq!(&m3.data()[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(&m3.data()[3..6], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn parities_are_complements() {
        for kind in [MaskKind::Checkerboard, MaskKind::Channel] {
            for (h, w, c) in [(1, 1, 1), (3, 5, 3), (4, 4, 2), (7, 2, 5)] {
                let e = make_mask(kind, Parity::Even, h, w, c).unwrap();
                let o = make_mask(kind, Parity::Odd, h, w, c).unwrap();
                assert!(e.data().iter().zip(o.data()).all(|(a, b)| a + b == 1.0));
            }
        }
    }

    #[test]
    fn mask_counts() {
        for (h, w) in [(3, 3), (4, 5), (1, 7), (64, 64)] {
            let m = make_mask(MaskKind::Checkerboard, Parity::Even, h, w, 1).unwrap();
            assert_eq!(m.sum() as usize, (h * w).div_ceil(2));
        }
        let m = make_mask(MaskKind::Channel, Parity::Even, 2, 2, 3).unwrap();
        assert_eq!(&m.data()[..3], &[1.0, 1.0, 0.0]);
        assert!(make_mask(MaskKind::Channel, Parity::Odd, 0, 2, 3).is_err());
    }

    #[test]
    fn default_stack_transforms_every_coordinate_and_passes_every_coordinate() {
        let cfg = ArchConfig::reduced(super::super::Variant::FlowGan, 8);
        let layers = couplings(&cfg).unwrap();
        let d = cfg.flat_dim();
        let mut pass_prod = vec![1.0; d];
        let mut trans_prod = vec![1.0; d];
        for c in &layers {
            let m = make_mask(c.kind, c.parity, 8, 8, 3).unwrap();
            for i in 0..d {
                pass_prod[i] *= m.data()[i];
                trans_prod[i] *= 1.0 - m.data()[i];
            }
            assert_eq!(c.pass.len() + c.transform.len(), d);
        }
        assert!(trans_prod.iter().all(|&v| v == 0.0));
        assert!(pass_prod.iter().all(|&v| v == 0.0));
    }
}
