use std::collections::BTreeMap;

use autograd::{Graph, Var};

use super::state::TrainState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{d_objective, total_g_loss, GLoss, LossReport, LossWeights};
use crate::models::{
    discriminate, generate, update_running_stats, Ctx, Generated, GradScope, Mode, Phase, Trace,
};
use crate::Tensor;

/// A batch of aligned pairs, `[b, s, s, c]` each, values in [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sat: Tensor,
    pub map: Tensor,
}

impl Batch {
    pub fn new(sat: Tensor, map: Tensor) -> Result<Self> {
        if sat.shape() != map.shape() || sat.rank() != 4 || sat.is_empty() {
            return Err(Error::Shape {
                layer: "batch".into(),
                detail: format!(
                    "satellite {:?} and map {:?} must be equal non-empty NHWC",
                    sat.shape(),
                    map.shape()
                ),
            });
        }
        Ok(Self { sat, map })
    }
}

/// Generator forward pass in train mode, with generator-phase leaves
/// tracking gradients.
pub struct GenPass {
    pub graph: Graph,
    pub sat: Var,
    pub map: Var,
    pub out: Generated,
    pub trace: Trace,
}

impl GenPass {
    pub fn fake(&self) -> &Tensor {
        self.graph.value(self.out.fake)
    }

    pub fn cond(&self) -> Option<&Tensor> {
        self.out.cond.map(|c| self.graph.value(c))
    }
}

pub fn generator_pass(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<GenPass> {
    let mut graph = Graph::new();
    let sat = graph.constant(batch.sat.clone());
    let map = graph.constant(batch.map.clone());
    let TrainState { params, rng, .. } = state;
    let mut ctx = Ctx::new(
        &mut graph,
        &cfg.arch,
        params,
        Mode::Train,
        GradScope::Phase(Phase::Generator),
    );
    let out = generate(&mut ctx, sat, rng)?;
    let trace = ctx.finish();
    if !graph.value(out.fake).all_finite() {
        return Err(Error::numerical("generator/output"));
    }
    Ok(GenPass {
        graph,
        sat,
        map,
        out,
        trace,
    })
}

/// `−d_objective` on real and generated pairs.
pub fn d_phase_loss(
    ctx: &mut Ctx<'_>,
    sat: Var,
    map: Var,
    fake: Var,
    cond: Option<Var>,
) -> Result<Var> {
    let d_real = discriminate(ctx, sat, map, cond)?;
    let d_fake = discriminate(ctx, sat, fake, cond)?;
    let obj = d_objective(ctx.g, d_real, d_fake)?;
    Ok(ctx.g.affine(obj, -1.0, 0.0))
}

/// Weighted generator loss. With a shared encoder the embedding reaches the
/// discriminator too, and the encoder gets gradient along both paths.
pub fn g_phase_loss(
    ctx: &mut Ctx<'_>,
    sat: Var,
    map: Var,
    out: Generated,
    weights: &LossWeights,
) -> Result<GLoss> {
    let d_fake = if weights.w_gan > 0.0 {
        discriminate(ctx, sat, out.fake, out.cond)?
    } else {
        out.fake
    };
    total_g_loss(ctx.g, d_fake, out.fake, map, weights)
}

fn phase_gradients(
    g: &Graph,
    loss: Var,
    leaves: &BTreeMap<String, Var>,
    phase: Phase,
) -> Result<Vec<(String, Tensor)>> {
    let mut grads = g.backward(loss).map_err(|e| Error::shape("backward", e))?;
    let scope = GradScope::Phase(phase);
    let mut out = Vec::new();
    for (name, &v) in leaves {
        if !scope.tracks(name) {
            continue;
        }
        let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v)));
        if !t.all_finite() {
            return Err(Error::numerical(format!("gradient of {name}")));
        }
        out.push((name.clone(), t));
    }
    Ok(out)
}

fn apply(
    state: &mut TrainState,
    cfg: &TrainConfig,
    grads: &[(String, Tensor)],
    trace: &Trace,
    phase: Phase,
) -> Result<()> {
    for (name, g) in grads {
        state.adam.update(
            &mut state.params,
            name,
            g,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        )?;
    }
    update_running_stats(
        &mut state.params,
        &trace.bn_stats,
        cfg.arch.bn_momentum,
        |p| Phase::of(p) == phase,
    )
}

/// One discriminator update against fixed generated maps; returns the
/// discriminator loss before the update. Touches discriminator parameters only.
pub fn discriminator_update(
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch: &Batch,
    fake: &Tensor,
    cond: Option<&Tensor>,
) -> Result<f64> {
    let mut g = Graph::new();
    let sat = g.constant(batch.sat.clone());
    let map = g.constant(batch.map.clone());
    let fake = g.constant(fake.clone());
    let cond = cond.map(|c| g.constant(c.clone()));
    let mut ctx = Ctx::new(
        &mut g,
        &cfg.arch,
        &state.params,
        Mode::Train,
        GradScope::Phase(Phase::Discriminator),
    );
    let loss = d_phase_loss(&mut ctx, sat, map, fake, cond)?;
    let trace = ctx.finish();
    let d_loss = g.value(loss).item();
    if !d_loss.is_finite() {
        return Err(Error::numerical("d_loss"));
    }
    let grads = phase_gradients(&g, loss, &trace.leaves, Phase::Discriminator)?;
    drop(g);
    apply(state, cfg, &grads, &trace, Phase::Discriminator)?;
    Ok(d_loss)
}

/// One generator (and encoder) update from a finished generator pass.
/// Touches generator-phase parameters only.
pub fn generator_update(state: &mut TrainState, cfg: &TrainConfig, pass: GenPass) -> Result<GLoss> {
    let GenPass {
        mut graph,
        sat,
        map,
        out,
        trace,
    } = pass;
    let mut ctx = Ctx::new(
        &mut graph,
        &cfg.arch,
        &state.params,
        Mode::Train,
        GradScope::None,
    );
    let loss = g_phase_loss(&mut ctx, sat, map, out, &cfg.weights)?;
    for (v, name) in [
        (loss.gan, "g_gan"),
        (loss.rec, "g_rec"),
        (loss.style, "g_style"),
        (loss.total_value, "g_total"),
    ] {
        if !v.is_finite() {
            return Err(Error::numerical(name));
        }
    }
    let grads = phase_gradients(&graph, loss.total, &trace.leaves, Phase::Generator)?;
    drop(graph);
    apply(state, cfg, &grads, &trace, Phase::Generator)?;
    Ok(loss)
}

/// One discriminator update then `g_steps_per_d_step` generator updates.
/// The report carries the discriminator loss and the last generator losses,
/// each measured before its update.
pub fn train_step(state: &mut TrainState, batch: &Batch, cfg: &TrainConfig) -> Result<LossReport> {
    let pass = generator_pass(state, cfg, batch)?;
    let cond = pass.cond().cloned();
    let d_loss = discriminator_update(state, cfg, batch, pass.fake(), cond.as_ref())?;
    let mut pass = Some(pass);
    let mut g = None;
    for _ in 0..cfg.g_steps_per_d_step.max(1) {
        let p = match pass.take() {
            Some(p) => p,
            None => generator_pass(state, cfg, batch)?,
        };
        g = Some(generator_update(state, cfg, p)?);
    }
    let g = g.expect("at least one generator step");
    state.step += 1;
    Ok(LossReport {
        step: state.step,
        d_loss,
        g_gan: g.gan,
        g_rec: g.rec,
        g_style: g.style,
        g_total: g.total_value,
    })
}
