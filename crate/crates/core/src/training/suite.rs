use std::collections::BTreeMap;

use autograd::{Graph, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gradcheck::{gradient_check, DEFAULT_EPSILON};
use super::step::{d_phase_loss, g_phase_loss};
use crate::error::Result;
use crate::losses::{
    d_objective, g_nonsaturating, reconstruction, style_loss, LossWeights, RecNorm,
};
use crate::models::{
    generate, init_params, is_trainable, ArchConfig, Ctx, GradScope, Mode, ParamSet, Phase, Variant,
};
use crate::Tensor;

/// Tolerance for the composed training losses of reduced models.
pub const ARCH_TOLERANCE: f64 = 1e-4;
/// Tolerance for the losses on their own.
pub const LOSS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub case: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub probes: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

type Leaves = BTreeMap<String, Var>;

fn leaf(
    g: &mut Graph,
    p: &ParamSet,
    scope: GradScope,
    name: &str,
    leaves: &mut Leaves,
) -> Result<Var> {
    let v = g.leaf_shared(p.require(name)?.clone(), scope.tracks(name));
    leaves.insert(name.to_string(), v);
    Ok(v)
}

/// Each loss differentiated with respect to its inputs, on random 4×4×2
/// image batches and probabilities in (0.05, 0.95).
pub fn standalone_loss_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 4, 4, 2];
    let mut p = ParamSet::new();
    p.insert("generator/fake", uniform(&mut rng, &shape, -1.0, 1.0));
    p.insert("discriminator/d_real", uniform(&mut rng, &[2], 0.05, 0.95));
    p.insert("discriminator/d_fake", uniform(&mut rng, &[2], 0.05, 0.95));
    let real = uniform(&mut rng, &shape, -1.0, 1.0);

    type Case = (
        &'static str,
        Box<dyn Fn(&mut Graph, &ParamSet, GradScope) -> Result<(Var, Leaves)>>,
    );
    let image_case = |f: fn(&mut Graph, Var, Var) -> Result<Var>, real: Tensor| {
        move |g: &mut Graph, p: &ParamSet, s: GradScope| {
            let mut l = Leaves::new();
            let fake = leaf(g, p, s, "generator/fake", &mut l)?;
            let r = g.constant(real.clone());
            Ok((f(g, fake, r)?, l))
        }
    };
    let cases: Vec<Case> = vec![
        ("loss/style", Box::new(image_case(style_loss, real.clone()))),
        (
            "loss/reconstruction_l2",
            Box::new(image_case(
                |g, a, b| reconstruction(g, a, b, RecNorm::L2),
                real.clone(),
            )),
        ),
        (
            "loss/reconstruction_l1",
            Box::new(image_case(
                |g, a, b| reconstruction(g, a, b, RecNorm::L1),
                real.clone(),
            )),
        ),
        (
            "loss/g_nonsaturating",
            Box::new(|g: &mut Graph, p: &ParamSet, s: GradScope| {
                let mut l = Leaves::new();
                let df = leaf(g, p, s, "discriminator/d_fake", &mut l)?;
                Ok((g_nonsaturating(g, df)?, l))
            }),
        ),
        (
            "loss/d_objective",
            Box::new(|g: &mut Graph, p: &ParamSet, s: GradScope| {
                let mut l = Leaves::new();
                let dr = leaf(g, p, s, "discriminator/d_real", &mut l)?;
                let df = leaf(g, p, s, "discriminator/d_fake", &mut l)?;
                Ok((d_objective(g, dr, df)?, l))
            }),
        ),
    ];
    let mut out = Vec::new();
    for (case, f) in cases {
        let r = gradient_check(f, &p, GradScope::All, usize::MAX, DEFAULT_EPSILON, seed)?;
        out.push(SuiteEntry {
            case: case.into(),
            max_rel_error: r.max_rel_error,
            tolerance: LOSS_TOLERANCE,
            probes: r.probes.len(),
        });
    }
    Ok(out)
}

/// Parameters for the checks: fan-in scaled Gaussian weights and jittered
/// biases and batch-norm affines. At the training init the activations are
/// so small that a step of ε can cross a leaky-ReLU kink.
pub fn check_params(arch: &ArchConfig, seed: u64) -> Result<ParamSet> {
    let base = init_params(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc4ec);
    let mut p = ParamSet::new();
    for (name, t) in base.iter() {
        let t = if !is_trainable(name) {
            (**t).clone()
        } else if t.rank() >= 2 {
            let fan_in = t.len() / t.shape()[t.rank() - 1];
            let std = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(t.shape(), |_| std * rng.sample::<f64, _>(StandardNormal))
        } else {
            let mut t = (**t).clone();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += 0.1 * rng.sample::<f64, _>(StandardNormal));
            t
        };
        p.insert(name, t);
    }
    Ok(p)
}

/// Loss components of the trainer, as (case suffix, weights), each alone
/// and then combined.
fn components() -> Vec<(&'static str, LossWeights)> {
    let only = |w_gan, w_rec, w_style, rec_norm| LossWeights {
        w_gan,
        w_rec,
        w_style,
        rec_norm,
    };
    vec![
        ("g_gan", only(1.0, 0.0, 0.0, RecNorm::L2)),
        ("g_rec_l2", only(0.0, 1.0, 0.0, RecNorm::L2)),
        ("g_rec_l1", only(0.0, 1.0, 0.0, RecNorm::L1)),
        ("g_style", only(0.0, 0.0, 1.0, RecNorm::L2)),
        ("g_total", LossWeights::default()),
    ]
}

/// Composed training losses of reduced-size models: the discriminator loss
/// over discriminator parameters, each generator component over generator
/// (and encoder) parameters. Batch norm runs in train mode and the noise is
/// redrawn from the same seed for every evaluation.
pub fn architecture_suite(
    variants: &[Variant],
    image_size: usize,
    batch: usize,
    probe_count: usize,
    seed: u64,
) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for &variant in variants {
        out.extend(config_suite(
            &ArchConfig::reduced(variant, image_size),
            batch,
            probe_count,
            seed,
        )?);
    }
    Ok(out)
}

/// [`architecture_suite`] for one explicit configuration.
pub fn config_suite(
    arch: &ArchConfig,
    batch: usize,
    probe_count: usize,
    seed: u64,
) -> Result<Vec<SuiteEntry>> {
    let variant = arch.variant;
    let image_size = arch.image_size;
    let mut out = Vec::new();
    {
        let params = check_params(arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let shape = [batch, image_size, image_size, arch.channels];
        let sat = uniform(&mut rng, &shape, -1.0, 1.0);
        let map = uniform(&mut rng, &shape, -1.0, 1.0);
        let forward = |g: &mut Graph,
                       p: &ParamSet,
                       s: GradScope,
                       weights: Option<&LossWeights>|
         -> Result<(Var, Leaves)> {
            let sv = g.constant(sat.clone());
            let mv = g.constant(map.clone());
            let mut ctx = Ctx::new(g, arch, p, Mode::Train, s);
            let mut noise = ChaCha8Rng::seed_from_u64(seed);
            let gen = generate(&mut ctx, sv, &mut noise)?;
            let loss = match weights {
                None => d_phase_loss(&mut ctx, sv, mv, gen.fake, gen.cond)?,
                Some(w) => g_phase_loss(&mut ctx, sv, mv, gen, w)?.total,
            };
            Ok((loss, ctx.finish().leaves))
        };
        let mut cases: Vec<(String, GradScope, Option<LossWeights>)> = vec![(
            format!("{variant}/d_loss"),
            GradScope::Phase(Phase::Discriminator),
            None,
        )];
        for (name, w) in components() {
            cases.push((
                format!("{variant}/{name}"),
                GradScope::Phase(Phase::Generator),
                Some(w),
            ));
        }
        for (case, scope, weights) in cases {
            let f = |g: &mut Graph, p: &ParamSet, s: GradScope| forward(g, p, s, weights.as_ref());
            let r = gradient_check(f, &params, scope, probe_count, DEFAULT_EPSILON, seed)?;
            log::info!(
                "{case}: max relative error {:.3e} over {} probes",
                r.max_rel_error,
                r.probes.len()
            );
            out.push(SuiteEntry {
                case,
                max_rel_error: r.max_rel_error,
                tolerance: ARCH_TOLERANCE,
                probes: r.probes.len(),
            });
        }
    }
    Ok(out)
}

/// Standalone losses plus every variant at 16×16, batch 3.
pub fn gradient_suite(probe_count: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = standalone_loss_suite(seed)?;
    out.extend(architecture_suite(&Variant::ALL, 16, 3, probe_count, seed)?);
    Ok(out)
}
