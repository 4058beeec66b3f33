use std::collections::BTreeMap;

use autograd::{Graph, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{GradScope, ParamSet};
use crate::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// One compared coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`. The floor sits well above
/// the rounding noise of the central difference, `ε_mach·|f| / ε`, so
/// coordinates whose true gradient is zero do not divide noise by noise.
fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn noise_floor(f: f64, epsilon: f64) -> f64 {
    (1e5 * f64::EPSILON * f.abs().max(1.0) / epsilon).max(1e-12)
}

/// Compares `analytic` with central differences of `value` at up to
/// `probe_count` coordinates drawn without replacement (all of them when
/// there are fewer).
pub fn compare_gradients(
    value: impl Fn(&ParamSet) -> Result<f64>,
    params: &ParamSet,
    analytic: &BTreeMap<String, Tensor>,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheck> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let names: Vec<&String> = analytic.keys().collect();
    let mut offsets = Vec::with_capacity(names.len());
    let mut total = 0usize;
    for n in &names {
        let t = params.require(n)?;
        if t.shape() != analytic[*n].shape() {
            return Err(Error::Shape {
                layer: n.to_string(),
                detail: format!(
                    "gradient {:?} for parameter {:?}",
                    analytic[*n].shape(),
                    t.shape()
                ),
            });
        }
        offsets.push(total);
        total += t.len();
    }
    let picks: Vec<usize> = if probe_count >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, total, probe_count).into_vec();
        v.sort_unstable();
        v
    };
    let f0 = value(params)?;
    let floor = noise_floor(f0, epsilon);
    let mut work = params.clone();
    let mut probes = Vec::with_capacity(picks.len());
    let mut max_rel_error: f64 = 0.0;
    for flat in picks {
        let k = offsets.partition_point(|&o| o <= flat) - 1;
        let name = names[k];
        let index = flat - offsets[k];
        let orig = work.require(name)?.data()[index];
        let (up, down) = (orig + epsilon, orig - epsilon);
        let mut at = |x: f64| -> Result<f64> {
            work.get_mut(name).expect("probed parameter").data_mut()[index] = x;
            value(&work)
        };
        let fp = at(up)?;
        let fm = at(down)?;
        at(orig).ok();
        let numeric = (fp - fm) / (up - down);
        let a = analytic[name].data()[index];
        let rel = rel_error(a, numeric, floor);
        max_rel_error = if rel.is_nan() {
            f64::INFINITY
        } else {
            max_rel_error.max(rel)
        };
        probes.push(Probe {
            name: name.clone(),
            index,
            analytic: a,
            numeric,
            rel_error: rel,
        });
    }
    Ok(GradCheck {
        max_rel_error,
        probes,
    })
}

/// Analytic gradient of the scalar `loss_fn` builds, checked against
/// central differences.
///
/// `loss_fn` records a pass on the graph with the given scope and returns
/// the scalar and the parameter leaves it read; coordinates of the leaves
/// `scope` tracks are probed.
pub fn gradient_check<F>(
    loss_fn: F,
    params: &ParamSet,
    scope: GradScope,
    probe_count: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamSet, GradScope) -> Result<(Var, BTreeMap<String, Var>)>,
{
    let mut g = Graph::new();
    let (out, leaves) = loss_fn(&mut g, params, scope)?;
    if !g.shape(out).is_empty() && g.value(out).len() != 1 {
        return Err(Error::invalid("gradient_check needs a scalar loss"));
    }
    let mut grads = g.backward(out).map_err(|e| Error::shape("backward", e))?;
    let mut analytic = BTreeMap::new();
    for (name, v) in leaves {
        if scope.tracks(&name) {
            let t = grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v)));
            analytic.insert(name, t);
        }
    }
    drop(g);
    let value = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let (out, _) = loss_fn(&mut g, p, GradScope::None)?;
        Ok(g.value(out).data()[0])
    };
    compare_gradients(value, params, &analytic, probe_count, epsilon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn quad(g: &mut Graph, p: &ParamSet, scope: GradScope) -> Result<(Var, BTreeMap<String, Var>)> {
        let t = g.leaf_shared(p.require("theta")?.clone(), scope.tracks("theta"));
        let sq = g.square(t);
        Ok((g.sum(sq), BTreeMap::from([("theta".to_string(), t)])))
    }

    fn params() -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ParamSet::new();
        p.insert(
            "theta",
            Tensor::from_fn(&[10], |_| rng.random_range(-2.0..2.0)),
        );
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let r = gradient_check(quad, &params(), GradScope::All, 100, 1e-4, 0).unwrap();
        assert_eq!(r.probes.len(), 10);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn corrupted_coordinate_is_detected() {
        let p = params();
        let theta = p.require("theta").unwrap().clone();
        let mut grad = theta.map(|x| 2.0 * x);
        grad.data_mut()[3] *= 2.0;
        let analytic = BTreeMap::from([("theta".to_string(), grad)]);
        let value = |p: &ParamSet| Ok(p.require("theta")?.data().iter().map(|x| x * x).sum());
        let r = compare_gradients(value, &p, &analytic, 100, 1e-4, 0).unwrap();
        assert!(r.max_rel_error > 0.4);
        let worst = r
            .probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .unwrap();
        assert_eq!(worst.index, 3);
    }

    #[test]
    fn probes_are_a_seeded_subset() {
        let a = gradient_check(quad, &params(), GradScope::All, 4, 1e-4, 1).unwrap();
        let b = gradient_check(quad, &params(), GradScope::All, 4, 1e-4, 1).unwrap();
        assert_eq!(a, b);
        let mut idx: Vec<usize> = a.probes.iter().map(|p| p.index).collect();
        idx.dedup();
        assert_eq!(idx.len(), 4);
    }

    #[test]
    fn untracked_leaves_are_not_probed() {
        let r = gradient_check(quad, &params(), GradScope::None, 100, 1e-4, 0).unwrap();
        assert!(r.probes.is_empty());
        assert_eq!(r.max_rel_error, 0.0);
    }
}
