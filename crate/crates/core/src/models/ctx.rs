use std::collections::BTreeMap;

use autograd::{BatchStats, Graph, Padding, Var};

use super::config::ArchConfig;
use super::params::{is_trainable, ParamSet, Phase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics and records them.
    Train,
    /// Batch norm uses running statistics.
    Inference,
}

/// Which parameter leaves track gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    None,
    Phase(Phase),
    All,
}

impl GradScope {
    pub fn tracks(self, name: &str) -> bool {
        is_trainable(name)
            && match self {
                GradScope::None => false,
                GradScope::Phase(p) => Phase::of(name) == p,
                GradScope::All => true,
            }
    }
}

/// A forward pass in progress: the graph, the parameters it reads, and the
/// leaves and batch statistics it has produced so far.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub cfg: &'a ArchConfig,
    params: &'a ParamSet,
    pub mode: Mode,
    scope: GradScope,
    leaves: BTreeMap<String, Var>,
    bn_stats: BTreeMap<String, BatchStats>,
    shapes: Vec<(String, Vec<usize>)>,
}

/// What a finished forward pass leaves behind.
#[derive(Debug, Default)]
pub struct Trace {
    pub leaves: BTreeMap<String, Var>,
    /// Batch statistics keyed by batch-norm prefix (train mode only).
    pub bn_stats: BTreeMap<String, BatchStats>,
    /// Output shape of every named layer, in evaluation order.
    pub shapes: Vec<(String, Vec<usize>)>,
}

impl Trace {
    /// Output shape of the last evaluation of `layer`.
    pub fn shape_of(&self, layer: &str) -> Option<&[usize]> {
        self.shapes
            .iter()
            .rev()
            .find(|(n, _)| n == layer)
            .map(|(_, s)| s.as_slice())
    }
}

impl<'a> Ctx<'a> {
    pub fn new(
        g: &'a mut Graph,
        cfg: &'a ArchConfig,
        params: &'a ParamSet,
        mode: Mode,
        scope: GradScope,
    ) -> Self {
        Self {
            g,
            cfg,
            params,
            mode,
            scope,
            leaves: BTreeMap::new(),
            bn_stats: BTreeMap::new(),
            shapes: Vec::new(),
        }
    }

    pub fn finish(self) -> Trace {
        Trace {
            leaves: self.leaves,
            bn_stats: self.bn_stats,
            shapes: self.shapes,
        }
    }

    /// Leaf for parameter `name`, created once per pass.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.leaves.get(name) {
            return Ok(v);
        }
        let t = self.params.require(name)?.clone();
        let v = self.g.leaf_shared(t, self.scope.tracks(name));
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    fn record(&mut self, layer: &str, v: Result<Var>) -> Result<Var> {
        let v = v?;
        self.shapes
            .push((layer.to_string(), self.g.shape(v).to_vec()));
        Ok(v)
    }

    fn bias(&mut self, prefix: &str, bias: bool) -> Result<Option<Var>> {
        Ok(if bias {
            Some(self.p(&format!("{prefix}/bias"))?)
        } else {
            None
        })
    }

    pub fn conv(
        &mut self,
        prefix: &str,
        x: Var,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Var> {
        let k = self.p(&format!("{prefix}/kernel"))?;
        let b = self.bias(prefix, bias)?;
        let y = self
            .g
            .conv2d(x, k, b, stride, padding)
            .map_err(|e| Error::shape(prefix, e));
        self.record(prefix, y)
    }

    pub fn conv_t(
        &mut self,
        prefix: &str,
        x: Var,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Var> {
        let k = self.p(&format!("{prefix}/kernel"))?;
        let b = self.bias(prefix, bias)?;
        let y = self
            .g
            .conv2d_transpose(x, k, b, stride, padding)
            .map_err(|e| Error::shape(prefix, e));
        self.record(prefix, y)
    }

    pub fn linear(&mut self, prefix: &str, x: Var, bias: bool) -> Result<Var> {
        let w = self.p(&format!("{prefix}/weight"))?;
        let b = self.bias(prefix, bias)?;
        let y = self.g.linear(x, w, b).map_err(|e| Error::shape(prefix, e));
        self.record(prefix, y)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}/gamma"))?;
        let beta = self.p(&format!("{prefix}/beta"))?;
        let eps = self.cfg.bn_eps;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self
                    .g
                    .batch_norm_train(x, gamma, beta, eps)
                    .map_err(|e| Error::shape(prefix, e))?;
                self.bn_stats.insert(prefix.to_string(), stats);
                self.record(prefix, Ok(y))
            }
            Mode::Inference => {
                let mean = self
                    .params
                    .require(&format!("{prefix}/running_mean"))?
                    .clone();
                let var = self
                    .params
                    .require(&format!("{prefix}/running_var"))?
                    .clone();
                let y = self
                    .g
                    .batch_norm_inference(x, gamma, beta, mean.data(), var.data(), eps)
                    .map_err(|e| Error::shape(prefix, e));
                self.record(prefix, y)
            }
        }
    }

    pub fn lrelu(&mut self, x: Var) -> Var {
        self.g.leaky_relu(x, self.cfg.leaky_slope)
    }

    pub fn reshape(&mut self, layer: &str, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.g.reshape(x, shape).map_err(|e| Error::shape(layer, e));
        self.record(layer, y)
    }

    pub fn shape(&self, x: Var) -> &[usize] {
        self.g.shape(x)
    }
}

/// Folds recorded batch statistics into the running estimates,
/// `running = m·running + (1 − m)·batch`, for the prefixes `keep` accepts.
pub fn update_running_stats(
    params: &mut ParamSet,
    stats: &BTreeMap<String, BatchStats>,
    momentum: f64,
    keep: impl Fn(&str) -> bool,
) -> Result<()> {
    for (prefix, s) in stats {
        if !keep(prefix) {
            continue;
        }
        for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let name = format!("{prefix}/{suffix}");
            let t = params
                .get_mut(&name)
                .ok_or_else(|| Error::invalid(format!("missing running statistic {name}")))?;
            for (r, b) in t.data_mut().iter_mut().zip(batch) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
    }
    Ok(())
}
