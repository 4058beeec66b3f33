use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::Tensor;

/// Adaptive moment estimation with per-parameter moments and step counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adam {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub steps: BTreeMap<String, u64>,
}

impl Adam {
    /// One bias-corrected update of parameter `name` along `grad`.
    pub fn update(
        &mut self,
        params: &mut ParamSet,
        name: &str,
        grad: &Tensor,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<()> {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("no parameter {name} to update")))?;
        if p.shape() != grad.shape() {
            return Err(Error::Shape {
                layer: name.to_string(),
                detail: format!("gradient {:?} for parameter {:?}", grad.shape(), p.shape()),
            });
        }
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let t = self.steps.entry(name.to_string()).or_insert(0);
        *t += 1;
        let c1 = 1.0 - beta1.powi(*t as i32);
        let c2 = 1.0 - beta2.powi(*t as i32);
        for (((pi, mi), vi), &gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(grad.data())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
        Ok(())
    }
}
