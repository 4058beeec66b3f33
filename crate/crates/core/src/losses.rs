//! Adversarial, reconstruction and Gram-matrix style objectives.

use std::fmt;
use std::str::FromStr;

use autograd::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecNorm {
    L1,
    L2,
}

impl FromStr for RecNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(RecNorm::L1),
            "l2" => Ok(RecNorm::L2),
            _ => Err(Error::invalid(format!(
                "unknown reconstruction norm {s:?}; expected l1 or l2"
            ))),
        }
    }
}

impl fmt::Display for RecNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecNorm::L1 => "l1",
            RecNorm::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_gan: f64,
    pub w_rec: f64,
    pub w_style: f64,
    pub rec_norm: RecNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_gan: 1.0,
            w_rec: 1.0,
            w_style: 1.0,
            rec_norm: RecNorm::L2,
        }
    }
}

impl LossWeights {
    pub fn new(w_gan: f64, w_rec: f64, w_style: f64, rec_norm: RecNorm) -> Result<Self> {
        let w = Self {
            w_gan,
            w_rec,
            w_style,
            rec_norm,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_gan, self.w_rec, self.w_style];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be finite and ≥ 0, got {ws:?}"
            )));
        }
        if ws.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Per-step loss values, one CSV line each:
/// `step,d_loss,g_gan,g_rec,g_style,g_total`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    /// Discriminator loss, the negated objective.
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_rec: f64,
    pub g_style: f64,
    pub g_total: f64,
}

impl LossReport {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.d_loss, self.g_gan, self.g_rec, self.g_style, self.g_total
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(Error::invalid(format!(
                "loss line needs 6 fields, got {}",
                f.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::invalid(format!("bad loss value {:?}", f[i])))
        };
        Ok(Self {
            step: f[0]
                .parse()
                .map_err(|_| Error::invalid(format!("bad step {:?}", f[0])))?,
            d_loss: num(1)?,
            g_gan: num(2)?,
            g_rec: num(3)?,
            g_style: num(4)?,
            g_total: num(5)?,
        })
    }

    pub fn all_finite(&self) -> bool {
        [
            self.d_loss,
            self.g_gan,
            self.g_rec,
            self.g_style,
            self.g_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn non_empty(g: &Graph, v: Var, what: &str) -> Result<()> {
    if g.value(v).is_empty() {
        return Err(Error::invalid(format!("{what}: empty batch")));
    }
    Ok(())
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape {
            layer: what.to_string(),
            detail: format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        });
    }
    Ok(())
}

fn mean_log(g: &mut Graph, p: Var) -> Var {
    let c = g.clamp(p, EPS, 1.0 - EPS);
    let l = g.ln(c);
    g.mean(l)
}

/// `E[log D(real)] + E[log(1 − D(fake))]`, the quantity the discriminator
/// maximises.
pub fn d_objective(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    non_empty(g, d_real, "d_objective")?;
    non_empty(g, d_fake, "d_objective")?;
    let real = mean_log(g, d_real);
    let flipped = g.affine(d_fake, -1.0, 1.0);
    let fake = mean_log(g, flipped);
    g.add(real, fake)
        .map_err(|e| Error::shape("d_objective", e))
}

/// Non-saturating generator loss `−E[log D(fake)]`.
pub fn g_nonsaturating(g: &mut Graph, d_fake: Var) -> Result<Var> {
    non_empty(g, d_fake, "g_nonsaturating")?;
    let m = mean_log(g, d_fake);
    Ok(g.affine(m, -1.0, 0.0))
}

/// Batch mean of the per-image Frobenius norm (L2) or absolute sum (L1) of
/// the difference.
pub fn reconstruction(g: &mut Graph, fake: Var, real: Var, norm: RecNorm) -> Result<Var> {
    same_shape(g, fake, real, "reconstruction")?;
    non_empty(g, fake, "reconstruction")?;
    let d = g
        .sub(fake, real)
        .map_err(|e| Error::shape("reconstruction", e))?;
    let per = match norm {
        RecNorm::L2 => g.norm_per_sample(d),
        RecNorm::L1 => {
            let a = g.abs(d);
            g.sum_per_sample(a)
        }
    };
    Ok(g.mean(per))
}

/// Batch mean of `Σ_ij (G_ij − A_ij)² / (4 N² M²)` with `G`, `A` the Gram
/// matrices of the raw images, `N` channels and `M = H·W`.
pub fn style_loss(g: &mut Graph, fake: Var, real: Var) -> Result<Var> {
    same_shape(g, fake, real, "style_loss")?;
    non_empty(g, fake, "style_loss")?;
    let (h, w, c) = match *g.shape(fake) {
        [_, h, w, c] => (h, w, c),
        ref s => {
            return Err(Error::Shape {
                layer: "style_loss".into(),
                detail: format!("expected NHWC images, got {s:?}"),
            })
        }
    };
    let gf = g.gram(fake).map_err(|e| Error::shape("style_loss", e))?;
    let gr = g.gram(real).map_err(|e| Error::shape("style_loss", e))?;
    let d = g.sub(gf, gr).map_err(|e| Error::shape("style_loss", e))?;
    let sq = g.square(d);
    let per = g.sum_per_sample(sq);
    let (n, m) = (c as f64, (h * w) as f64);
    let scaled = g.affine(per, 1.0 / (4.0 * n * n * m * m), 0.0);
    Ok(g.mean(scaled))
}

/// Weighted generator objective and its components.
#[derive(Debug, Clone, Copy)]
pub struct GLoss {
    pub total: Var,
    pub gan: f64,
    pub rec: f64,
    pub style: f64,
    pub total_value: f64,
}

/// `w_gan·g_gan + w_rec·g_rec + w_style·g_style`. Components with weight 0
/// are not evaluated and report exactly 0.
pub fn total_g_loss(
    g: &mut Graph,
    d_fake: Var,
    fake: Var,
    real: Var,
    weights: &LossWeights,
) -> Result<GLoss> {
    weights.validate()?;
    let mut terms = Vec::new();
    let mut values = [0.0; 3];
    if weights.w_gan > 0.0 {
        let v = g_nonsaturating(g, d_fake)?;
        values[0] = g.value(v).item();
        terms.push(g.affine(v, weights.w_gan, 0.0));
    }
    if weights.w_rec > 0.0 {
        let v = reconstruction(g, fake, real, weights.rec_norm)?;
        values[1] = g.value(v).item();
        terms.push(g.affine(v, weights.w_rec, 0.0));
    }
    if weights.w_style > 0.0 {
        let v = style_loss(g, fake, real)?;
        values[2] = g.value(v).item();
        terms.push(g.affine(v, weights.w_style, 0.0));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g
            .add(total, t)
            .map_err(|e| Error::shape("total_g_loss", e))?;
    }
    Ok(GLoss {
        total,
        gan: values[0],
        rec: values[1],
        style: values[2],
        total_value: g.value(total).item(),
    })
}

fn probs(g: &mut Graph, p: &[f64]) -> Var {
    g.constant(Tensor::new(vec![p.len()], p.to_vec()).expect("vector"))
}

pub fn d_objective_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let (r, f) = (probs(&mut g, d_real), probs(&mut g, d_fake));
    let v = d_objective(&mut g, r, f)?;
    Ok(g.value(v).item())
}

pub fn g_nonsaturating_value(d_fake: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let f = probs(&mut g, d_fake);
    let v = g_nonsaturating(&mut g, f)?;
    Ok(g.value(v).item())
}

pub fn reconstruction_value(fake: &Tensor, real: &Tensor, norm: RecNorm) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(fake.clone()), g.constant(real.clone()));
    let v = reconstruction(&mut g, a, b, norm)?;
    Ok(g.value(v).item())
}

pub fn style_loss_value(fake: &Tensor, real: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(fake.clone()), g.constant(real.clone()));
    let v = style_loss(&mut g, a, b)?;
    Ok(g.value(v).item())
}

/// Gram matrix `[c, c]` of one `[h, w, c]` (or `[1, h, w, c]`) image.
pub fn gram(image: &Tensor) -> Result<Tensor> {
    let t = match *image.shape() {
        [h, w, c] => image
            .clone()
            .reshape(&[1, h, w, c])
            .map_err(|e| Error::shape("gram", e))?,
        [1, _, _, _] => image.clone(),
        ref s => {
            return Err(Error::Shape {
                layer: "gram".into(),
                detail: format!("expected one H×W×C image, got {s:?}"),
            })
        }
    };
    let c = t.shape()[3];
    let mut g = Graph::new();
    let x = g.constant(t);
    let y = g.gram(x).map_err(|e| Error::shape("gram", e))?;
    g.value(y)
        .clone()
        .reshape(&[c, c])
        .map_err(|e| Error::shape("gram", e))
}
