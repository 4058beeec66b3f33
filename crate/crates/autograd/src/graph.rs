use std::collections::HashMap;
use std::sync::Arc;

use crate::conv::{ConvGeometry, Padding};
use crate::error::ShapeError;
use crate::gemm;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Per-channel statistics measured by a training-mode batch normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cin: usize,
        cout: usize,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cin: usize,
        cout: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Abs(Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    NormPerSample(Var),
    Gram(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Gather {
        x: Var,
        idx: Arc<Vec<usize>>,
    },
    Merge {
        a: Var,
        b: Var,
        ia: Arc<Vec<usize>>,
        ib: Arc<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to the leaves that require them.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient for a leaf. Leaves that did not influence the output get zeros.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }
}

/// Eager computation graph. Values are computed as nodes are added.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), ShapeError> {
    if a.shape() != b.shape() {
        return Err(ShapeError::new(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf sharing storage with the caller.
    pub fn leaf_shared(&mut self, t: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(t, Op::Leaf, requires_grad)
    }

    /// A constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = Arc::clone(&self.nodes[v.0].value);
        self.push_shared(value, Op::Leaf, false)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, ShapeError> {
        let (n, h, w, cin) = self.value(x).dims4()?;
        let (kh, kw, kcin, cout) = match self.shape(k) {
            &[a, b, c, d] => (a, b, c, d),
            s => {
                return Err(ShapeError::new(
                    "conv2d",
                    format!("kernel must be rank 4, got {s:?}"),
                ))
            }
        };
        if kcin != cin {
            return Err(ShapeError::new(
                "conv2d",
                format!("input has {cin} channels, kernel expects {kcin}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(ShapeError::new(
                    "conv2d",
                    format!("bias shape {:?}, expected [{cout}]", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeometry::conv(h, w, kh, kw, stride, padding)?;
        let mut out = Tensor::zeros(&[n, geom.out_h, geom.out_w, cout]);
        geom.forward(
            n,
            self.value(x).data(),
            cin,
            self.value(k).data(),
            cout,
            out.data_mut(),
        );
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(k) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::Conv {
                x,
                k,
                b,
                geom,
                cin,
                cout,
            },
            rg,
        ))
    }

    /// Transposed convolution with kernel `[kh, kw, out_channels, in_channels]`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, ShapeError> {
        let (n, h, w, cin) = self.value(x).dims4()?;
        let (kh, kw, cout, kcin) = match self.shape(k) {
            &[a, b, c, d] => (a, b, c, d),
            s => {
                return Err(ShapeError::new(
                    "conv2d_transpose",
                    format!("kernel must be rank 4, got {s:?}"),
                ))
            }
        };
        if kcin != cin {
            return Err(ShapeError::new(
                "conv2d_transpose",
                format!("input has {cin} channels, kernel expects {kcin}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(ShapeError::new(
                    "conv2d_transpose",
                    format!("bias shape {:?}, expected [{cout}]", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeometry::transposed(h, w, kh, kw, stride, padding)?;
        let mut out = Tensor::zeros(&[n, geom.in_h, geom.in_w, cout]);
        // The adjoint of a forward convolution from `cout` to `cin` channels.
        geom.backward_data(
            n,
            self.value(x).data(),
            cout,
            self.value(k).data(),
            cin,
            out.data_mut(),
        );
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(k) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::ConvTranspose {
                x,
                k,
                b,
                geom,
                cin,
                cout,
            },
            rg,
        ))
    }

    /// `x · w + b` for `x: [m, in]`, `w: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, ShapeError> {
        let (m, inp) = self.value(x).dims2()?;
        let (win, out) = self.value(w).dims2()?;
        if win != inp {
            return Err(ShapeError::new(
                "linear",
                format!("input width {inp}, weight expects {win}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(ShapeError::new(
                    "linear",
                    format!("bias shape {:?}, expected [{out}]", self.shape(b)),
                ));
            }
        }
        let mut y = Tensor::zeros(&[m, out]);
        gemm::matmul(
            m,
            inp,
            out,
            self.value(x).data(),
            self.value(w).data(),
            0.0,
            y.data_mut(),
        );
        if let Some(b) = b {
            add_bias(&mut y, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let y = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(y, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu { x, slope }, |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine { x, scale }, |v| scale * v + shift)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, ShapeError> {
        same_shape(op_name, self.value(a), self.value(b))?;
        let y = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Concatenates along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let first = *parts
            .first()
            .ok_or_else(|| ShapeError::new("concat", "nothing to concatenate"))?;
        let lead = {
            let s = self.shape(first);
            if s.is_empty() {
                return Err(ShapeError::new("concat", "cannot concatenate scalars"));
            }
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(ShapeError::new(
                    "concat",
                    format!("{:?} vs {:?}", self.shape(first), s),
                ));
            }
            widths.push(s[lead.len()]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let y = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Sums everything except the leading axis, giving shape `[batch]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let b = t.batch();
        let per = t.len() / b.max(1);
        let out: Vec<f64> = t
            .data()
            .chunks(per.max(1))
            .map(|c| c.iter().sum())
            .collect();
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![b], out).expect("batch vector"),
            Op::SumPerSample(x),
            rg,
        )
    }

    /// Euclidean norm of each sample, giving shape `[batch]`.
    pub fn norm_per_sample(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let b = t.batch();
        let per = t.len() / b.max(1);
        let out: Vec<f64> = t
            .data()
            .chunks(per.max(1))
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![b], out).expect("batch vector"),
            Op::NormPerSample(x),
            rg,
        )
    }

    /// Per-image channel Gram matrices `FᵀF` of an NHWC tensor, shape `[batch, c, c]`.
    pub fn gram(&mut self, x: Var) -> Result<Var, ShapeError> {
        let (n, h, w, c) = self.value(x).dims4()?;
        let m = h * w;
        let mut out = Tensor::zeros(&[n, c, c]);
        {
            let src = self.value(x).data();
            let dst = out.data_mut();
            for b in 0..n {
                gemm::matmul_at_b(
                    c,
                    m,
                    c,
                    &src[b * m * c..(b + 1) * m * c],
                    &src[b * m * c..(b + 1) * m * c],
                    0.0,
                    &mut dst[b * c * c..(b + 1) * c * c],
                );
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gram(x), rg))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<usize, ShapeError> {
        let c = *self
            .shape(x)
            .last()
            .ok_or_else(|| ShapeError::new("batch_norm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(ShapeError::new(
                "batch_norm",
                format!(
                    "{c} channels, scale {:?}, shift {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        Ok(c)
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Var {
        let c = mean.len();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xv = self.value(x);
        let mut xhat = xv.clone();
        for row in xhat.data_mut().chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut y = xhat.clone();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        for row in y.data_mut().chunks_exact_mut(c) {
            for ((v, g), b) in row.iter_mut().zip(g).zip(bt) {
                *v = *v * g + b;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        )
    }

    /// Batch normalisation over all leading axes using the batch's own
    /// statistics. Returns the output and the (biased) statistics measured.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats), ShapeError> {
        let c = self.check_bn(x, gamma, beta)?;
        let xv = self.value(x);
        let rows = xv.len() / c;
        let mut mean = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let y = self.bn_apply(x, gamma, beta, &mean, &var, eps, true);
        Ok((y, BatchStats { mean, var }))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_inference(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var, ShapeError> {
        let c = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(ShapeError::new(
                "batch_norm",
                "running statistics do not match channel count",
            ));
        }
        Ok(self.bn_apply(x, gamma, beta, mean, var, eps, false))
    }

    /// Selects columns `idx` of a `[batch, width]` tensor.
    pub fn gather_cols(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var, ShapeError> {
        let (b, width) = self.value(x).dims2()?;
        if idx.iter().any(|&i| i >= width) {
            return Err(ShapeError::new(
                "gather_cols",
                format!("index out of range for width {width}"),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * idx.len());
        for r in 0..b {
            let row = &src[r * width..(r + 1) * width];
            data.extend(idx.iter().map(|&i| row[i]));
        }
        let rg = self.rg(x);
        let y = Tensor::new(vec![b, idx.len()], data)?;
        Ok(self.push(y, Op::Gather { x, idx }, rg))
    }

    /// Inverse of two gathers: places the columns of `a` at `ia` and those of
    /// `b` at `ib` in a `[batch, ia.len() + ib.len()]` output.
    pub fn merge_cols(
        &mut self,
        a: Var,
        ia: Arc<Vec<usize>>,
        b: Var,
        ib: Arc<Vec<usize>>,
    ) -> Result<Var, ShapeError> {
        let (ra, ka) = self.value(a).dims2()?;
        let (rb, kb) = self.value(b).dims2()?;
        let width = ka + kb;
        if ra != rb
            || ia.len() != ka
            || ib.len() != kb
            || ia.iter().chain(ib.iter()).any(|&i| i >= width)
        {
            return Err(ShapeError::new(
                "merge_cols",
                "inconsistent column partition",
            ));
        }
        let mut out = Tensor::zeros(&[ra, width]);
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            let dst = out.data_mut();
            for r in 0..ra {
                let row = &mut dst[r * width..(r + 1) * width];
                for (j, &i) in ia.iter().enumerate() {
                    row[i] = av[r * ka + j];
                }
                for (j, &i) in ib.iter().enumerate() {
                    row[i] = bv[r * kb + j];
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Merge { a, b, ia, ib }, rg))
    }

    /// Reverse-mode sweep from a single-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients, ShapeError> {
        if self.value(output).len() != 1 {
            return Err(ShapeError::new(
                "backward",
                format!(
                    "output must hold one value, has shape {:?}",
                    self.shape(output)
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));
        let mut result = Gradients::default();
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, gy, &mut grads, &mut result, Var(i));
        }
        // Leaves that require grad but were never reached get zeros.
        for (i, node) in self.nodes[..=output.0].iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                result
                    .grads
                    .entry(Var(i))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(result)
    }

    fn propagate(
        &self,
        node: &Node,
        gy: Tensor,
        grads: &mut [Option<Tensor>],
        result: &mut Gradients,
        me: Var,
    ) {
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {
                result.grads.insert(me, gy);
            }
            Op::Conv {
                x,
                k,
                b,
                geom,
                cin,
                cout,
            } => {
                let n = val(*x).batch();
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    accumulate(grads, b, bias_grad(&gy, *cout));
                }
                if self.rg(*k) {
                    let mut dk = Tensor::zeros(val(*k).shape());
                    geom.backward_kernel(n, val(*x).data(), *cin, gy.data(), *cout, dk.data_mut());
                    accumulate(grads, *k, dk);
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(val(*x).shape());
                    geom.backward_data(n, gy.data(), *cin, val(*k).data(), *cout, dx.data_mut());
                    accumulate(grads, *x, dx);
                }
            }
            Op::ConvTranspose {
                x,
                k,
                b,
                geom,
                cin,
                cout,
            } => {
                let n = val(*x).batch();
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    accumulate(grads, b, bias_grad(&gy, *cout));
                }
                if self.rg(*k) {
                    let mut dk = Tensor::zeros(val(*k).shape());
                    geom.backward_kernel(n, gy.data(), *cout, val(*x).data(), *cin, dk.data_mut());
                    accumulate(grads, *k, dk);
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(val(*x).shape());
                    geom.forward(n, gy.data(), *cout, val(*k).data(), *cin, dx.data_mut());
                    accumulate(grads, *x, dx);
                }
            }
            Op::Linear { x, w, b } => {
                let (m, inp) = val(*x).dims2().expect("checked at construction");
                let out = val(*w).shape()[1];
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    accumulate(grads, b, bias_grad(&gy, out));
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(&[inp, out]);
                    gemm::matmul_at_b(inp, m, out, val(*x).data(), gy.data(), 0.0, dw.data_mut());
                    accumulate(grads, *w, dw);
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(&[m, inp]);
                    gemm::matmul_a_bt(m, out, inp, gy.data(), val(*w).data(), 0.0, dx.data_mut());
                    accumulate(grads, *x, dx);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                let dx = val(*x)
                    .zip_map(&gy, |v, g| if v > 0.0 { g } else { s * g })
                    .expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = y
                    .zip_map(&gy, |t, g| g * (1.0 - t * t))
                    .expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = y
                    .zip_map(&gy, |s, g| g * s * (1.0 - s))
                    .expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Exp(x) => {
                let dx = y.zip_map(&gy, |e, g| g * e).expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Ln(x) => {
                let dx = val(*x).zip_map(&gy, |v, g| g / v).expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Square(x) => {
                let dx = val(*x)
                    .zip_map(&gy, |v, g| 2.0 * v * g)
                    .expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Abs(x) => {
                let dx = val(*x)
                    .zip_map(&gy, |v, g| g * sign(v))
                    .expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                accumulate(grads, *x, gy.map(|g| g * s));
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let dx = val(*x)
                    .zip_map(&gy, |v, g| if v < lo || v > hi { 0.0 } else { g })
                    .expect("same shape");
                accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, gy.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, gy);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, gy.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, gy.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    accumulate(
                        grads,
                        *a,
                        val(*b).zip_map(&gy, |v, g| v * g).expect("same shape"),
                    );
                }
                if self.rg(*b) {
                    accumulate(
                        grads,
                        *b,
                        val(*a).zip_map(&gy, |v, g| v * g).expect("same shape"),
                    );
                }
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| *val(*p).shape().last().unwrap())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = gy.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(
                                &gy.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        accumulate(
                            grads,
                            p,
                            Tensor::new(val(p).shape().to_vec(), data).expect("same size"),
                        );
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, gy.reshape(val(*x).shape()).expect("same size"));
            }
            Op::Sum(x) => {
                accumulate(grads, *x, Tensor::full(val(*x).shape(), gy.item()));
            }
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                accumulate(grads, *x, Tensor::full(val(*x).shape(), gy.item() / n));
            }
            Op::SumPerSample(x) => {
                let xv = val(*x);
                let per = xv.len() / xv.batch().max(1);
                let dx = Tensor::from_fn(xv.shape(), |i| gy.data()[i / per]);
                accumulate(grads, *x, dx);
            }
            Op::NormPerSample(x) => {
                let xv = val(*x);
                let per = xv.len() / xv.batch().max(1);
                let dx = Tensor::from_fn(xv.shape(), |i| {
                    let norm = y.data()[i / per];
                    if norm == 0.0 {
                        0.0
                    } else {
                        gy.data()[i / per] * xv.data()[i] / norm
                    }
                });
                accumulate(grads, *x, dx);
            }
            Op::Gram(x) => {
                let xv = val(*x);
                let (n, h, w, c) = xv.dims4().expect("checked at construction");
                let m = h * w;
                let mut dx = Tensor::zeros(xv.shape());
                let mut sym = vec![0.0; c * c];
                for b in 0..n {
                    let g = &gy.data()[b * c * c..(b + 1) * c * c];
                    for i in 0..c {
                        for j in 0..c {
                            sym[i * c + j] = g[i * c + j] + g[j * c + i];
                        }
                    }
                    gemm::matmul(
                        m,
                        c,
                        c,
                        &xv.data()[b * m * c..(b + 1) * m * c],
                        &sym,
                        0.0,
                        &mut dx.data_mut()[b * m * c..(b + 1) * m * c],
                    );
                }
                accumulate(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = inv_std.len();
                let rows = (gy.len() / c) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (grow, xrow) in gy.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * xrow[j];
                    }
                }
                if self.rg(*gamma) {
                    accumulate(
                        grads,
                        *gamma,
                        Tensor::new(vec![c], sum_gx.clone()).expect("channel vector"),
                    );
                }
                if self.rg(*beta) {
                    accumulate(
                        grads,
                        *beta,
                        Tensor::new(vec![c], sum_g.clone()).expect("channel vector"),
                    );
                }
                if self.rg(*x) {
                    let gm = val(*gamma).data();
                    let mut dx = gy.clone();
                    for (drow, xrow) in dx
                        .data_mut()
                        .chunks_exact_mut(c)
                        .zip(xhat.data().chunks_exact(c))
                    {
                        for j in 0..c {
                            let scale = gm[j] * inv_std[j];
                            drow[j] = if *batch_stats {
                                scale * (drow[j] - sum_g[j] / rows - xrow[j] * sum_gx[j] / rows)
                            } else {
                                scale * drow[j]
                            };
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gather { x, idx } => {
                let (b, width) = val(*x).dims2().expect("checked at construction");
                let k = idx.len();
                let mut dx = Tensor::zeros(&[b, width]);
                for r in 0..b {
                    for (j, &i) in idx.iter().enumerate() {
                        dx.data_mut()[r * width + i] += gy.data()[r * k + j];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Merge { a, b, ia, ib } => {
                let rows = gy.shape()[0];
                let width = gy.shape()[1];
                for (part, idx) in [(*a, ia), (*b, ib)] {
                    if !self.rg(part) {
                        continue;
                    }
                    let k = idx.len();
                    let mut data = Vec::with_capacity(rows * k);
                    for r in 0..rows {
                        data.extend(idx.iter().map(|&i| gy.data()[r * width + i]));
                    }
                    accumulate(
                        grads,
                        part,
                        Tensor::new(vec![rows, k], data).expect("partition size"),
                    );
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_bias(t: &mut Tensor, bias: &[f64]) {
    let c = bias.len();
    for row in t.data_mut().chunks_exact_mut(c) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn bias_grad(gy: &Tensor, c: usize) -> Tensor {
    let mut db = vec![0.0; c];
    for row in gy.data().chunks_exact(c) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Tensor::new(vec![c], db).expect("channel vector")
}
