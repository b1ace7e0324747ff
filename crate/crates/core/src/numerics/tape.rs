//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value; [`Tape::backward`] walks the nodes in
//! reverse exactly once and accumulates gradients for every node that
//! depends on a parameter leaf.

use super::functional::NORM_EPSILON;
use super::tensor::{axis_layout, for_each_lane};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `a + b` with `b` repeated over the leading dimensions of `a`.
    AddBroadcast(Var, Var),
    Tanh(Var),
    Exp(Var),
    Scale(Var, F),
    /// `a * s` for a single-element `s`.
    MulScalar(Var, Var),
    L2Normalize {
        input: Var,
        axis: usize,
        norms: Vec<F>,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Entropy {
        input: Var,
        axis: usize,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Mean(Var),
    Sum(Var),
    SelectRows {
        input: Var,
        rows: Vec<usize>,
    },
    Concat(Vec<Var>),
    /// Mean cross-entropy of each lane along `axis` against the lane's own
    /// index as the target class.
    DiagonalCrossEntropy {
        input: Var,
        axis: usize,
        probs: Vec<F>,
    },
}

impl<F> Op<F> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Scale(..) => "scale",
            Op::MulScalar(..) => "mul_scalar",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Softmax { .. } => "softmax",
            Op::Entropy { .. } => "entropy",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::SelectRows { .. } => "select_rows",
            Op::Concat(_) => "concat",
            Op::DiagonalCrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the loss with respect to `var`; `None` when `var` does
    /// not require gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Attaches a diagnostic name, reported when a later op goes non-finite.
    pub fn set_name(&mut self, var: Var, name: impl Into<String>) {
        self.nodes[var.0].name = Some(name.into());
    }

    pub fn name(&self, var: Var) -> String {
        let node = &self.nodes[var.0];
        node.name
            .clone()
            .unwrap_or_else(|| format!("{}#{}", node.op.kind(), var.0))
    }

    fn inputs(op: &Op<F>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBroadcast(a, b) | Op::MulScalar(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Scale(a, _)
            | Op::Mean(a)
            | Op::Sum(a) => {
                vec![*a]
            }
            Op::L2Normalize { input, .. }
            | Op::Softmax { input, .. }
            | Op::Entropy { input, .. }
            | Op::MeanAxis { input, .. }
            | Op::SelectRows { input, .. }
            | Op::DiagonalCrossEntropy { input, .. } => vec![*input],
            Op::Concat(parts) => parts.clone(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        let inputs = Self::inputs(&op);
        if !value.is_finite() {
            let args: Vec<String> = inputs.iter().map(|&v| self.name(v)).collect();
            return Err(Error::NonFinite {
                node: self.nodes.len(),
                name: format!("{}({})", op.kind(), args.join(", ")),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        self.push(t, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::Add(a, b))
    }

    /// Adds `b` (any shape whose size equals the last dimension of `a`) to
    /// every row of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let width = x.shape().last().copied().unwrap_or(0);
        if y.numel() != width || width == 0 {
            return Err(Error::shape(
                "add_broadcast",
                format!("{:?} + {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + y.data()[i % width])
            .collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::AddBroadcast(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v.tanh()).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v.exp()).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::Exp(a))
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v * factor).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::Scale(a, factor))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let factor = self.value(s).item()?;
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v * factor).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::MulScalar(a, s))
    }

    /// Scales every slice along `axis` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let layout = axis_layout(x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![F::zero(); src.len()];
        let mut norms = Vec::new();
        let mut degenerate = None;
        for_each_lane(layout, |lane| {
            let idx: Vec<usize> = lane.collect();
            let n = idx.iter().map(|&i| src[i] * src[i]).sum::<F>().sqrt();
            if n.as_f64().is_nan() || n.as_f64() < NORM_EPSILON {
                degenerate.get_or_insert(n.as_f64());
            }
            for &i in &idx {
                out[i] = src[i] / n;
            }
            norms.push(n);
        });
        if let Some(norm) = degenerate {
            return Err(Error::DegenerateVector { norm });
        }
        let shape = x.shape().to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::L2Normalize {
                input: a,
                axis,
                norms,
            },
        )
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let layout = axis_layout(x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![F::zero(); src.len()];
        for_each_lane(layout, |lane| {
            let idx: Vec<usize> = lane.collect();
            let max = idx.iter().map(|&i| src[i]).fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for &i in &idx {
                let e = (src[i] - max).exp();
                out[i] = e;
                total += e;
            }
            for &i in &idx {
                out[i] /= total;
            }
        });
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax { input: a, axis })
    }

    /// Entropy of every probability slice along `axis`; the axis is kept
    /// with length 1.
    pub fn entropy(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let layout = axis_layout(x.shape(), axis)?;
        let src = x.data();
        let mut out = Vec::with_capacity(layout.0 * layout.2);
        let mut failure = None;
        for_each_lane(layout, |lane| {
            let p: Vec<F> = lane.map(|i| src[i]).collect();
            match super::functional::entropy(&p) {
                Ok(h) => out.push(h),
                Err(e) => {
                    failure.get_or_insert(e);
                    out.push(F::zero());
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        // Lanes were visited outer-major then inner, which is row-major for
        // the reduced shape.
        self.push(Tensor::new(shape, out)?, Op::Entropy { input: a, axis })
    }

    /// Mean along `axis`, keeping it with length 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let layout = axis_layout(x.shape(), axis)?;
        if layout.1 == 0 {
            return Err(Error::shape("mean_axis", "empty axis"));
        }
        let len = F::from_usize_lossy(layout.1);
        let src = x.data();
        let mut out = Vec::with_capacity(layout.0 * layout.2);
        for_each_lane(layout, |lane| {
            out.push(lane.map(|i| src[i]).sum::<F>() / len);
        });
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        self.push(Tensor::new(shape, out)?, Op::MeanAxis { input: a, axis })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = x.data().iter().copied().sum::<F>() / F::from_usize_lossy(x.numel());
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gathers rows of a rank-2 tensor; rows may repeat.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::shape(
                    "select_rows",
                    format!("row {i} out of range for {r} rows"),
                ));
            }
            out.extend_from_slice(x.row(i));
        }
        self.push(
            Tensor::new([rows.len(), c], out)?,
            Op::SelectRows {
                input: a,
                rows: rows.to_vec(),
            },
        )
    }

    /// Concatenates along the first axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs trailing {tail:?}", t.shape()),
                ));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()))
    }

    /// Mean softmax cross-entropy of a square logit matrix whose correct
    /// classes lie on the diagonal. `axis = 1` normalizes over each row,
    /// `axis = 0` over each column.
    pub fn diagonal_cross_entropy(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        if r != c || axis > 1 {
            return Err(Error::shape(
                "cross_entropy",
                format!(
                    "need square logits and axis 0/1, got {:?} axis {axis}",
                    x.shape()
                ),
            ));
        }
        let src = x.data();
        let mut probs = vec![F::zero(); src.len()];
        let mut loss = F::zero();
        let mut lane_no = 0;
        for_each_lane(axis_layout(x.shape(), axis)?, |lane| {
            let idx: Vec<usize> = lane.collect();
            let max = idx.iter().map(|&i| src[i]).fold(F::neg_infinity(), F::max);
            let total: F = idx.iter().map(|&i| (src[i] - max).exp()).sum();
            let log_total = total.ln() + max;
            for &i in &idx {
                probs[i] = (src[i] - log_total).exp();
            }
            loss += log_total - src[idx[lane_no]];
            lane_no += 1;
        });
        let value = loss / F::from_usize_lossy(r);
        self.push(
            Tensor::scalar(value),
            Op::DiagonalCrossEntropy {
                input: a,
                axis,
                probs,
            },
        )
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                let node = &self.nodes[id];
                match g {
                    Some(g) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                    }
                    _ if node.requires_grad => Some(Tensor::zeros(node.value.shape().to_vec())),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("rank 2");
                let n = self.value(*b).dims2().expect("rank 2").1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(*a, grads, |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += super::functional::dot(grow, brow);
                        }
                    }
                });
                self.accumulate(*b, grads, |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().expect("rank 2");
                self.accumulate(*a, grads, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(v, grads, |ga| add_into(ga, g));
                }
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate(*a, grads, |ga| add_into(ga, g));
                let width = self.value(*b).numel();
                self.accumulate(*b, grads, |gb| {
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % width] += gv;
                    }
                });
            }
            Op::Tanh(a) => self.accumulate(*a, grads, |ga| {
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gv * (F::one() - y * y);
                }
            }),
            Op::Exp(a) => self.accumulate(*a, grads, |ga| {
                for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                    *d += gv * y;
                }
            }),
            Op::Scale(a, factor) => self.accumulate(*a, grads, |ga| {
                for (d, &gv) in ga.iter_mut().zip(g) {
                    *d += gv * *factor;
                }
            }),
            Op::MulScalar(a, s) => {
                let factor = self.value(*s).data()[0];
                self.accumulate(*a, grads, |ga| {
                    for (d, &gv) in ga.iter_mut().zip(g) {
                        *d += gv * factor;
                    }
                });
                let x = self.value(*a).data();
                self.accumulate(*s, grads, |gs| {
                    gs[0] += super::functional::dot(g, x);
                });
            }
            Op::L2Normalize { input, axis, norms } => {
                let layout = axis_layout(node.value.shape(), *axis).expect("axis");
                self.accumulate(*input, grads, |ga| {
                    let mut lane_no = 0;
                    for_each_lane(layout, |lane| {
                        let idx: Vec<usize> = lane.collect();
                        let yg: F = idx.iter().map(|&i| out[i] * g[i]).sum();
                        let n = norms[lane_no];
                        for &i in &idx {
                            ga[i] += (g[i] - out[i] * yg) / n;
                        }
                        lane_no += 1;
                    });
                });
            }
            Op::Softmax { input, axis } => {
                let layout = axis_layout(node.value.shape(), *axis).expect("axis");
                self.accumulate(*input, grads, |ga| {
                    for_each_lane(layout, |lane| {
                        let idx: Vec<usize> = lane.collect();
                        let yg: F = idx.iter().map(|&i| out[i] * g[i]).sum();
                        for &i in &idx {
                            ga[i] += out[i] * (g[i] - yg);
                        }
                    });
                });
            }
            Op::Entropy { input, axis } => {
                let p = self.value(*input);
                let layout = axis_layout(p.shape(), *axis).expect("axis");
                let pv = p.data();
                self.accumulate(*input, grads, |ga| {
                    let mut lane_no = 0;
                    for_each_lane(layout, |lane| {
                        let gl = g[lane_no];
                        for i in lane {
                            // 0 ln 0 is treated as a constant zero.
                            if pv[i] > F::zero() {
                                ga[i] -= gl * (pv[i].ln() + F::one());
                            }
                        }
                        lane_no += 1;
                    });
                });
            }
            Op::MeanAxis { input, axis } => {
                let layout = axis_layout(self.value(*input).shape(), *axis).expect("axis");
                let len = F::from_usize_lossy(layout.1);
                self.accumulate(*input, grads, |ga| {
                    let mut lane_no = 0;
                    for_each_lane(layout, |lane| {
                        let gl = g[lane_no] / len;
                        for i in lane {
                            ga[i] += gl;
                        }
                        lane_no += 1;
                    });
                });
            }
            Op::Mean(a) => {
                let n = F::from_usize_lossy(self.value(*a).numel());
                self.accumulate(*a, grads, |ga| {
                    let gv = g[0] / n;
                    ga.iter_mut().for_each(|d| *d += gv);
                });
            }
            Op::Sum(a) => self.accumulate(*a, grads, |ga| {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }),
            Op::SelectRows { input, rows } => {
                let c = self.value(*input).dims2().expect("rank 2").1;
                self.accumulate(*input, grads, |ga| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut ga[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(p, grads, |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::DiagonalCrossEntropy { input, axis, probs } => {
                let shape = self.value(*input).shape();
                let layout = axis_layout(shape, *axis).expect("axis");
                let scale = g[0] / F::from_usize_lossy(shape[0]);
                self.accumulate(*input, grads, |ga| {
                    let mut lane_no = 0;
                    for_each_lane(layout, |lane| {
                        for (k, i) in lane.enumerate() {
                            let target = if k == lane_no { F::one() } else { F::zero() };
                            ga[i] += scale * (probs[i] - target);
                        }
                        lane_no += 1;
                    });
                });
            }
        }
    }

    fn accumulate(&self, var: Var, grads: &mut [Option<Vec<F>>], f: impl FnOnce(&mut [F])) {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![F::zero(); node.value.numel()]);
        f(slot);
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn matmul_raw<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}
