use super::Tensor;
use crate::error::{Error, Result};

/// Guard added under square roots and to cosine denominators.
pub(crate) const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Sum,
    Max,
    /// Forward-only; backward through a median node is an error.
    Median,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        broadcast: bool,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Reduce {
        a: usize,
        kind: ReduceKind,
        axis: usize,
        /// Flat input index selected for each output element (max only).
        argmax: Vec<usize>,
    },
    L2Norm(usize),
    NormedLinear {
        f: usize,
        w: usize,
        scale: f64,
    },
    Pick {
        a: usize,
        indices: Vec<usize>,
    },
    Stack(Vec<usize>),
    Concat(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only tape of tensor operations.
///
/// Node indices are a valid topological order, so backward is a single
/// reverse sweep. Leaf gradients accumulate across `backward` calls until
/// [`Graph::zero_grad`].
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims_of_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value with no path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if any backward pass has reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, p) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.values(), bv.values(), m, k, p);
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(Tensor::new(vec![m, p], out)?, Op::MatMul { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise op. `b` may match `a` exactly or be a row vector
    /// (`[c]` or `[1, c]`) broadcast over `a`'s last axis.
    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let broadcast = if av.shape() == bv.shape() {
            false
        } else {
            let row = bv.numel() == bv.last_dim()
                && bv.rank() <= 2
                && av.rank() >= 1
                && bv.last_dim() == av.last_dim();
            if !row {
                return Err(Error::Dimension {
                    op: "elementwise",
                    lhs: av.shape().to_vec(),
                    rhs: bv.shape().to_vec(),
                });
            }
            true
        };
        let cols = bv.numel();
        let bvals = bv.values();
        let out: Vec<f64> = av
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if broadcast { bvals[i % cols] } else { bvals[i] };
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let shape = av.shape().to_vec();
        let rg = self.needs(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Binary {
                kind,
                a: a.0,
                b: b.0,
                broadcast,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let out = av.values().iter().map(|x| x * factor).collect();
        let value = Tensor::new(av.shape().to_vec(), out).expect("shape preserved");
        let rg = self.needs(&[a.0]);
        self.push(value, Op::Scale { a: a.0, factor }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let out = av.values().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Tensor::new(av.shape().to_vec(), out).expect("shape preserved");
        let rg = self.needs(&[a.0]);
        self.push(value, Op::Relu(a.0), rg)
    }

    fn check_finite(&self, a: Var, op: &str) -> Result<()> {
        if self.nodes[a.0].value.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{op} received non-finite input")))
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_finite(a, "softmax")?;
        let av = &self.nodes[a.0].value;
        let out = softmax_rows(av.values(), av.last_dim());
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(value, Op::Softmax(a.0), rg))
    }

    /// Log-softmax over the last axis: `x - max - ln(sum(exp(x - max)))`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check_finite(a, "log_softmax")?;
        let av = &self.nodes[a.0].value;
        let out = log_softmax_rows(av.values(), av.last_dim());
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.needs(&[a.0]);
        Ok(self.push(value, Op::LogSoftmax(a.0), rg))
    }

    /// Reduces along `axis`, removing it from the shape.
    pub fn reduce(&mut self, a: Var, kind: ReduceKind, axis: usize) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if axis >= av.rank() {
            return Err(Error::Axis {
                op: "reduce",
                axis,
                rank: av.rank(),
            });
        }
        let (outer, len, inner) = dims_of_axis(av.shape(), axis);
        let vals = av.values();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        let mut scratch = Vec::with_capacity(len);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let r = match kind {
                    ReduceKind::Sum => (0..len).map(|j| vals[at(j)]).sum(),
                    ReduceKind::Mean => (0..len).map(|j| vals[at(j)]).sum::<f64>() / len as f64,
                    ReduceKind::Max => {
                        let mut best = at(0);
                        for j in 1..len {
                            if vals[at(j)] > vals[best] {
                                best = at(j);
                            }
                        }
                        argmax.push(best);
                        vals[best]
                    }
                    ReduceKind::Median => {
                        scratch.clear();
                        scratch.extend((0..len).map(|j| vals[at(j)]));
                        scratch.sort_by(f64::total_cmp);
                        if len % 2 == 1 {
                            scratch[len / 2]
                        } else {
                            0.5 * (scratch[len / 2 - 1] + scratch[len / 2])
                        }
                    }
                };
                out.push(r);
            }
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        let rg = self.needs(&[a.0]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Reduce {
                a: a.0,
                kind,
                axis,
                argmax,
            },
            rg,
        ))
    }

    /// Reduces every axis, yielding a scalar.
    pub fn reduce_all(&mut self, a: Var, kind: ReduceKind) -> Result<Var> {
        let mut v = a;
        while self.nodes[v.0].value.rank() > 0 {
            v = self.reduce(v, kind, 0)?;
        }
        Ok(v)
    }

    /// Euclidean norm of a vector, `sqrt(sum(x^2) + eps)`.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.rank() != 1 {
            return Err(Error::Dimension {
                op: "l2_norm",
                lhs: av.shape().to_vec(),
                rhs: vec![],
            });
        }
        let n = guarded_norm(av.values());
        let rg = self.needs(&[a.0]);
        Ok(self.push(Tensor::scalar(n), Op::L2Norm(a.0), rg))
    }

    /// Scaled cosine logits `scale * f.w_j / (|f| |w_j| + eps)` for every
    /// column `w_j` of `w`. `f` is a `[d]` vector or a `[batch, d]` matrix.
    pub fn normed_linear(&mut self, f: Var, w: Var, scale: f64) -> Result<Var> {
        let (fv, wv) = (&self.nodes[f.0].value, &self.nodes[w.0].value);
        let d = fv.last_dim();
        if fv.rank() == 0 || fv.rank() > 2 || wv.rank() != 2 || wv.shape()[0] != d {
            return Err(Error::Dimension {
                op: "normed_linear",
                lhs: fv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let rows = fv.numel() / d;
        let c = wv.shape()[1];
        let geo = CosineGeometry::new(fv.values(), wv.values(), rows, d, c);
        let out: Vec<f64> = (0..rows * c)
            .map(|ij| scale * geo.dots[ij] / geo.denom(ij / c, ij % c))
            .collect();
        let shape = if fv.rank() == 1 { vec![c] } else { vec![rows, c] };
        let rg = self.needs(&[f.0, w.0]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::NormedLinear {
                f: f.0,
                w: w.0,
                scale,
            },
            rg,
        ))
    }

    /// Selects `a[i, indices[i]]` from a `[batch, c]` matrix.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if av.rank() != 2 || av.shape()[0] != indices.len() {
            return Err(Error::Dimension {
                op: "pick",
                lhs: av.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let c = av.shape()[1];
        if let Some(&bad) = indices.iter().find(|&&t| t >= c) {
            return Err(Error::usage(format!("index {bad} out of range for width {c}")));
        }
        let out = indices.iter().enumerate().map(|(i, &t)| av.values()[i * c + t]).collect();
        let rg = self.needs(&[a.0]);
        Ok(self.push(
            Tensor::new(vec![indices.len()], out)?,
            Op::Pick {
                a: a.0,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("stack of zero tensors"))?;
        let shape = self.nodes[first.0].value.shape().to_vec();
        let mut out = Vec::new();
        for p in parts {
            let pv = &self.nodes[p.0].value;
            if pv.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "stack",
                    lhs: shape,
                    rhs: pv.shape().to_vec(),
                });
            }
            out.extend_from_slice(pv.values());
        }
        let mut new_shape = vec![parts.len()];
        new_shape.extend_from_slice(&shape);
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs(&idx);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Stack(idx), rg))
    }

    /// Concatenates `[batch, d_i]` matrices along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let rows = self.nodes[first.0].value.shape()[0];
        for p in parts {
            let pv = &self.nodes[p.0].value;
            if pv.rank() != 2 || pv.shape()[0] != rows {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.nodes[first.0].value.shape().to_vec(),
                    rhs: pv.shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.shape()[1]).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs(&idx);
        Ok(self.push(Tensor::new(vec![rows, total], out)?, Op::Concat(idx), rg))
    }

    /// Reverse sweep from a one-element `loss`, accumulating into `grad`
    /// of every reachable node that requires it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pending)?;
            match &mut self.nodes[i].grad {
                Some(acc) => add_into(acc, &g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn contribute(&self, pending: &mut [Option<Vec<f64>>], idx: usize, g: Vec<f64>) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut pending[idx] {
            Some(acc) => add_into(acc, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], pending: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, p) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[*a].requires_grad {
                    // g[m,p] . b^T[p,k]
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for c in 0..p {
                            let gv = g[r * p + c];
                            if gv == 0.0 {
                                continue;
                            }
                            for q in 0..k {
                                da[r * k + q] += gv * bv.values()[q * p + c];
                            }
                        }
                    }
                    self.contribute(pending, *a, da);
                }
                if self.nodes[*b].requires_grad {
                    // a^T[k,m] . g[m,p]
                    let mut db = vec![0.0; k * p];
                    for r in 0..m {
                        for q in 0..k {
                            let x = av.values()[r * k + q];
                            if x == 0.0 {
                                continue;
                            }
                            for c in 0..p {
                                db[q * p + c] += x * g[r * p + c];
                            }
                        }
                    }
                    self.contribute(pending, *b, db);
                }
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let cols = bv.numel();
                let bval = |j: usize| {
                    if *broadcast {
                        bv.values()[j % cols]
                    } else {
                        bv.values()[j]
                    }
                };
                if self.nodes[*a].requires_grad {
                    let da = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                        BinaryKind::Mul => g.iter().enumerate().map(|(j, gv)| gv * bval(j)).collect(),
                    };
                    self.contribute(pending, *a, da);
                }
                if self.nodes[*b].requires_grad {
                    let mut db = vec![0.0; cols];
                    for (j, gv) in g.iter().enumerate() {
                        let term = match kind {
                            BinaryKind::Add => *gv,
                            BinaryKind::Sub => -gv,
                            BinaryKind::Mul => gv * av.values()[j],
                        };
                        db[if *broadcast { j % cols } else { j }] += term;
                    }
                    self.contribute(pending, *b, db);
                }
            }
            Op::Scale { a, factor } => {
                self.contribute(pending, *a, g.iter().map(|gv| gv * factor).collect());
            }
            Op::Relu(a) => {
                let av = &self.nodes[*a].value;
                let da = g
                    .iter()
                    .zip(av.values())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.contribute(pending, *a, da);
            }
            Op::Softmax(a) => {
                let y = node.value.values();
                let c = node.value.last_dim();
                let mut da = vec![0.0; y.len()];
                for r in 0..y.len() / c {
                    let s = r * c;
                    let dot: f64 = (s..s + c).map(|j| g[j] * y[j]).sum();
                    for j in s..s + c {
                        da[j] = y[j] * (g[j] - dot);
                    }
                }
                self.contribute(pending, *a, da);
            }
            Op::LogSoftmax(a) => {
                let lp = node.value.values();
                let c = node.value.last_dim();
                let mut da = vec![0.0; lp.len()];
                for r in 0..lp.len() / c {
                    let s = r * c;
                    let total: f64 = g[s..s + c].iter().sum();
                    for j in s..s + c {
                        da[j] = g[j] - lp[j].exp() * total;
                    }
                }
                self.contribute(pending, *a, da);
            }
            Op::Reduce {
                a,
                kind,
                axis,
                argmax,
            } => {
                let av = &self.nodes[*a].value;
                let (outer, len, inner) = dims_of_axis(av.shape(), *axis);
                let mut da = vec![0.0; av.numel()];
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let w = if *kind == ReduceKind::Mean { 1.0 / len as f64 } else { 1.0 };
                        for o in 0..outer {
                            for j in 0..len {
                                for q in 0..inner {
                                    da[o * len * inner + j * inner + q] = w * g[o * inner + q];
                                }
                            }
                        }
                    }
                    ReduceKind::Max => {
                        for (out_idx, &src) in argmax.iter().enumerate() {
                            da[src] += g[out_idx];
                        }
                    }
                    ReduceKind::Median => {
                        return Err(Error::Unsupported(
                            "median reduction is forward-only and cannot be differentiated".into(),
                        ));
                    }
                }
                self.contribute(pending, *a, da);
            }
            Op::L2Norm(a) => {
                let av = &self.nodes[*a].value;
                let n = node.value.values()[0];
                let da = av.values().iter().map(|x| g[0] * x / n).collect();
                self.contribute(pending, *a, da);
            }
            Op::NormedLinear { f, w, scale } => {
                let (fv, wv) = (&self.nodes[*f].value, &self.nodes[*w].value);
                let d = fv.last_dim();
                let rows = fv.numel() / d;
                let c = wv.shape()[1];
                let geo = CosineGeometry::new(fv.values(), wv.values(), rows, d, c);
                // s = scale * a / (n m + eps); split into d/da and d/dn, d/dm.
                let mut d_dot = vec![0.0; rows * c];
                let mut d_fn = vec![0.0; rows];
                let mut d_wn = vec![0.0; c];
                for i in 0..rows {
                    for j in 0..c {
                        let ij = i * c + j;
                        let den = geo.denom(i, j);
                        d_dot[ij] = scale * g[ij] / den;
                        let d_den = -scale * g[ij] * geo.dots[ij] / (den * den);
                        d_fn[i] += d_den * geo.w_norms[j];
                        d_wn[j] += d_den * geo.f_norms[i];
                    }
                }
                if self.nodes[*f].requires_grad {
                    let mut df = vec![0.0; rows * d];
                    for i in 0..rows {
                        for q in 0..d {
                            let mut acc = d_fn[i] * fv.values()[i * d + q] / geo.f_norms[i];
                            for j in 0..c {
                                acc += d_dot[i * c + j] * wv.values()[q * c + j];
                            }
                            df[i * d + q] = acc;
                        }
                    }
                    self.contribute(pending, *f, df);
                }
                if self.nodes[*w].requires_grad {
                    let mut dw = vec![0.0; d * c];
                    for q in 0..d {
                        for j in 0..c {
                            let mut acc = d_wn[j] * wv.values()[q * c + j] / geo.w_norms[j];
                            for i in 0..rows {
                                acc += d_dot[i * c + j] * fv.values()[i * d + q];
                            }
                            dw[q * c + j] = acc;
                        }
                    }
                    self.contribute(pending, *w, dw);
                }
            }
            Op::Pick { a, indices } => {
                let av = &self.nodes[*a].value;
                let c = av.shape()[1];
                let mut da = vec![0.0; av.numel()];
                for (i, &t) in indices.iter().enumerate() {
                    da[i * c + t] = g[i];
                }
                self.contribute(pending, *a, da);
            }
            Op::Stack(parts) => {
                let size = self.nodes[parts[0]].value.numel();
                for (k, &p) in parts.iter().enumerate() {
                    self.contribute(pending, p, g[k * size..(k + 1) * size].to_vec());
                }
            }
            Op::Concat(parts) => {
                let total = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.shape()[1];
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    self.contribute(pending, p, dp);
                    offset += w;
                }
            }
        }
        Ok(())
    }
}

struct CosineGeometry {
    dots: Vec<f64>,
    f_norms: Vec<f64>,
    w_norms: Vec<f64>,
}

impl CosineGeometry {
    fn new(f: &[f64], w: &[f64], rows: usize, d: usize, c: usize) -> Self {
        let dots = matmul_raw(f, w, rows, d, c);
        let f_norms = (0..rows).map(|i| guarded_norm(&f[i * d..(i + 1) * d])).collect();
        let w_norms = (0..c)
            .map(|j| (0..d).map(|q| w[q * c + j] * w[q * c + j]).sum::<f64>())
            .map(|s| (s + NORM_EPS).sqrt())
            .collect();
        CosineGeometry {
            dots,
            f_norms,
            w_norms,
        }
    }

    fn denom(&self, i: usize, j: usize) -> f64 {
        self.f_norms[i] * self.w_norms[j] + NORM_EPS
    }
}

pub(crate) fn guarded_norm(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for r in 0..m {
        let orow = &mut out[r * p..(r + 1) * p];
        for q in 0..k {
            let x = a[r * k + q];
            if x == 0.0 {
                continue;
            }
            let brow = &b[q * p..(q + 1) * p];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += x * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(c).zip(out.chunks_mut(c)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in dst.iter_mut() {
            *o /= total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(c).zip(out.chunks_mut(c)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = src.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = v - max - lse;
        }
    }
    out
}
