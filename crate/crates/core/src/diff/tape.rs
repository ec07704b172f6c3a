use super::special::{digamma_unchecked, lgamma_unchecked, trigamma_unchecked};
use super::{DiffError, Tensor};

/// Marker in a gather index for "read zero" (used for zero padding).
pub const GATHER_ZERO: usize = usize::MAX;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Neg,
    Scale(f64),
    Offset(f64),
    Exp,
    Log,
    Abs,
    Relu,
    Sigmoid,
    Softplus,
    Square,
    Lgamma,
    Digamma,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        // `None` means the operand already has the output shape.
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Sum(Var),
    Mean(Var),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    ConcatLast {
        parts: Vec<(Var, usize)>,
    },
    SliceLast {
        x: Var,
        width: usize,
        start: usize,
        end: usize,
    },
    Pointwise2 {
        a: Var,
        b: Var,
        da: Vec<f64>,
        db: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Neg => "neg",
                UnaryKind::Scale(_) => "scale",
                UnaryKind::Offset(_) => "offset",
                UnaryKind::Exp => "exp",
                UnaryKind::Log => "log",
                UnaryKind::Abs => "abs",
                UnaryKind::Relu => "relu",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Softplus => "softplus",
                UnaryKind::Square => "square",
                UnaryKind::Lgamma => "lgamma",
                UnaryKind::Digamma => "digamma",
            },
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Gather { .. } => "gather",
            Op::ConcatLast { .. } => "concat",
            Op::SliceLast { .. } => "slice",
            Op::Pointwise2 { .. } => "pointwise2",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic reverse-mode tape.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// reverse topological order. Every op rejects non-finite results.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one call to [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of `len` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, DiffError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(DiffError::Shape(format!(
                    "cannot broadcast {a:?} with {b:?}"
                )))
            }
        };
    }
    Ok(out)
}

/// For each flat index of `out`, the flat index into an operand of shape `inp`.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - inp.len();
    let mut in_strides = vec![0usize; rank];
    let mut stride = 1;
    for i in (0..inp.len()).rev() {
        in_strides[i + offset] = if inp[i] == 1 { 0 } else { stride };
        stride *= inp[i];
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..total {
        map.push(pos);
        for d in (0..rank).rev() {
            counter[d] += 1;
            pos += in_strides[d];
            if counter[d] < out[d] {
                break;
            }
            pos -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, DiffError> {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, DiffError> {
        self.push(value, Op::Leaf, false)
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

    /// Copy of `v` cut off from the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var, DiffError> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, DiffError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)?;
        let map_a = (sa != out_shape).then(|| broadcast_map(&out_shape, &sa));
        let map_b = (sb != out_shape).then(|| broadcast_map(&out_shape, &sb));
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let n: usize = out_shape.iter().product();
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let ia = map_a.as_ref().map_or(i, |m| m[i]);
                let ib = map_b.as_ref().map_or(i, |m| m[i]);
                f(va[ia], vb[ib])
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var, DiffError> {
        let input = self.value(x);
        let shape = input.shape().to_vec();
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            UnaryKind::Neg => Box::new(|v| -v),
            UnaryKind::Scale(c) => Box::new(move |v| c * v),
            UnaryKind::Offset(c) => Box::new(move |v| v + c),
            UnaryKind::Exp => Box::new(f64::exp),
            UnaryKind::Log => Box::new(f64::ln),
            UnaryKind::Abs => Box::new(f64::abs),
            UnaryKind::Relu => Box::new(|v| v.max(0.0)),
            UnaryKind::Sigmoid => Box::new(sigmoid),
            UnaryKind::Softplus => Box::new(softplus),
            UnaryKind::Square => Box::new(|v| v * v),
            UnaryKind::Lgamma => Box::new(lgamma_unchecked),
            UnaryKind::Digamma => Box::new(digamma_unchecked),
        };
        if matches!(kind, UnaryKind::Lgamma | UnaryKind::Digamma | UnaryKind::Log) {
            if let Some(&bad) = input.data().iter().find(|v| !(**v > 0.0)) {
                let func = match kind {
                    UnaryKind::Lgamma => "lgamma",
                    UnaryKind::Digamma => "digamma",
                    _ => "log",
                };
                return Err(DiffError::Domain { func, value: bad });
            }
        }
        let data = input.data().iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, data)?, Op::Unary { kind, x }, rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Scale(c), x)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Offset(c), x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Square, x)
    }

    pub fn lgamma(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Lgamma, x)
    }

    pub fn digamma(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(UnaryKind::Digamma, x)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).data();
        if v.is_empty() {
            return Err(DiffError::Shape("mean of empty tensor".into()));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &vb[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, m, k, n },
            rg,
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(DiffError::Shape(format!("transpose of {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = v[i * cols + j];
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![cols, rows], out)?,
            Op::Transpose { x, rows, cols },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// `out[i] = src[index[i]]`, or 0 where `index[i] == GATHER_ZERO`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var, DiffError> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(DiffError::Shape(format!(
                "gather index of length {} for shape {shape:?}",
                index.len()
            )));
        }
        let v = self.value(src).data();
        let mut out = Vec::with_capacity(n);
        for &i in &index {
            if i == GATHER_ZERO {
                out.push(0.0);
            } else if i < v.len() {
                out.push(v[i]);
            } else {
                return Err(DiffError::Shape(format!(
                    "gather index {i} out of range {}",
                    v.len()
                )));
            }
        }
        let rg = self.rg(src);
        self.push(Tensor::new(shape.to_vec(), out)?, Op::Gather { src, index }, rg)
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| DiffError::Shape("concat of nothing".into()))?;
        let lead = self.shape(*first);
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(DiffError::Shape(format!("concat leading axes {lead:?} vs {s:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        let parts = parts.iter().copied().zip(widths).collect();
        self.push(Tensor::new(shape, out)?, Op::ConcatLast { parts }, rg)
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let s = self.shape(x).to_vec();
        let width = *s.last().ok_or_else(|| DiffError::Shape("slice of scalar".into()))?;
        if start >= end || end > width {
            return Err(DiffError::Shape(format!("slice {start}..{end} of width {width}")));
        }
        let rows = self.value(x).len() / width;
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&v[r * width + start..r * width + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let rg = self.rg(x);
        self.push(
            Tensor::new(shape, out)?,
            Op::SliceLast { x, width, start, end },
            rg,
        )
    }

    /// Elementwise function of two same-shape inputs with caller-supplied
    /// partial derivatives.
    pub fn pointwise2(
        &mut self,
        a: Var,
        b: Var,
        value: Vec<f64>,
        da: Vec<f64>,
        db: Vec<f64>,
    ) -> Result<Var, DiffError> {
        let shape = self.shape(a).to_vec();
        if self.shape(b) != &shape[..] || value.len() != da.len() || da.len() != db.len() {
            return Err(DiffError::Shape("pointwise2 operand mismatch".into()));
        }
        if da.iter().chain(&db).any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { op: "pointwise2 jacobian" });
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, value)?, Op::Pointwise2 { a, b, da, db }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            } => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
                if let Some(ga) = self.accum(grads, *a) {
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => 1.0,
                            BinaryKind::Mul => vb[ib(i)],
                            BinaryKind::Div => 1.0 / vb[ib(i)],
                        };
                        ga[ia(i)] += gi * d;
                    }
                }
                if let Some(gb) = self.accum(grads, *b) {
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add => 1.0,
                            BinaryKind::Sub => -1.0,
                            BinaryKind::Mul => va[ia(i)],
                            BinaryKind::Div => {
                                let y = vb[ib(i)];
                                -va[ia(i)] / (y * y)
                            }
                        };
                        gb[ib(i)] += gi * d;
                    }
                }
            }
            Op::Unary { kind, x } => {
                let xv = self.value(*x).data();
                let out = node.value.data();
                if let Some(gx) = self.accum(grads, *x) {
                    for i in 0..g.len() {
                        let d = match kind {
                            UnaryKind::Neg => -1.0,
                            UnaryKind::Scale(c) => *c,
                            UnaryKind::Offset(_) => 1.0,
                            UnaryKind::Exp => out[i],
                            UnaryKind::Log => 1.0 / xv[i],
                            UnaryKind::Abs => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else if xv[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Relu => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Sigmoid => out[i] * (1.0 - out[i]),
                            UnaryKind::Softplus => sigmoid(xv[i]),
                            UnaryKind::Square => 2.0 * xv[i],
                            UnaryKind::Lgamma => digamma_unchecked(xv[i]),
                            UnaryKind::Digamma => trigamma_unchecked(xv[i]),
                        };
                        gx[i] += g[i] * d;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.accum(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.accum(grads, *x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|v| *v += s);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                if let Some(ga) = self.accum(grads, *a) {
                    // ga = g * b^T
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &vb[p * n..(p + 1) * n];
                            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            ga[i * k + p] += dot;
                        }
                    }
                }
                if let Some(gb) = self.accum(grads, *b) {
                    // gb = a^T * g
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = va[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for (o, &y) in gbrow.iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::Transpose { x, rows, cols } => {
                if let Some(gx) = self.accum(grads, *x) {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            gx[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.accum(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
            }
            Op::Gather { src, index } => {
                if let Some(gs) = self.accum(grads, *src) {
                    for (&i, &gi) in index.iter().zip(g) {
                        if i != GATHER_ZERO {
                            gs[i] += gi;
                        }
                    }
                }
            }
            Op::ConcatLast { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total.max(1);
                let mut col = 0;
                for &(p, w) in parts {
                    if let Some(gp) = self.accum(grads, p) {
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + col + c];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::SliceLast { x, width, start, end } => {
                if let Some(gx) = self.accum(grads, *x) {
                    let w = end - start;
                    let rows = g.len() / w;
                    for r in 0..rows {
                        for c in 0..w {
                            gx[r * width + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            Op::Pointwise2 { a, b, da, db } => {
                if let Some(ga) = self.accum(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * da[i];
                    }
                }
                if let Some(gb) = self.accum(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * db[i];
                    }
                }
            }
        }
    }
}
