use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use super::attention::{attention_backward, attention_forward, AttentionSpec};
use super::{Parameter, Real, Tensor, TensorError};

/// Contiguous row range inside a stacked (ragged) batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    /// Back-to-back segments for the given lengths.
    pub fn pack(lengths: &[usize]) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .iter()
            .map(|&len| {
                let s = Segment { start, len };
                start += len;
                s
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    Gelu,
    Tanh,
}

/// Identifier of a primitive, without attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    Add,
    Mul,
    Scale,
    Concat,
    GatherRows,
    Softmax,
    LogSoftmax,
    LayerNorm,
    Activation,
    MaskedFill,
    MeanPool,
    Attention,
    CrossEntropy,
    Sum,
    Mean,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 16] = [
        PrimitiveKind::MatMul,
        PrimitiveKind::Add,
        PrimitiveKind::Mul,
        PrimitiveKind::Scale,
        PrimitiveKind::Concat,
        PrimitiveKind::GatherRows,
        PrimitiveKind::Softmax,
        PrimitiveKind::LogSoftmax,
        PrimitiveKind::LayerNorm,
        PrimitiveKind::Activation,
        PrimitiveKind::MaskedFill,
        PrimitiveKind::MeanPool,
        PrimitiveKind::Attention,
        PrimitiveKind::CrossEntropy,
        PrimitiveKind::Sum,
        PrimitiveKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::MatMul => "matmul",
            PrimitiveKind::Add => "add",
            PrimitiveKind::Mul => "mul",
            PrimitiveKind::Scale => "scale",
            PrimitiveKind::Concat => "concat",
            PrimitiveKind::GatherRows => "gather_rows",
            PrimitiveKind::Softmax => "softmax",
            PrimitiveKind::LogSoftmax => "log_softmax",
            PrimitiveKind::LayerNorm => "layer_norm",
            PrimitiveKind::Activation => "activation",
            PrimitiveKind::MaskedFill => "masked_fill",
            PrimitiveKind::MeanPool => "mean_pool",
            PrimitiveKind::Attention => "attention",
            PrimitiveKind::CrossEntropy => "cross_entropy",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::Mean => "mean",
        }
    }
}

impl FromStr for PrimitiveKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrimitiveKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::UnknownPrimitive(s.to_string()))
    }
}

/// A primitive together with its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul { trans_a: bool, trans_b: bool },
    /// Elementwise; `b` may also be a row vector broadcast over the rows of `a`.
    Add,
    Mul,
    Scale(f64),
    Concat { axis: usize },
    GatherRows { ids: Vec<usize> },
    Softmax,
    LogSoftmax,
    /// Inputs `x, gamma, beta`; normalizes each row.
    LayerNorm { eps: f64 },
    Activation(Nonlinearity),
    MaskedFill { mask: Vec<bool>, value: f64 },
    /// Mean over rows per segment; an empty list pools the whole input.
    MeanPool { segments: Vec<Segment> },
    Attention(AttentionSpec),
    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    CrossEntropy { targets: Vec<usize> },
    Sum,
    Mean,
}

impl Primitive {
    pub fn matmul() -> Self {
        Primitive::MatMul { trans_a: false, trans_b: false }
    }

    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::MatMul { .. } => PrimitiveKind::MatMul,
            Primitive::Add => PrimitiveKind::Add,
            Primitive::Mul => PrimitiveKind::Mul,
            Primitive::Scale(_) => PrimitiveKind::Scale,
            Primitive::Concat { .. } => PrimitiveKind::Concat,
            Primitive::GatherRows { .. } => PrimitiveKind::GatherRows,
            Primitive::Softmax => PrimitiveKind::Softmax,
            Primitive::LogSoftmax => PrimitiveKind::LogSoftmax,
            Primitive::LayerNorm { .. } => PrimitiveKind::LayerNorm,
            Primitive::Activation(_) => PrimitiveKind::Activation,
            Primitive::MaskedFill { .. } => PrimitiveKind::MaskedFill,
            Primitive::MeanPool { .. } => PrimitiveKind::MeanPool,
            Primitive::Attention(_) => PrimitiveKind::Attention,
            Primitive::CrossEntropy { .. } => PrimitiveKind::CrossEntropy,
            Primitive::Sum => PrimitiveKind::Sum,
            Primitive::Mean => PrimitiveKind::Mean,
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul { .. } | Primitive::Add | Primitive::Mul => Some(2),
            Primitive::LayerNorm { .. } | Primitive::Attention(_) => Some(3),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Saved<T: Real> {
    None,
    LayerNorm { xhat: Vec<T>, rstd: Vec<f64> },
    Probs(Vec<T>),
}

enum Op<T: Real> {
    Leaf { param: Option<String> },
    Prim { prim: Primitive, saved: Saved<T> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// Gradients of trainable parameters, keyed by parameter name.
pub type Gradients<T = f32> = BTreeMap<String, Tensor<T>>;

/// Single-use computation tape.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    consumed: bool,
    inference: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), consumed: false, inference: false }
    }

    /// Tape on which no leaf requires a gradient, whatever its trainable flag.
    pub fn inference() -> Self {
        Self { inference: true, ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { param: None }, Vec::new(), false)
    }

    /// Leaf for a parameter. Repeated calls with the same name share one node.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        if let Some(&v) = self.params.get(&p.name) {
            return v;
        }
        let v = self.push(p.tensor.clone(), Op::Leaf { param: Some(p.name.clone()) }, Vec::new(), p.trainable && !self.inference);
        self.params.insert(p.name.clone(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<usize>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, inputs, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Runs `prim` on `inputs` and records it on the tape.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if let Some(n) = prim.arity() {
            if inputs.len() != n {
                return Err(shape_err(prim.kind(), format!("expected {n} inputs, got {}", inputs.len())));
            }
        }
        if inputs.is_empty() {
            return Err(shape_err(prim.kind(), "no inputs".into()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = forward(&prim, &vals, requires_grad)?;
        if !value.all_finite() {
            return Err(TensorError::NonFinite { node: self.nodes.len(), primitive: prim.kind().name() });
        }
        let ids = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Op::Prim { prim, saved }, ids, requires_grad))
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::matmul(), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.apply(Primitive::Concat { axis: 0 }, parts)
    }

    pub fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var, TensorError> {
        self.apply(Primitive::GatherRows { ids }, &[table])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        self.apply(Primitive::LayerNorm { eps: 1e-5 }, &[x, gamma, beta])
    }

    pub fn activation(&mut self, x: Var, f: Nonlinearity) -> Result<Var, TensorError> {
        self.apply(Primitive::Activation(f), &[x])
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var, TensorError> {
        self.apply(Primitive::CrossEntropy { targets }, &[logits])
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Reverse pass from a scalar `loss`. The tape is consumed.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param: Some(name) } => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    out.insert(name.clone(), t);
                }
                Op::Leaf { param: None } => {}
                Op::Prim { prim, saved } => {
                    let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                    let needs: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
                    let input_grads = backward_prim(prim, saved, &inputs, &node.value, &g, &needs)?;
                    for ((&input, needed), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                        if !needed {
                            continue;
                        }
                        let Some(ig) = ig else { continue };
                        match &mut grads[input] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a = *a + *b),
                            slot @ None => *slot = Some(ig),
                        }
                    }
                }
            }
            if idx != loss.0 {
                // Intermediate values are no longer needed once their gradient has flowed.
                if let Op::Prim { saved, .. } = &mut self.nodes[idx].op {
                    *saved = Saved::None;
                }
            }
        }
        self.nodes.clear();
        self.params.clear();
        Ok(out)
    }
}

fn shape_err(kind: PrimitiveKind, detail: String) -> TensorError {
    TensorError::ShapeMismatch { primitive: kind.name(), detail }
}

fn is_row_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    b.len() == a.cols() && b.rows() == 1 && a.shape() != b.shape()
}

fn binary_shapes<T: Real>(kind: PrimitiveKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<bool, TensorError> {
    if a.shape() == b.shape() {
        Ok(false)
    } else if is_row_broadcast(a, b) {
        Ok(true)
    } else {
        Err(shape_err(kind, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn op_dims<T: Real>(t: &Tensor<T>, trans: bool) -> (usize, usize, isize, isize) {
    let (r, c) = (t.rows(), t.cols());
    if trans {
        (c, r, 1, c as isize)
    } else {
        (r, c, c as isize, 1)
    }
}

fn forward<T: Real>(prim: &Primitive, x: &[&Tensor<T>], keep: bool) -> Result<(Tensor<T>, Saved<T>), TensorError> {
    let kind = prim.kind();
    match prim {
        Primitive::MatMul { trans_a, trans_b } => {
            let (a, b) = (x[0], x[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 {
                return Err(shape_err(kind, format!("operands must be 2-D: {:?}, {:?}", a.shape(), b.shape())));
            }
            let (m, k, rsa, csa) = op_dims(a, *trans_a);
            let (k2, n, rsb, csb) = op_dims(b, *trans_b);
            if k != k2 {
                return Err(shape_err(kind, format!("inner dims {k} vs {k2} ({:?} x {:?})", a.shape(), b.shape())));
            }
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, T::one(), a.data(), rsa, csa, b.data(), rsb, csb, T::zero(), &mut c, n as isize, 1);
            Ok((Tensor::new(vec![m, n], c)?, Saved::None))
        }
        Primitive::Add | Primitive::Mul => {
            let (a, b) = (x[0], x[1]);
            let bcast = binary_shapes(kind, a, b)?;
            let cols = a.cols();
            let bd = b.data();
            let is_add = matches!(prim, Primitive::Add);
            let mut data = Vec::with_capacity(a.len());
            for (i, ar) in a.data().chunks(cols).enumerate() {
                let br = if bcast { bd } else { &bd[i * cols..(i + 1) * cols] };
                if is_add {
                    data.extend(ar.iter().zip(br).map(|(&x, &y)| x + y));
                } else {
                    data.extend(ar.iter().zip(br).map(|(&x, &y)| x * y));
                }
            }
            Ok((Tensor::new(a.shape().to_vec(), data)?, Saved::None))
        }
        Primitive::Scale(s) => {
            let s = T::lit(*s);
            let data = x[0].data().iter().map(|&v| v * s).collect();
            Ok((Tensor::new(x[0].shape().to_vec(), data)?, Saved::None))
        }
        Primitive::Concat { axis } => concat_forward(kind, *axis, x).map(|t| (t, Saved::None)),
        Primitive::GatherRows { ids } => {
            let t = x[0];
            let (rows, cols) = (t.rows(), t.cols());
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &id in ids {
                if id >= rows {
                    return Err(shape_err(kind, format!("row index {id} out of range for {rows} rows")));
                }
                data.extend_from_slice(t.row(id));
            }
            Ok((Tensor::new(vec![ids.len(), cols], data)?, Saved::None))
        }
        Primitive::Softmax | Primitive::LogSoftmax => {
            let t = x[0];
            let cols = t.cols();
            let log = matches!(prim, Primitive::LogSoftmax);
            let mut out = vec![T::zero(); t.len()];
            for (r, o) in t.data().chunks(cols).zip(out.chunks_mut(cols)) {
                let max = r.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
                let sum: f64 = r.iter().map(|v| (v.as_f64() - max).exp()).sum();
                let lse = max + sum.ln();
                for (oi, v) in o.iter_mut().zip(r) {
                    *oi = if log { T::lit(v.as_f64() - lse) } else { T::lit((v.as_f64() - max).exp() / sum) };
                }
            }
            Ok((Tensor::new(t.shape().to_vec(), out)?, Saved::None))
        }
        Primitive::LayerNorm { eps } => {
            let (t, gamma, beta) = (x[0], x[1], x[2]);
            let cols = t.cols();
            if gamma.len() != cols || beta.len() != cols {
                return Err(shape_err(kind, format!("affine params {} / {} for width {cols}", gamma.len(), beta.len())));
            }
            let mut out = vec![T::zero(); t.len()];
            let mut xhat = if keep { vec![T::zero(); t.len()] } else { Vec::new() };
            let mut rstds = Vec::with_capacity(t.rows());
            for (r, row) in t.data().chunks(cols).enumerate() {
                let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / cols as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                rstds.push(rstd);
                for c in 0..cols {
                    let h = (row[c].as_f64() - mean) * rstd;
                    let i = r * cols + c;
                    out[i] = T::lit(h * gamma.data()[c].as_f64() + beta.data()[c].as_f64());
                    if keep {
                        xhat[i] = T::lit(h);
                    }
                }
            }
            let saved = if keep { Saved::LayerNorm { xhat, rstd: rstds } } else { Saved::None };
            Ok((Tensor::new(t.shape().to_vec(), out)?, saved))
        }
        Primitive::Activation(f) => {
            let data = x[0].data().iter().map(|&v| activate(*f, v)).collect();
            Ok((Tensor::new(x[0].shape().to_vec(), data)?, Saved::None))
        }
        Primitive::MaskedFill { mask, value } => {
            let t = x[0];
            if mask.len() != t.len() {
                return Err(shape_err(kind, format!("mask of {} for {} elements", mask.len(), t.len())));
            }
            let fill = T::lit(*value);
            let data = t.data().iter().zip(mask).map(|(&v, &m)| if m { fill } else { v }).collect();
            Ok((Tensor::new(t.shape().to_vec(), data)?, Saved::None))
        }
        Primitive::MeanPool { segments } => {
            let t = x[0];
            let cols = t.cols();
            let segs = pool_segments(kind, segments, t.rows())?;
            let mut out = vec![T::zero(); segs.len() * cols];
            for (s, seg) in segs.iter().enumerate() {
                for c in 0..cols {
                    let sum: f64 = (seg.start..seg.end()).map(|r| t.data()[r * cols + c].as_f64()).sum();
                    out[s * cols + c] = T::lit(sum / seg.len as f64);
                }
            }
            Ok((Tensor::new(vec![segs.len(), cols], out)?, Saved::None))
        }
        Primitive::Attention(spec) => {
            let (out, probs) = attention_forward(spec, x[0], x[1], x[2], keep)?;
            Ok((out, if keep { Saved::Probs(probs) } else { Saved::None }))
        }
        Primitive::CrossEntropy { targets } => {
            let t = x[0];
            let cols = t.cols();
            if targets.len() != t.rows() || targets.is_empty() {
                return Err(shape_err(kind, format!("{} targets for {} rows", targets.len(), t.rows())));
            }
            let mut probs = if keep { vec![T::zero(); t.len()] } else { Vec::new() };
            let mut total = 0.0f64;
            let mut exps = vec![T::zero(); cols];
            for (r, row) in t.data().chunks(cols).enumerate() {
                let target = targets[r];
                if target >= cols {
                    return Err(shape_err(kind, format!("target {target} out of range for {cols} classes")));
                }
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let ex = &mut exps[..cols];
                let mut sum = 0.0f64;
                for (e, &v) in ex.iter_mut().zip(row) {
                    *e = (v - max).exp();
                    sum += e.as_f64();
                }
                total += max.as_f64() + sum.ln() - row[target].as_f64();
                if keep {
                    let inv = T::lit(1.0 / sum);
                    for (p, &e) in probs[r * cols..(r + 1) * cols].iter_mut().zip(ex.iter()) {
                        *p = e * inv;
                    }
                }
            }
            let loss = Tensor::scalar(T::lit(total / targets.len() as f64));
            Ok((loss, if keep { Saved::Probs(probs) } else { Saved::None }))
        }
        Primitive::Sum | Primitive::Mean => {
            let t = x[0];
            let s: f64 = t.data().iter().map(|v| v.as_f64()).sum();
            let v = if matches!(prim, Primitive::Mean) { s / t.len().max(1) as f64 } else { s };
            Ok((Tensor::scalar(T::lit(v)), Saved::None))
        }
    }
}

fn concat_forward<T: Real>(kind: PrimitiveKind, axis: usize, x: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    match axis {
        0 => {
            let cols = x[0].cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for t in x {
                if t.cols() != cols {
                    return Err(shape_err(kind, format!("axis 0 needs equal widths, got {} and {}", cols, t.cols())));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows, cols], data)
        }
        1 => {
            let rows = x[0].rows();
            if let Some(t) = x.iter().find(|t| t.rows() != rows) {
                return Err(shape_err(kind, format!("axis 1 needs equal heights, got {} and {}", rows, t.rows())));
            }
            let cols: usize = x.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in x {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::new(vec![rows, cols], data)
        }
        _ => Err(shape_err(kind, format!("unsupported axis {axis}"))),
    }
}

fn pool_segments(kind: PrimitiveKind, segments: &[Segment], rows: usize) -> Result<Vec<Segment>, TensorError> {
    if segments.is_empty() {
        if rows == 0 {
            return Err(shape_err(kind, "cannot pool zero rows".into()));
        }
        return Ok(vec![Segment::new(0, rows)]);
    }
    for s in segments {
        if s.len == 0 || s.end() > rows {
            return Err(shape_err(kind, format!("segment {s:?} invalid for {rows} rows")));
        }
    }
    Ok(segments.to_vec())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

fn gelu_2u<T: Real>(v: T) -> T {
    let c = T::lit(2.0 * GELU_C);
    c * (v + T::lit(GELU_K) * v * v * v)
}

fn activate<T: Real>(f: Nonlinearity, v: T) -> T {
    match f {
        Nonlinearity::Relu => {
            if v > T::zero() {
                v
            } else {
                T::zero()
            }
        }
        Nonlinearity::Tanh => v.tanh(),
        // 0.5·x·(1 + tanh u) = x·sigmoid(2u)
        Nonlinearity::Gelu => v / (T::one() + (-gelu_2u(v)).exp()),
    }
}

fn activate_grad<T: Real>(f: Nonlinearity, v: T) -> T {
    match f {
        Nonlinearity::Relu => {
            if v > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Nonlinearity::Tanh => {
            let t = v.tanh();
            T::one() - t * t
        }
        Nonlinearity::Gelu => {
            let s = T::one() / (T::one() + (-gelu_2u(v)).exp());
            let c = T::lit(GELU_C);
            let d2u = (c + c) * (T::one() + T::lit(3.0 * GELU_K) * v * v);
            s + v * s * (T::one() - s) * d2u
        }
    }
}

type InputGrads<T> = Vec<Option<Vec<T>>>;

fn backward_prim<T: Real>(
    prim: &Primitive,
    saved: &Saved<T>,
    x: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &[T],
    needs: &[bool],
) -> Result<InputGrads<T>, TensorError> {
    let kind = prim.kind();
    Ok(match prim {
        Primitive::MatMul { trans_a, trans_b } => {
            let (a, b) = (x[0], x[1]);
            let (m, k, rsa, csa) = op_dims(a, *trans_a);
            let (_, n, rsb, csb) = op_dims(b, *trans_b);
            let ga = needs[0].then(|| {
                let mut da = vec![T::zero(); a.len()];
                let (rsc, csc) = if *trans_a { (1, a.cols() as isize) } else { (a.cols() as isize, 1) };
                T::gemm(m, n, k, T::one(), g, n as isize, 1, b.data(), csb, rsb, T::zero(), &mut da, rsc, csc);
                da
            });
            let gb = needs[1].then(|| {
                let mut db = vec![T::zero(); b.len()];
                let (rsc, csc) = if *trans_b { (1, b.cols() as isize) } else { (b.cols() as isize, 1) };
                T::gemm(k, m, n, T::one(), a.data(), csa, rsa, g, n as isize, 1, T::zero(), &mut db, rsc, csc);
                db
            });
            vec![ga, gb]
        }
        Primitive::Add | Primitive::Mul => {
            let (a, b) = (x[0], x[1]);
            let bcast = is_row_broadcast(a, b);
            let cols = a.cols();
            let is_add = matches!(prim, Primitive::Add);
            let ga = needs[0].then(|| {
                if is_add {
                    g.to_vec()
                } else {
                    let bd = b.data();
                    if bcast {
                        g.chunks(cols).flat_map(|gr| gr.iter().zip(bd).map(|(&gi, &bv)| gi * bv)).collect()
                    } else {
                        g.iter().zip(bd).map(|(&gi, &bv)| gi * bv).collect()
                    }
                }
            });
            let gb = needs[1].then(|| {
                let term: Vec<T> =
                    if is_add { g.to_vec() } else { g.iter().zip(a.data()).map(|(&gi, &av)| gi * av).collect() };
                if bcast {
                    let mut acc = vec![0.0f64; cols];
                    for row in term.chunks(cols) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v.as_f64();
                        }
                    }
                    acc.into_iter().map(T::lit).collect()
                } else {
                    term
                }
            });
            vec![ga, gb]
        }
        Primitive::Scale(s) => {
            let s = T::lit(*s);
            vec![Some(g.iter().map(|&v| v * s).collect())]
        }
        Primitive::Concat { axis } => {
            let mut grads = Vec::with_capacity(x.len());
            match axis {
                0 => {
                    let mut off = 0;
                    for (t, &need) in x.iter().zip(needs) {
                        grads.push(need.then(|| g[off..off + t.len()].to_vec()));
                        off += t.len();
                    }
                }
                _ => {
                    let total: usize = x.iter().map(|t| t.cols()).sum();
                    let mut col_off = 0;
                    for (t, &need) in x.iter().zip(needs) {
                        let c = t.cols();
                        grads.push(need.then(|| {
                            let mut v = Vec::with_capacity(t.len());
                            for r in 0..t.rows() {
                                v.extend_from_slice(&g[r * total + col_off..r * total + col_off + c]);
                            }
                            v
                        }));
                        col_off += c;
                    }
                }
            }
            grads
        }
        Primitive::GatherRows { ids } => {
            let t = x[0];
            let cols = t.cols();
            let mut dt = vec![T::zero(); t.len()];
            for (i, &id) in ids.iter().enumerate() {
                for c in 0..cols {
                    dt[id * cols + c] = dt[id * cols + c] + g[i * cols + c];
                }
            }
            vec![Some(dt)]
        }
        Primitive::Softmax => {
            let cols = out.cols();
            let mut dx = vec![T::zero(); out.len()];
            for ((y, gr), d) in out.data().chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                for c in 0..cols {
                    d[c] = T::lit(y[c].as_f64() * (gr[c].as_f64() - dot));
                }
            }
            vec![Some(dx)]
        }
        Primitive::LogSoftmax => {
            let cols = out.cols();
            let mut dx = vec![T::zero(); out.len()];
            for ((y, gr), d) in out.data().chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                let gsum: f64 = gr.iter().map(|v| v.as_f64()).sum();
                for c in 0..cols {
                    d[c] = T::lit(gr[c].as_f64() - y[c].as_f64().exp() * gsum);
                }
            }
            vec![Some(dx)]
        }
        Primitive::LayerNorm { .. } => {
            let Saved::LayerNorm { xhat, rstd } = saved else {
                return Err(shape_err(kind, "missing saved statistics".into()));
            };
            let gamma = x[1].data();
            let cols = x[0].cols();
            let rows = x[0].rows();
            let mut dx = needs[0].then(|| vec![T::zero(); x[0].len()]);
            let mut dgamma = vec![0.0f64; cols];
            let mut dbeta = vec![0.0f64; cols];
            for r in 0..rows {
                let base = r * cols;
                let mut mean_d = 0.0f64;
                let mut mean_dx = 0.0f64;
                for c in 0..cols {
                    let gi = g[base + c].as_f64();
                    let h = xhat[base + c].as_f64();
                    dgamma[c] += gi * h;
                    dbeta[c] += gi;
                    let dh = gi * gamma[c].as_f64();
                    mean_d += dh;
                    mean_dx += dh * h;
                }
                mean_d /= cols as f64;
                mean_dx /= cols as f64;
                if let Some(dx) = dx.as_mut() {
                    for c in 0..cols {
                        let dh = g[base + c].as_f64() * gamma[c].as_f64();
                        let h = xhat[base + c].as_f64();
                        dx[base + c] = T::lit(rstd[r] * (dh - mean_d - h * mean_dx));
                    }
                }
            }
            vec![
                dx,
                needs[1].then(|| dgamma.into_iter().map(T::lit).collect()),
                needs[2].then(|| dbeta.into_iter().map(T::lit).collect()),
            ]
        }
        Primitive::Activation(f) => {
            vec![Some(x[0].data().iter().zip(g).map(|(&v, &gi)| gi * activate_grad(*f, v)).collect())]
        }
        Primitive::MaskedFill { mask, .. } => {
            vec![Some(g.iter().zip(mask).map(|(&gi, &m)| if m { T::zero() } else { gi }).collect())]
        }
        Primitive::MeanPool { segments } => {
            let t = x[0];
            let cols = t.cols();
            let segs = pool_segments(kind, segments, t.rows())?;
            let mut dx = vec![T::zero(); t.len()];
            for (s, seg) in segs.iter().enumerate() {
                let inv = T::lit(1.0 / seg.len as f64);
                for r in seg.start..seg.end() {
                    for c in 0..cols {
                        dx[r * cols + c] = dx[r * cols + c] + g[s * cols + c] * inv;
                    }
                }
            }
            vec![Some(dx)]
        }
        Primitive::Attention(spec) => {
            let Saved::Probs(probs) = saved else {
                return Err(shape_err(kind, "missing saved probabilities".into()));
            };
            let (dq, dk, dv) = attention_backward(spec, x[0], x[1], x[2], probs, g, needs);
            vec![dq, dk, dv]
        }
        Primitive::CrossEntropy { targets } => {
            let Saved::Probs(probs) = saved else {
                return Err(shape_err(kind, "missing saved probabilities".into()));
            };
            let cols = x[0].cols();
            let scale = g[0].as_f64() / targets.len() as f64;
            let mut dx: Vec<T> = probs.iter().map(|&p| T::lit(p.as_f64() * scale)).collect();
            for (r, &t) in targets.iter().enumerate() {
                let i = r * cols + t;
                dx[i] = T::lit(dx[i].as_f64() - scale);
            }
            vec![Some(dx)]
        }
        Primitive::Sum => vec![Some(vec![g[0]; x[0].len()])],
        Primitive::Mean => {
            let v = T::lit(g[0].as_f64() / x[0].len().max(1) as f64);
            vec![Some(vec![v; x[0].len()])]
        }
    })
}
