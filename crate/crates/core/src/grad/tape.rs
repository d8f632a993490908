use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// Primitive operations understood by the tape.
///
/// Shapes are 2-D row-major unless noted; a 1-D tensor of length `k` is read
/// as a `1 × k` row. Broadcasting only exists between a one-element tensor and
/// a tensor (`ScaleBy`); every other coercion is explicit.
#[derive(Clone, Debug)]
pub enum Primitive {
    /// `[r × k] · [k × c] → [r × c]`
    MatMul,
    /// Elementwise, identical shapes.
    Add,
    Sub,
    Mul,
    AddScalar(f64),
    Scale(f64),
    /// `[x, s]` with `s` holding a single element: `s · x`.
    ScaleBy,
    Relu,
    Exp,
    Sqrt,
    Abs,
    /// `x^p` for a constant exponent; integral `p` in {2, 3} is evaluated by
    /// repeated multiplication so negative bases stay defined.
    Pow(f64),
    /// Concatenation along the last axis; all inputs share a row count.
    ConcatCols,
    SoftmaxRows,
    /// Training-mode batch normalization over rows, without affine terms.
    BatchNorm {
        eps: f64,
    },
    /// Normalization with frozen per-column statistics.
    BatchNormEval {
        mean: Arc<[f64]>,
        var: Arc<[f64]>,
        eps: f64,
    },
    SumAll,
    MeanAll,
    /// Axis 0 → `[1 × c]`, axis 1 → `[r × 1]`.
    SumAxis(usize),
    MeanAxis(usize),
    /// Reduces rows into `num_segments` buckets; `segments[i]` is the bucket of row `i`.
    /// Empty buckets produce zero rows.
    SegmentReduce {
        reduce: Reduce,
        segments: Arc<[usize]>,
        num_segments: usize,
    },
    /// Row selection `out[i] = x[idx[i]]`.
    GatherRows(Arc<[usize]>),
    /// `[w, x_1, …, x_K]` with `w` of length `K`: `Σ w_k x_k`.
    WeightedSum,
    /// Mean softmax cross-entropy of `[r × c]` logits against `r` class labels.
    CrossEntropy(Arc<[usize]>),
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Scale(_) => "scale",
            Primitive::ScaleBy => "scale_by",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Sqrt => "sqrt",
            Primitive::Abs => "abs",
            Primitive::Pow(_) => "pow",
            Primitive::ConcatCols => "concat_cols",
            Primitive::SoftmaxRows => "softmax_rows",
            Primitive::BatchNorm { .. } => "batch_norm",
            Primitive::BatchNormEval { .. } => "batch_norm_eval",
            Primitive::SumAll => "sum_all",
            Primitive::MeanAll => "mean_all",
            Primitive::SumAxis(_) => "sum_axis",
            Primitive::MeanAxis(_) => "mean_axis",
            Primitive::SegmentReduce { .. } => "segment_reduce",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::WeightedSum => "weighted_sum",
            Primitive::CrossEntropy(_) => "cross_entropy",
            Primitive::Reshape(_) => "reshape",
        }
    }
}

/// Per-column statistics of a training-mode batch norm, for running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Saved {
    None,
    Indices(Vec<usize>),
    Values(Vec<f64>),
    Norm { inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Entry {
    kind: Primitive,
    inputs: Vec<Var>,
    saved: Saved,
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    entry: Option<Entry>,
}

struct Output {
    shape: Vec<usize>,
    value: Vec<f64>,
    saved: Saved,
}

/// Topologically ordered record of primitive applications.
///
/// Every value lives in the tape arena; nodes downstream of a grad-requiring
/// leaf are marked differentiable and take part in [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Stores the gradient of `v` in `t.grad`, zeros if `v` received none.
    pub fn write_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        let g = self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        t.set_grad(g)
    }

    /// Adds the gradient of `v` to `t.grad`.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) {
        if let Some(g) = self.get(v) {
            t.accumulate_grad(g);
        }
    }
}

fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

fn mismatch(p: &Primitive, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch { primitive: p.name(), lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn map(x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    x.iter().map(|&v| f(v)).collect()
}

fn pow_const(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 3.0 {
        x * x * x
    } else if p == 1.0 {
        x
    } else {
        x.powf(p)
    }
}

fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn forward(kind: &Primitive, ins: &[(&[usize], &[f64])]) -> Result<Output> {
    let plain = |shape: Vec<usize>, value: Vec<f64>| Output { shape, value, saved: Saved::None };
    let arity = |n: usize| -> Result<()> {
        if ins.len() != n {
            return Err(Error::InvalidArgument(format!("{} takes {n} inputs, got {}", kind.name(), ins.len())));
        }
        Ok(())
    };
    match kind {
        Primitive::MatMul => {
            arity(2)?;
            let (sa, a) = ins[0];
            let (sb, b) = ins[1];
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(mismatch(kind, sa, sb));
            }
            Ok(plain(vec![sa[0], sb[1]], matmul(a, b, sa[0], sa[1], sb[1])))
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            arity(2)?;
            let (sa, a) = ins[0];
            let (sb, b) = ins[1];
            if sa != sb {
                return Err(mismatch(kind, sa, sb));
            }
            let value = match kind {
                Primitive::Add => a.iter().zip(b).map(|(x, y)| x + y).collect(),
                Primitive::Sub => a.iter().zip(b).map(|(x, y)| x - y).collect(),
                _ => a.iter().zip(b).map(|(x, y)| x * y).collect(),
            };
            Ok(plain(sa.to_vec(), value))
        }
        Primitive::AddScalar(c) => {
            arity(1)?;
            Ok(plain(ins[0].0.to_vec(), map(ins[0].1, |x| x + c)))
        }
        Primitive::Scale(c) => {
            arity(1)?;
            Ok(plain(ins[0].0.to_vec(), map(ins[0].1, |x| x * c)))
        }
        Primitive::ScaleBy => {
            arity(2)?;
            let (sx, x) = ins[0];
            let (ss, s) = ins[1];
            if s.len() != 1 {
                return Err(mismatch(kind, sx, ss));
            }
            let s = s[0];
            Ok(plain(sx.to_vec(), map(x, |v| v * s)))
        }
        Primitive::Relu => {
            arity(1)?;
            Ok(plain(ins[0].0.to_vec(), map(ins[0].1, |x| if x > 0.0 { x } else { 0.0 })))
        }
        Primitive::Exp => {
            arity(1)?;
            Ok(plain(ins[0].0.to_vec(), map(ins[0].1, f64::exp)))
        }
        Primitive::Sqrt => {
            arity(1)?;
            Ok(plain(ins[0].0.to_vec(), map(ins[0].1, f64::sqrt)))
        }
        Primitive::Abs => {
            arity(1)?;
            Ok(plain(ins[0].0.to_vec(), map(ins[0].1, f64::abs)))
        }
        Primitive::Pow(p) => {
            arity(1)?;
            Ok(plain(ins[0].0.to_vec(), map(ins[0].1, |x| pow_const(x, *p))))
        }
        Primitive::ConcatCols => {
            if ins.is_empty() {
                return Err(Error::InvalidArgument("concat_cols of nothing".into()));
            }
            let (r0, _) = as_matrix(ins[0].0);
            let mut widths = Vec::with_capacity(ins.len());
            for (s, _) in ins {
                let (r, c) = as_matrix(s);
                if r != r0 {
                    return Err(mismatch(kind, ins[0].0, s));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut value = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for ((_, x), &w) in ins.iter().zip(&widths) {
                    value.extend_from_slice(&x[i * w..(i + 1) * w]);
                }
            }
            Ok(plain(vec![r0, total], value))
        }
        Primitive::SoftmaxRows => {
            arity(1)?;
            let (s, x) = ins[0];
            let (r, c) = as_matrix(s);
            let mut value = vec![0.0; r * c];
            for i in 0..r {
                let row = &x[i * c..(i + 1) * c];
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let out = &mut value[i * c..(i + 1) * c];
                let mut z = 0.0;
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = (v - mx).exp();
                    z += *o;
                }
                out.iter_mut().for_each(|o| *o /= z);
            }
            Ok(plain(s.to_vec(), value))
        }
        Primitive::BatchNorm { eps } => {
            arity(1)?;
            let (s, x) = ins[0];
            let (r, c) = as_matrix(s);
            if r < 2 {
                return Err(Error::BatchTooSmall(r));
            }
            let (mean, var) = column_moments(x, r, c);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut value = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    value[i * c + j] = (x[i * c + j] - mean[j]) * inv_std[j];
                }
            }
            Ok(Output { shape: s.to_vec(), value, saved: Saved::Norm { inv_std } })
        }
        Primitive::BatchNormEval { mean, var, eps } => {
            arity(1)?;
            let (s, x) = ins[0];
            let (r, c) = as_matrix(s);
            if mean.len() != c || var.len() != c {
                return Err(mismatch(kind, s, &[mean.len()]));
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut value = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    value[i * c + j] = (x[i * c + j] - mean[j]) * inv_std[j];
                }
            }
            Ok(Output { shape: s.to_vec(), value, saved: Saved::Norm { inv_std } })
        }
        Primitive::SumAll => {
            arity(1)?;
            Ok(plain(vec![1], vec![ins[0].1.iter().sum()]))
        }
        Primitive::MeanAll => {
            arity(1)?;
            let x = ins[0].1;
            let mean = if x.is_empty() { 0.0 } else { x.iter().sum::<f64>() / x.len() as f64 };
            Ok(plain(vec![1], vec![mean]))
        }
        Primitive::SumAxis(axis) | Primitive::MeanAxis(axis) => {
            arity(1)?;
            let (s, x) = ins[0];
            let (r, c) = as_matrix(s);
            let mean = matches!(kind, Primitive::MeanAxis(_));
            match axis {
                0 => {
                    let mut out = vec![0.0; c];
                    for i in 0..r {
                        out.iter_mut().zip(&x[i * c..(i + 1) * c]).for_each(|(o, v)| *o += v);
                    }
                    if mean && r > 0 {
                        out.iter_mut().for_each(|o| *o /= r as f64);
                    }
                    Ok(plain(vec![1, c], out))
                }
                1 => {
                    let mut out: Vec<f64> = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
                    if mean && c > 0 {
                        out.iter_mut().for_each(|o| *o /= c as f64);
                    }
                    Ok(plain(vec![r, 1], out))
                }
                _ => Err(Error::InvalidArgument(format!("{}: axis {axis} on a matrix", kind.name()))),
            }
        }
        Primitive::SegmentReduce { reduce, segments, num_segments } => {
            arity(1)?;
            let (s, x) = ins[0];
            let (r, c) = as_matrix(s);
            if segments.len() != r {
                return Err(mismatch(kind, s, &[segments.len()]));
            }
            if let Some(&bad) = segments.iter().find(|&&id| id >= *num_segments) {
                return Err(Error::SegmentOutOfRange { id: bad, segments: *num_segments });
            }
            let n = *num_segments;
            let mut out = vec![0.0; n * c];
            match reduce {
                Reduce::Sum | Reduce::Mean => {
                    for (i, &sg) in segments.iter().enumerate() {
                        let orow = &mut out[sg * c..(sg + 1) * c];
                        orow.iter_mut().zip(&x[i * c..(i + 1) * c]).for_each(|(o, v)| *o += v);
                    }
                    if *reduce == Reduce::Mean {
                        let counts = segment_counts(segments, n);
                        for (sg, &cnt) in counts.iter().enumerate() {
                            if cnt > 0 {
                                let inv = cnt as f64;
                                out[sg * c..(sg + 1) * c].iter_mut().for_each(|o| *o /= inv);
                            }
                        }
                    }
                    Ok(plain(vec![n, c], out))
                }
                Reduce::Max => {
                    // argmax holds the winning row per (segment, column); usize::MAX marks empty.
                    let mut argmax = vec![usize::MAX; n * c];
                    for (i, &sg) in segments.iter().enumerate() {
                        for j in 0..c {
                            let slot = sg * c + j;
                            let v = x[i * c + j];
                            if argmax[slot] == usize::MAX || v > out[slot] {
                                out[slot] = v;
                                argmax[slot] = i;
                            }
                        }
                    }
                    Ok(Output { shape: vec![n, c], value: out, saved: Saved::Indices(argmax) })
                }
            }
        }
        Primitive::GatherRows(idx) => {
            arity(1)?;
            let (s, x) = ins[0];
            let (r, c) = as_matrix(s);
            let mut value = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                if i >= r {
                    return Err(Error::InvalidArgument(format!("gather_rows: row {i} out of range for {r} rows")));
                }
                value.extend_from_slice(&x[i * c..(i + 1) * c]);
            }
            Ok(plain(vec![idx.len(), c], value))
        }
        Primitive::WeightedSum => {
            if ins.len() < 2 {
                return Err(Error::InvalidArgument("weighted_sum needs weights and terms".into()));
            }
            let (sw, w) = ins[0];
            let terms = &ins[1..];
            if w.len() != terms.len() {
                return Err(mismatch(kind, sw, &[terms.len()]));
            }
            let shape = terms[0].0;
            let mut value = vec![0.0; terms[0].1.len()];
            for (&wk, (s, x)) in w.iter().zip(terms) {
                if *s != shape {
                    return Err(mismatch(kind, shape, s));
                }
                value.iter_mut().zip(x.iter()).for_each(|(o, v)| *o += wk * v);
            }
            Ok(plain(shape.to_vec(), value))
        }
        Primitive::CrossEntropy(labels) => {
            arity(1)?;
            let (s, x) = ins[0];
            let (r, c) = as_matrix(s);
            if labels.len() != r || r == 0 {
                return Err(mismatch(kind, s, &[labels.len()]));
            }
            let mut probs = vec![0.0; r * c];
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= c {
                    return Err(Error::InvalidArgument(format!("cross_entropy: label {y} with {c} classes")));
                }
                let row = &x[i * c..(i + 1) * c];
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                let lse = mx + z.ln();
                total += lse - row[y];
                for j in 0..c {
                    probs[i * c + j] = (row[j] - lse).exp();
                }
            }
            Ok(Output { shape: vec![1], value: vec![total / r as f64], saved: Saved::Values(probs) })
        }
        Primitive::Reshape(shape) => {
            arity(1)?;
            let numel: usize = shape.iter().product();
            if numel != ins[0].1.len() {
                return Err(mismatch(kind, ins[0].0, shape));
            }
            Ok(plain(shape.clone(), ins[0].1.to_vec()))
        }
    }
}

fn column_moments(x: &[f64], r: usize, c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; c];
    for i in 0..r {
        mean.iter_mut().zip(&x[i * c..(i + 1) * c]).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let mut var = vec![0.0; c];
    for i in 0..r {
        for j in 0..c {
            let d = x[i * c + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= r as f64);
    (mean, var)
}

fn segment_counts(segments: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n];
    for &s in segments {
        counts[s] += 1;
    }
    counts
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies `t` onto the tape. The leaf is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Moves `t` onto the tape as a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push_leaf(shape, t.into_data(), false)
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, requires_grad, entry: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    /// Evaluates `kind` on `inputs` and records the application.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let out = {
            let ins: Vec<(&[usize], &[f64])> = inputs
                .iter()
                .map(|v| {
                    let n = &self.nodes[v.0];
                    (n.shape.as_slice(), n.value.as_slice())
                })
                .collect();
            forward(&kind, &ins)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let saved = if requires_grad { out.saved } else { Saved::None };
        self.nodes.push(Node {
            shape: out.shape,
            value: out.value,
            requires_grad,
            entry: Some(Entry { kind, inputs: inputs.to_vec(), saved }),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Recomputes every recorded application from the leaves and reports
    /// whether all values reproduce bit-exactly.
    pub fn replay_matches(&self) -> Result<bool> {
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.entry {
                None => node.value.clone(),
                Some(e) => {
                    let ins: Vec<(&[usize], &[f64])> =
                        e.inputs.iter().map(|v| (self.nodes[v.0].shape.as_slice(), values[v.0].as_slice())).collect();
                    forward(&e.kind, &ins)?.value
                }
            };
            values.push(value);
        }
        Ok(values
            .iter()
            .zip(&self.nodes)
            .all(|(a, n)| a.len() == n.value.len() && a.iter().zip(&n.value).all(|(x, y)| x.to_bits() == y.to_bits())))
    }

    /// Reverse sweep from a scalar `loss`; consumes the tape and returns the
    /// gradient of every differentiable leaf.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(entry) = &node.entry else { continue };
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            let wanted: Vec<bool> = entry.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = self.vjp(node, entry, &g, &wanted);
            for ((v, ig), want) in entry.inputs.iter().zip(input_grads).zip(wanted) {
                let Some(ig) = ig else { continue };
                if !want {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node, entry: &Entry, g: &[f64], want: &[bool]) -> Vec<Option<Vec<f64>>> {
        let input = |k: usize| &self.nodes[entry.inputs[k].0];
        match &entry.kind {
            Primitive::MatMul => {
                let a = input(0);
                let b = input(1);
                let (r, k, c) = (a.shape[0], a.shape[1], b.shape[1]);
                let da = want[0].then(|| {
                    let mut da = vec![0.0; r * k];
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for kk in 0..k {
                            let brow = &b.value[kk * c..(kk + 1) * c];
                            da[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    da
                });
                let db = want[1].then(|| {
                    let mut db = vec![0.0; k * c];
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for (kk, &av) in a.value[i * k..(i + 1) * k].iter().enumerate() {
                            if av == 0.0 {
                                continue;
                            }
                            db[kk * c..(kk + 1) * c].iter_mut().zip(grow).for_each(|(d, gv)| *d += av * gv);
                        }
                    }
                    db
                });
                vec![da, db]
            }
            Primitive::Add => vec![want[0].then(|| g.to_vec()), want[1].then(|| g.to_vec())],
            Primitive::Sub => vec![want[0].then(|| g.to_vec()), want[1].then(|| map(g, |x| -x))],
            Primitive::Mul => {
                let a = &input(0).value;
                let b = &input(1).value;
                vec![
                    want[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    want[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            Primitive::AddScalar(_) | Primitive::Reshape(_) => vec![Some(g.to_vec())],
            Primitive::Scale(c) => vec![Some(map(g, |x| x * c))],
            Primitive::ScaleBy => {
                let x = &input(0).value;
                let s = input(1).value[0];
                vec![
                    want[0].then(|| map(g, |v| v * s)),
                    want[1].then(|| vec![g.iter().zip(x).map(|(g, x)| g * x).sum()]),
                ]
            }
            Primitive::Relu => {
                let x = &input(0).value;
                vec![Some(g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
            }
            Primitive::Exp => vec![Some(g.iter().zip(&node.value).map(|(g, y)| g * y).collect())],
            Primitive::Sqrt => {
                vec![Some(g.iter().zip(&node.value).map(|(g, y)| g * 0.5 / y).collect())]
            }
            Primitive::Abs => {
                let x = &input(0).value;
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )]
            }
            Primitive::Pow(p) => {
                let x = &input(0).value;
                vec![Some(g.iter().zip(x).map(|(g, &x)| g * p * pow_const(x, p - 1.0)).collect())]
            }
            Primitive::ConcatCols => {
                let (r, total) = as_matrix(&node.shape);
                let mut offset = 0;
                let mut out = Vec::with_capacity(entry.inputs.len());
                for (k, v) in entry.inputs.iter().enumerate() {
                    let (_, w) = as_matrix(&self.nodes[v.0].shape);
                    out.push(want[k].then(|| {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        d
                    }));
                    offset += w;
                }
                out
            }
            Primitive::SoftmaxRows => {
                let (r, c) = as_matrix(&node.shape);
                let s = &node.value;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let range = i * c..(i + 1) * c;
                    let dot: f64 = g[range.clone()].iter().zip(&s[range.clone()]).map(|(a, b)| a * b).sum();
                    for j in range {
                        dx[j] = s[j] * (g[j] - dot);
                    }
                }
                vec![Some(dx)]
            }
            Primitive::BatchNorm { .. } => {
                let Saved::Norm { inv_std } = &entry.saved else { unreachable!() };
                let (r, c) = as_matrix(&node.shape);
                let xhat = &node.value;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        sum_g[j] += g[i * c + j];
                        sum_gx[j] += g[i * c + j] * xhat[i * c + j];
                    }
                }
                let rf = r as f64;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let k = i * c + j;
                        dx[k] = inv_std[j] / rf * (rf * g[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                    }
                }
                vec![Some(dx)]
            }
            Primitive::BatchNormEval { .. } => {
                let Saved::Norm { inv_std } = &entry.saved else { unreachable!() };
                let (_, c) = as_matrix(&node.shape);
                vec![Some(g.iter().enumerate().map(|(k, g)| g * inv_std[k % c]).collect())]
            }
            Primitive::SumAll => vec![Some(vec![g[0]; input(0).value.len()])],
            Primitive::MeanAll => {
                let n = input(0).value.len().max(1) as f64;
                vec![Some(vec![g[0] / n; input(0).value.len()])]
            }
            Primitive::SumAxis(axis) | Primitive::MeanAxis(axis) => {
                let (r, c) = as_matrix(&input(0).shape);
                let mean = matches!(entry.kind, Primitive::MeanAxis(_));
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = if *axis == 0 {
                            if mean {
                                g[j] / r as f64
                            } else {
                                g[j]
                            }
                        } else if mean {
                            g[i] / c as f64
                        } else {
                            g[i]
                        };
                    }
                }
                vec![Some(dx)]
            }
            Primitive::SegmentReduce { reduce, segments, num_segments } => {
                let (r, c) = as_matrix(&input(0).shape);
                let mut dx = vec![0.0; r * c];
                match reduce {
                    Reduce::Sum => {
                        for (i, &sg) in segments.iter().enumerate() {
                            dx[i * c..(i + 1) * c].copy_from_slice(&g[sg * c..(sg + 1) * c]);
                        }
                    }
                    Reduce::Mean => {
                        let counts = segment_counts(segments, *num_segments);
                        for (i, &sg) in segments.iter().enumerate() {
                            let inv = counts[sg] as f64;
                            for j in 0..c {
                                dx[i * c + j] = g[sg * c + j] / inv;
                            }
                        }
                    }
                    Reduce::Max => {
                        let Saved::Indices(argmax) = &entry.saved else { unreachable!() };
                        for (slot, &row) in argmax.iter().enumerate() {
                            if row != usize::MAX {
                                dx[row * c + slot % c] += g[slot];
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }
            Primitive::GatherRows(idx) => {
                let (r, c) = as_matrix(&input(0).shape);
                let mut dx = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    dx[i * c..(i + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]).for_each(|(d, gv)| *d += gv);
                }
                vec![Some(dx)]
            }
            Primitive::WeightedSum => {
                let w = &input(0).value;
                let mut out = Vec::with_capacity(entry.inputs.len());
                out.push(want[0].then(|| {
                    entry.inputs[1..]
                        .iter()
                        .map(|v| self.nodes[v.0].value.iter().zip(g).map(|(x, g)| x * g).sum())
                        .collect()
                }));
                for (k, &wk) in w.iter().enumerate() {
                    out.push(want[k + 1].then(|| map(g, |v| v * wk)));
                }
                out
            }
            Primitive::CrossEntropy(labels) => {
                let Saved::Values(probs) = &entry.saved else { unreachable!() };
                let (r, c) = as_matrix(&input(0).shape);
                let scale = g[0] / r as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    dx[i * c + y] -= scale;
                }
                vec![Some(dx)]
            }
        }
    }

    // Thin wrappers over `apply`.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::AddScalar(c), &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[x])
    }

    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.apply(Primitive::ScaleBy, &[x, s])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sqrt, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Abs, &[x])
    }

    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var> {
        self.apply(Primitive::Pow(p), &[x])
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatCols, xs)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::SoftmaxRows, &[x])
    }

    /// Training-mode batch norm; also returns the batch statistics for
    /// running-average updates.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let out = self.apply(Primitive::BatchNorm { eps }, &[x])?;
        let (r, c) = as_matrix(self.shape(x));
        let (mean, mut var) = column_moments(self.value(x), r, c);
        let unbias = r as f64 / (r as f64 - 1.0);
        var.iter_mut().for_each(|v| *v *= unbias);
        Ok((out, BatchStats { mean, var }))
    }

    pub fn batch_norm_eval(&mut self, x: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        self.apply(Primitive::BatchNormEval { mean: mean.into(), var: var.into(), eps }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::SumAll, &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::MeanAll, &[x])
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::SumAxis(axis), &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::MeanAxis(axis), &[x])
    }

    pub fn segment_reduce(
        &mut self,
        x: Var,
        reduce: Reduce,
        segments: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var> {
        self.apply(Primitive::SegmentReduce { reduce, segments, num_segments }, &[x])
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        self.apply(Primitive::GatherRows(idx), &[x])
    }

    pub fn weighted_sum(&mut self, weights: Var, terms: &[Var]) -> Result<Var> {
        let mut inputs = Vec::with_capacity(terms.len() + 1);
        inputs.push(weights);
        inputs.extend_from_slice(terms);
        self.apply(Primitive::WeightedSum, &inputs)
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        self.apply(Primitive::CrossEntropy(labels), &[logits])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Reshape(shape), &[x])
    }
}
