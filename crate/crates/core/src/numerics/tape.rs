//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends one node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse insertion order, so gradient accumulation
//! order is fixed by the order the forward pass was recorded in.
//!
//! ```
//! use conure::numerics::{Tape, Tensor};
//!
//! let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
//! let mut tape = Tape::new();
//! let v = tape.param("x", &x);
//! let r = tape.relu(v);
//! let loss = tape.sum(r);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.param("x").unwrap(), &[1.0, 0.0, 1.0]);
//! ```

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaskMultiply {
        input: Var,
        mask: Cow<'a, [f64]>,
    },
    StopGradientExcept {
        input: Var,
        trainable: Cow<'a, [bool]>,
    },
    CausalConv {
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SelectRow {
        input: Var,
        row: usize,
    },
    Gather {
        input: Var,
        ids: Vec<usize>,
    },
    GatherColumns {
        input: Var,
        ids: Vec<usize>,
    },
    CausalSoftmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    LogSigmoid(Var),
    Sum(Var),
    SumSquares(Var),
}

impl Op<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Relu(..) => "relu",
            Op::Scale(..) => "scale",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Embedding { .. } => "embedding_lookup",
            Op::MaskMultiply { .. } => "elementwise_mask_multiply",
            Op::StopGradientExcept { .. } => "stop_gradient_except",
            Op::CausalConv { .. } => "causal_dilated_conv1d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SelectRow { .. } => "select_row",
            Op::Gather { .. } => "gather",
            Op::GatherColumns { .. } => "gather_columns",
            Op::CausalSoftmax(..) => "causal_softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Sum(..) => "sum",
            Op::SumSquares(..) => "sum_squares",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
    requires_grad: bool,
    name: Option<String>,
}

/// Record of forward operations. Values borrowed from parameter storage
/// are not copied.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op kind of every recorded node, in recording order.
    pub fn op_kinds(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool, name: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    /// Named trainable leaf borrowing its value.
    pub fn param(&mut self, name: &str, value: &'a Tensor) -> Var {
        self.leaf(Cow::Borrowed(value), true, Some(name.to_string()))
    }

    /// Unnamed trainable leaf, mostly useful for differentiating w.r.t. inputs.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(Cow::Owned(value), true, None)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(Cow::Owned(value), false, None)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.leaf(Cow::Borrowed(value), false, None)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", "inner", k, k2));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &w) in orow.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim("add", "shape", self.value(a).len(), self.value(b).len()));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// `a[i, j] + bias[j]` for `a: [m × n]`, `bias: [n]`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_row_bias")?;
        if self.value(bias).len() != n {
            return Err(Error::dim("add_row_bias", "cols", n, self.value(bias).len()));
        }
        let bv = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRowBias(a, bias), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("transpose")?;
        let av = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Rows of `table: [V × f]` selected by `ids`, giving `[ids.len() × f]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, f) = self.value(table).dims2("embedding_lookup")?;
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * f);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Vocabulary { id, bound: vocab });
            }
            data.extend_from_slice(&tv[id * f..(id + 1) * f]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), f], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise product with a constant mask.
    pub fn mask_multiply(&mut self, a: Var, mask: Cow<'a, [f64]>) -> Result<Var> {
        let v = self.value(a);
        if mask.len() != v.len() {
            return Err(Error::dim("elementwise_mask_multiply", "len", v.len(), mask.len()));
        }
        let data = v.data().iter().zip(mask.iter()).map(|(x, m)| x * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::MaskMultiply { input: a, mask }, rg))
    }

    /// Identity in the forward pass; in the backward pass only elements
    /// flagged in `trainable` pass their gradient through.
    pub fn stop_gradient_except(&mut self, a: Var, trainable: Cow<'a, [bool]>) -> Result<Var> {
        let v = self.value(a);
        if trainable.len() != v.len() {
            return Err(Error::dim("stop_gradient_except", "len", v.len(), trainable.len()));
        }
        let t = v.clone();
        let rg = self.rg(&[a]) && trainable.iter().any(|&b| b);
        Ok(self.push(t, Op::StopGradientExcept { input: a, trainable }, rg))
    }

    /// Causal dilated 1-D convolution. `input: [n × f_in]`,
    /// `kernel: [k × f_in × f_out]`, `bias: [f_out]`. The input is
    /// implicitly left-padded with `(k − 1)·dilation` zero rows, so output
    /// row `t` reads input rows `t − (k − 1 − j)·dilation` for taps `j`.
    pub fn causal_conv1d(&mut self, input: Var, kernel: Var, bias: Var, dilation: usize) -> Result<Var> {
        const OP: &str = "causal_dilated_conv1d";
        if dilation == 0 {
            return Err(Error::Contract("dilation must be positive".into()));
        }
        let (n, f_in) = self.value(input).dims2(OP)?;
        let &[k, kf_in, f_out] = self.value(kernel).shape() else {
            return Err(Error::dim(OP, "kernel rank", 3, self.value(kernel).rank()));
        };
        if k == 0 {
            return Err(Error::dim(OP, "kernel width", 1, 0));
        }
        if kf_in != f_in {
            return Err(Error::dim(OP, "input channels", kf_in, f_in));
        }
        if self.value(bias).len() != f_out {
            return Err(Error::dim(OP, "output channels", f_out, self.value(bias).len()));
        }
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; n * f_out];
        for t in 0..n {
            let orow = &mut out[t * f_out..(t + 1) * f_out];
            orow.copy_from_slice(b);
            for j in 0..k {
                let back = (k - 1 - j) * dilation;
                if back > t {
                    continue;
                }
                let src = &x[(t - back) * f_in..(t - back + 1) * f_in];
                for (i, &xv) in src.iter().enumerate() {
                    let wrow = &w[(j * f_in + i) * f_out..(j * f_in + i + 1) * f_out];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            Tensor::new(vec![n, f_out], out)?,
            Op::CausalConv {
                input,
                kernel,
                bias,
                dilation,
            },
            rg,
        ))
    }

    /// Row-wise `gain ⊙ (x − mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, f) = self.value(input).dims2("layer_norm")?;
        if f == 0 {
            return Err(Error::EmptyFeature("layer_norm"));
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm epsilon must be positive".into()));
        }
        if self.value(gain).len() != f {
            return Err(Error::dim("layer_norm", "gain", f, self.value(gain).len()));
        }
        if self.value(bias).len() != f {
            return Err(Error::dim("layer_norm", "bias", f, self.value(bias).len()));
        }
        let x = self.value(input).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![0.0; n * f];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            let row = &x[r * f..(r + 1) * f];
            let mean = row.iter().sum::<f64>() / f as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..f {
                let xh = (row[c] - mean) * is;
                normalized[r * f + c] = xh;
                out[r * f + c] = g[c] * xh + b[c];
            }
        }
        let rg = self.rg(&[input, gain, bias]);
        Ok(self.push(
            Tensor::new(vec![n, f], out)?,
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Row `row` of a rank-2 tensor as a vector.
    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (m, _) = self.value(a).dims2("select_row")?;
        if row >= m {
            return Err(Error::dim("select_row", "row", m, row));
        }
        let t = Tensor::vector(self.value(a).row(row).to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SelectRow { input: a, row }, rg))
    }

    /// Elements of a vector selected by `ids`.
    pub fn gather(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if v.rank() != 1 {
            return Err(Error::dim("gather", "rank", 1, v.rank()));
        }
        let mut data = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= v.len() {
                return Err(Error::Vocabulary { id, bound: v.len() });
            }
            data.push(v.data()[id]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(data), Op::Gather { input: a, ids: ids.to_vec() }, rg))
    }

    /// Columns of `a: [f × V]` selected by `ids`, giving `[f × ids.len()]`.
    pub fn gather_columns(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let (f, cols) = self.value(a).dims2("gather_columns")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= cols) {
            return Err(Error::Vocabulary { id: bad, bound: cols });
        }
        let av = self.value(a).data();
        let m = ids.len();
        let mut data = vec![0.0; f * m];
        for r in 0..f {
            for (c, &id) in ids.iter().enumerate() {
                data[r * m + c] = av[r * cols + id];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![f, m], data)?,
            Op::GatherColumns {
                input: a,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise softmax of a square matrix where entry `(i, j)` with `j > i`
    /// is masked out.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2("causal_softmax")?;
        if n != m {
            return Err(Error::dim("causal_softmax", "cols", n, m));
        }
        let av = self.value(a).data();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let row = &av[i * n..i * n + i + 1];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..=i {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..=i {
                out[i * n + j] /= z;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![n, n], out)?, Op::CausalSoftmax(a), rg))
    }

    /// Mean negative log-likelihood of `targets` under a row-wise softmax of
    /// `logits: [n × c]`. Rows whose target is `None` are skipped. When
    /// `allowed` is given (`[n × c]`), disallowed columns are excluded from
    /// that row's normalisation.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let (n, c) = self.value(logits).dims2(OP)?;
        if targets.len() != n {
            return Err(Error::dim(OP, "rows", n, targets.len()));
        }
        if let Some(mask) = allowed {
            if mask.len() != n * c {
                return Err(Error::dim(OP, "allowed", n * c, mask.len()));
            }
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= c {
                return Err(Error::Vocabulary { id: t, bound: c });
            }
            let ok = |j: usize| allowed.is_none_or(|m| m[r * c + j]);
            if !ok(t) {
                return Err(Error::Contract(format!("target column {t} is excluded in row {r}")));
            }
            let row = &lv[r * c..(r + 1) * c];
            let max = (0..c).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in (0..c).filter(|&j| ok(j)) {
                let e = (row[j] - max).exp();
                probs[r * c + j] = e;
                z += e;
            }
            for j in 0..c {
                probs[r * c + j] /= z;
            }
            total += z.ln() - (row[t] - max);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Contract("softmax_cross_entropy needs at least one target".into()));
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Elementwise `log σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = v
            .data()
            .iter()
            .map(|&x| x.min(0.0) - (-x.abs()).exp().ln_1p())
            .collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::LogSigmoid(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    /// Sum of scalars, accumulated left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Contract("add_all needs at least one term".into()))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse pass from a scalar `loss`. Only leaves that require gradients
    /// appear in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, g, &mut grads, &mut leaves[idx]);
        }
        let mut names = BTreeMap::new();
        let mut shapes = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            shapes.push(node.value.shape().to_vec());
            if let (Some(name), true) = (&node.name, node.requires_grad) {
                names.insert(name.clone(), Var(i));
                if leaves[i].is_none() {
                    leaves[i] = Some(vec![0.0; node.value.len()]);
                }
            }
        }
        Ok(Gradients {
            leaves,
            shapes,
            names,
        })
    }

    fn propagate(&self, node: &Node<'a>, g: Vec<f64>, grads: &mut [Option<Vec<f64>>], leaf: &mut Option<Vec<f64>>) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => *leaf = Some(g),
            Op::MatMul(a, b) => {
                let (m, k) = dims(&self.nodes[a.0].value);
                let n = self.nodes[b.0].value.shape()[1];
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, *a, m * k, |ga| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                ga[i * k + p] += dot(grow, brow);
                            }
                        }
                    });
                }
                if wants(*b) {
                    accumulate(grads, *b, k * n, |gb| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, g.len(), |gv| add_into(gv, &g));
                    }
                }
            }
            Op::AddRowBias(a, bias) => {
                let n = self.nodes[bias.0].value.len();
                if wants(*a) {
                    accumulate(grads, *a, g.len(), |ga| add_into(ga, &g));
                }
                if wants(*bias) {
                    accumulate(grads, *bias, n, |gb| {
                        for row in g.chunks(n) {
                            add_into(gb, row);
                        }
                    });
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                accumulate(grads, *a, g.len(), |ga| {
                    for ((o, &gv), &xv) in ga.iter_mut().zip(&g).zip(x) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, g.len(), |ga| {
                    for (o, gv) in ga.iter_mut().zip(&g) {
                        *o += gv * c;
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = dims(&self.nodes[a.0].value);
                accumulate(grads, *a, m * n, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => accumulate(grads, *a, g.len(), |ga| add_into(ga, &g)),
            Op::Embedding { table, ids } => {
                let (vocab, f) = dims(&self.nodes[table.0].value);
                accumulate(grads, *table, vocab * f, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * f..(id + 1) * f], &g[r * f..(r + 1) * f]);
                    }
                });
            }
            Op::MaskMultiply { input, mask } => {
                accumulate(grads, *input, g.len(), |ga| {
                    for ((o, gv), m) in ga.iter_mut().zip(&g).zip(mask.iter()) {
                        *o += gv * m;
                    }
                });
            }
            Op::StopGradientExcept { input, trainable } => {
                accumulate(grads, *input, g.len(), |ga| {
                    for ((o, gv), &t) in ga.iter_mut().zip(&g).zip(trainable.iter()) {
                        if t {
                            *o += gv;
                        }
                    }
                });
            }
            Op::CausalConv {
                input,
                kernel,
                bias,
                dilation,
            } => {
                let (n, f_in) = dims(&self.nodes[input.0].value);
                let k = self.nodes[kernel.0].value.shape()[0];
                let f_out = self.nodes[bias.0].value.len();
                let (x, w) = (val(*input), val(*kernel));
                if wants(*input) {
                    accumulate(grads, *input, n * f_in, |gx| {
                        for t in 0..n {
                            let grow = &g[t * f_out..(t + 1) * f_out];
                            for j in 0..k {
                                let back = (k - 1 - j) * dilation;
                                if back > t {
                                    continue;
                                }
                                let src = t - back;
                                for i in 0..f_in {
                                    let wrow = &w[(j * f_in + i) * f_out..(j * f_in + i + 1) * f_out];
                                    gx[src * f_in + i] += dot(grow, wrow);
                                }
                            }
                        }
                    });
                }
                if wants(*kernel) {
                    accumulate(grads, *kernel, k * f_in * f_out, |gw| {
                        for t in 0..n {
                            let grow = &g[t * f_out..(t + 1) * f_out];
                            for j in 0..k {
                                let back = (k - 1 - j) * dilation;
                                if back > t {
                                    continue;
                                }
                                let src = &x[(t - back) * f_in..(t - back + 1) * f_in];
                                for (i, &xv) in src.iter().enumerate() {
                                    let base = (j * f_in + i) * f_out;
                                    for (o, &gv) in gw[base..base + f_out].iter_mut().zip(grow) {
                                        *o += xv * gv;
                                    }
                                }
                            }
                        }
                    });
                }
                if wants(*bias) {
                    accumulate(grads, *bias, f_out, |gb| {
                        for row in g.chunks(f_out) {
                            add_into(gb, row);
                        }
                    });
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let f = self.nodes[gain.0].value.len();
                let gv = val(*gain);
                if wants(*input) {
                    accumulate(grads, *input, g.len(), |gx| {
                        for (r, &is) in inv_std.iter().enumerate() {
                            let grow = &g[r * f..(r + 1) * f];
                            let xh = &normalized[r * f..(r + 1) * f];
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for c in 0..f {
                                let d = grow[c] * gv[c];
                                mean_d += d;
                                mean_dx += d * xh[c];
                            }
                            mean_d /= f as f64;
                            mean_dx /= f as f64;
                            for c in 0..f {
                                let d = grow[c] * gv[c];
                                gx[r * f + c] += is * (d - mean_d - xh[c] * mean_dx);
                            }
                        }
                    });
                }
                if wants(*gain) {
                    accumulate(grads, *gain, f, |gg| {
                        for (grow, xh) in g.chunks(f).zip(normalized.chunks(f)) {
                            for c in 0..f {
                                gg[c] += grow[c] * xh[c];
                            }
                        }
                    });
                }
                if wants(*bias) {
                    accumulate(grads, *bias, f, |gb| {
                        for row in g.chunks(f) {
                            add_into(gb, row);
                        }
                    });
                }
            }
            Op::SelectRow { input, row } => {
                let len = self.nodes[input.0].value.len();
                let f = g.len();
                accumulate(grads, *input, len, |ga| add_into(&mut ga[row * f..(row + 1) * f], &g));
            }
            Op::Gather { input, ids } => {
                let len = self.nodes[input.0].value.len();
                accumulate(grads, *input, len, |ga| {
                    for (&id, gv) in ids.iter().zip(&g) {
                        ga[id] += gv;
                    }
                });
            }
            Op::GatherColumns { input, ids } => {
                let (f, cols) = dims(&self.nodes[input.0].value);
                let m = ids.len();
                accumulate(grads, *input, f * cols, |ga| {
                    for r in 0..f {
                        for (c, &id) in ids.iter().enumerate() {
                            ga[r * cols + id] += g[r * m + c];
                        }
                    }
                });
            }
            Op::CausalSoftmax(a) => {
                let y = node.value.data();
                let n = node.value.shape()[0];
                accumulate(grads, *a, n * n, |ga| {
                    for i in 0..n {
                        let yr = &y[i * n..i * n + i + 1];
                        let gr = &g[i * n..i * n + i + 1];
                        let s = dot(yr, gr);
                        for j in 0..=i {
                            ga[i * n + j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = self.nodes[logits.0].value.shape()[1];
                let scale = g[0] / *count as f64;
                accumulate(grads, *logits, probs.len(), |gl| {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        for j in 0..c {
                            gl[r * c + j] += scale * probs[r * c + j];
                        }
                        gl[r * c + t] -= scale;
                    }
                });
            }
            Op::LogSigmoid(a) => {
                let x = val(*a);
                accumulate(grads, *a, g.len(), |ga| {
                    for ((o, gv), &xv) in ga.iter_mut().zip(&g).zip(x) {
                        // d/dx log σ(x) = σ(−x)
                        let s = if xv >= 0.0 {
                            let e = (-xv).exp();
                            e / (1.0 + e)
                        } else {
                            1.0 / (1.0 + xv.exp())
                        };
                        *o += gv * s;
                    }
                });
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                accumulate(grads, *a, len, |ga| {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                });
            }
            Op::SumSquares(a) => {
                let x = val(*a);
                accumulate(grads, *a, x.len(), |ga| {
                    for (o, &xv) in ga.iter_mut().zip(x) {
                        *o += 2.0 * xv * g[0];
                    }
                });
            }
        }
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    (s[0], s[1])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    leaves: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    names: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when it does not require gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(v.0)?.as_deref()
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.get(*self.names.get(name)?)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.names.keys().map(String::as_str)
    }

    /// Named gradients as tensors, keyed by parameter name.
    pub fn into_named(mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, v) in std::mem::take(&mut self.names) {
            if let Some(g) = self.leaves[v.0].take() {
                let t = Tensor::new(self.shapes[v.0].clone(), g).expect("gradient matches leaf shape");
                out.insert(name, t);
            }
        }
        out
    }
}
