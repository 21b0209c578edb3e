//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Each operation evaluates eagerly at record time; `backward` replays the
//! tape in exact reverse order, accumulating vector-Jacobian products into
//! any `param` leaves. Accumulation order is the recording order, so two
//! runs with identical inputs produce bitwise-identical gradients.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    MulElem(Var, Var),
    Sin(Var),
    Gelu(Var),
    Softmax(Var, usize),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    Conv1d { x: Var, kernel: Var, stride: usize, padding: usize },
    Sum(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize, end: usize },
    SliceCols { x: Var, start: usize, end: usize },
    PadRows { x: Var },
    Reshape(Var),
    Embed { table: Var, ids: Vec<u32> },
    CrossEntropy { logits: Var, labels: Vec<u8> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients keyed by parameter path, in sorted path order.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_path: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn from_map(by_path: BTreeMap<String, Tensor>) -> Self {
        Gradients { by_path }
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.by_path.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_path.iter()
    }

    pub fn len(&self) -> usize {
        self.by_path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_path.is_empty()
    }

    /// `self += other`, elementwise per path. Paths must match.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (path, g) in &other.by_path {
            match self.by_path.get_mut(path) {
                Some(acc) => {
                    if acc.shape() != g.shape() {
                        return Err(Error::Contract(format!(
                            "gradient shape mismatch for {path}"
                        )));
                    }
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_path.insert(path.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    /// Scale every gradient in place.
    pub fn scale(&mut self, c: f64) {
        for g in self.by_path.values_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }
}

/// Recorded forward tape. Confine one graph to one logical thread.
pub struct Graph {
    nodes: Vec<Node>,
    bound_paths: HashSet<String>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), bound_paths: HashSet::new() }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Record a constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Record a trainable parameter under a unique path.
    pub fn param(&mut self, path: &str, t: Tensor) -> Result<Var> {
        if !self.bound_paths.insert(path.to_string()) {
            return Err(Error::Contract(format!(
                "parameter {path} bound twice on one tape"
            )));
        }
        Ok(self.push(t, Op::Param(path.to_string()), true))
    }

    fn require_rank2(&self, v: Var, ctx: &str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Dim(format!("{ctx}: expected rank-2, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_rank2(a, "matmul lhs")?;
        let (k2, n) = self.require_rank2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul: inner dims disagree, {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b), needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.require_rank2(x, "transpose")?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(x), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dim(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), needs))
    }

    /// `x + b` where `b` broadcasts across every trailing-dim slice of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b);
        let d = *xs.last().ok_or_else(|| Error::Dim("add_row_broadcast: scalar lhs".into()))?;
        if bs != [d] {
            return Err(Error::Dim(format!(
                "add_row_broadcast: bias {bs:?} does not match trailing dim {d}"
            )));
        }
        let bv = self.value(b).data().to_vec();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % d])
            .collect();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Tensor::from_parts(xs, out), Op::AddRowBroadcast(x, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::from_parts(shape, out), Op::Scale(x, c), needs)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dim(format!(
                "mul_elem: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulElem(a, b), needs))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.sin()).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::from_parts(shape, out), Op::Sin(x), needs)
    }

    /// Tanh-approximation GELU, elementwise.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::from_parts(shape, out), Op::Gelu(x), needs)
    }

    /// Max-subtracted softmax along `axis`; every slice sums to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::Dim(format!(
                "softmax: axis {axis} invalid for shape {shape:?}"
            )));
        }
        let mut out = self.value(x).data().to_vec();
        for_each_lane(&shape, axis, |lane| {
            let mut mx = f64::NEG_INFINITY;
            for &i in lane {
                mx = mx.max(out[i]);
            }
            let mut sum = 0.0;
            for &i in lane {
                out[i] = (out[i] - mx).exp();
                sum += out[i];
            }
            for &i in lane {
                out[i] /= sum;
            }
        });
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax(x, axis), needs))
    }

    /// Normalize each trailing-dim slice to mean 0 / variance 1, then affine.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| Error::Dim("layer_norm: scalar input".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dim(format!(
                "layer_norm: gain {:?} / bias {:?} do not match trailing dim {d}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let gv = self.value(gain).data().to_vec();
        let bv = self.value(bias).data().to_vec();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for (r, chunk) in xv.chunks_exact(d).enumerate() {
            let mean = chunk.iter().sum::<f64>() / d as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (chunk[j] - mean) * inv * gv[j] + bv[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::from_parts(xs, out),
            Op::LayerNorm { x, gain, bias, eps },
            needs,
        ))
    }

    /// 1-D cross-correlation over the length axis with zero padding.
    ///
    /// `x` is `[L, d]`, `kernel` is `[k, d, d_out]`; output is `[L_out, d_out]`
    /// with `L_out = (L + 2*padding - k) / stride + 1`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (l, d) = self.require_rank2(x, "conv1d input")?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 3 || ks[1] != d {
            return Err(Error::Dim(format!(
                "conv1d: kernel {ks:?} does not match input width {d}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d: stride must be positive".into()));
        }
        let (k, d_out) = (ks[0], ks[2]);
        let padded = l + 2 * padding;
        if k > padded {
            return Err(Error::Dim(format!(
                "conv1d: kernel length {k} exceeds padded input length {padded}"
            )));
        }
        let l_out = (padded - k) / stride + 1;
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        let mut out = vec![0.0; l_out * d_out];
        for t in 0..l_out {
            for j in 0..k {
                let src = t * stride + j;
                if src < padding || src >= padding + l {
                    continue; // zero padding contributes nothing
                }
                let xrow = &xv[(src - padding) * d..(src - padding + 1) * d];
                for c in 0..d {
                    let xcd = xrow[c];
                    let krow = &kv[(j * d + c) * d_out..(j * d + c + 1) * d_out];
                    let orow = &mut out[t * d_out..(t + 1) * d_out];
                    for o in 0..d_out {
                        orow[o] += xcd * krow[o];
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            Tensor::from_parts(vec![l_out, d_out], out),
            Op::Conv1d { x, kernel, stride, padding },
            needs,
        ))
    }

    /// `x @ w + b`, broadcasting over leading dimensions of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (d_in, d_out) = self.require_rank2(w, "linear weight")?;
        let last = *xs.last().ok_or_else(|| Error::Dim("linear: scalar input".into()))?;
        if last != d_in {
            return Err(Error::Dim(format!(
                "linear: input trailing dim {last} != weight d_in {d_in}"
            )));
        }
        if self.shape(b) != [d_out] {
            return Err(Error::Dim(format!(
                "linear: bias {:?} != [{d_out}]",
                self.shape(b)
            )));
        }
        let lead: usize = xs[..xs.len() - 1].iter().product();
        let flat = self.reshape(x, vec![lead, d_in])?;
        let prod = self.matmul(flat, w)?;
        let shifted = self.add_row_broadcast(prod, b)?;
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = d_out;
        self.reshape(shifted, out_shape)
    }

    /// Reinterpret the same data under a new shape of equal element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::Dim(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(x),
                shape
            )));
        }
        if self.shape(x) == shape.as_slice() {
            return Ok(x);
        }
        let data = self.value(x).data().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Reshape(x), needs))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Stack rank-2 tensors along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dim("concat_rows: no parts".into()));
        }
        let (_, c) = self.require_rank2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c2) = self.require_rank2(p, "concat_rows")?;
            if c2 != c {
                return Err(Error::Dim(format!(
                    "concat_rows: width {c2} != {c}"
                )));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
            needs,
        ))
    }

    /// Stack rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dim("concat_cols: no parts".into()));
        }
        let (r, _) = self.require_rank2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (r2, c) = self.require_rank2(p, "concat_cols")?;
            if r2 != r {
                return Err(Error::Dim(format!("concat_cols: rows {r2} != {r}")));
            }
            widths.push(c);
            total += c;
        }
        let mut data = vec![0.0; r * total];
        let mut col0 = 0;
        for (idx, &p) in parts.iter().enumerate() {
            let c = widths[idx];
            let pv = self.value(p).data();
            for i in 0..r {
                data[i * total + col0..i * total + col0 + c]
                    .copy_from_slice(&pv[i * c..(i + 1) * c]);
            }
            col0 += c;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(vec![r, total], data),
            Op::ConcatCols(parts.to_vec()),
            needs,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.require_rank2(x, "slice_rows")?;
        if start >= end || end > r {
            return Err(Error::Dim(format!(
                "slice_rows: [{start}, {end}) out of {r} rows"
            )));
        }
        let data = self.value(x).data()[start * c..end * c].to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![end - start, c], data),
            Op::SliceRows { x, start, end },
            needs,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.require_rank2(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::Dim(format!(
                "slice_cols: [{start}, {end}) out of {c} cols"
            )));
        }
        let xv = self.value(x).data();
        let w = end - start;
        let mut data = vec![0.0; r * w];
        for i in 0..r {
            data[i * w..(i + 1) * w].copy_from_slice(&xv[i * c + start..i * c + end]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![r, w], data),
            Op::SliceCols { x, start, end },
            needs,
        ))
    }

    /// Append zero rows until the tensor has `target` rows.
    pub fn pad_rows(&mut self, x: Var, target: usize) -> Result<Var> {
        let (r, c) = self.require_rank2(x, "pad_rows")?;
        if target < r {
            return Err(Error::Dim(format!(
                "pad_rows: target {target} below current {r}"
            )));
        }
        if target == r {
            return Ok(x);
        }
        let mut data = self.value(x).data().to_vec();
        data.resize(target * c, 0.0);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_parts(vec![target, c], data),
            Op::PadRows { x },
            needs,
        ))
    }

    /// Row lookup: `out[t] = table[ids[t]]`.
    pub fn embed(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = self.require_rank2(table, "embed table")?;
        if ids.is_empty() {
            return Err(Error::Input("embed: empty token sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| (i as usize) >= v) {
            return Err(Error::Input(format!(
                "embed: token id {bad} out of range [0, {v})"
            )));
        }
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&tv[id as usize * d..(id as usize + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::Embed { table, ids: ids.to_vec() },
            needs,
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, in log space.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let (b, c) = self.require_rank2(logits, "cross_entropy logits")?;
        if c != 2 {
            return Err(Error::Dim(format!(
                "cross_entropy: expected 2 logit columns, got {c}"
            )));
        }
        if b != labels.len() {
            return Err(Error::Dim(format!(
                "cross_entropy: {b} rows vs {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Input(format!(
                "cross_entropy: label {bad} outside {{0, 1}}"
            )));
        }
        let lv = self.value(logits).data();
        let mut total = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let z0 = lv[row * 2];
            let z1 = lv[row * 2 + 1];
            let mx = z0.max(z1);
            let lse = mx + ((z0 - mx).exp() + (z1 - mx).exp()).ln();
            let z = if label == 0 { z0 } else { z1 };
            total += lse - z;
        }
        let mean = total / b as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::CrossEntropy { logits, labels: labels.to_vec() },
            needs,
        ))
    }

    /// Reverse-mode gradients of a scalar `loss` for every bound parameter.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward: loss has shape {:?}, expected scalar",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            self.propagate(id, &gout, &mut grads)?;
            grads[id] = Some(gout);
        }

        let mut by_path = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(path) = &node.op {
                let g = match &grads[id] {
                    Some(v) => Tensor::from_parts(node.value.shape().to_vec(), v.clone()),
                    None => Tensor::zeros(node.value.shape().to_vec()),
                };
                by_path.insert(path.clone(), g);
            }
        }
        Ok(Gradients { by_path })
    }

    fn propagate(
        &self,
        id: usize,
        gout: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let accum = |grads: &mut [Option<Vec<f64>>], v: Var, contrib: &[f64], nodes: &[Node]| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contrib) {
                        *a += c;
                    }
                }
                None => grads[v.0] = Some(contrib.to_vec()),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    // dA = dY . B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout[i * n + j];
                            for p in 0..k {
                                da[i * k + p] += g * bv[p * n + j];
                            }
                        }
                    }
                    accum(grads, *a, &da, &self.nodes);
                }
                if self.needs(*b) {
                    // dB = A^T . dY
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += x * gout[i * n + j];
                            }
                        }
                    }
                    accum(grads, *b, &db, &self.nodes);
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = gout[j * m + i];
                    }
                }
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::Add(a, b) => {
                accum(grads, *a, gout, &self.nodes);
                accum(grads, *b, gout, &self.nodes);
            }
            Op::AddRowBroadcast(x, b) => {
                accum(grads, *x, gout, &self.nodes);
                if self.needs(*b) {
                    let d = self.value(*b).len();
                    let mut db = vec![0.0; d];
                    for (i, g) in gout.iter().enumerate() {
                        db[i % d] += g;
                    }
                    accum(grads, *b, &db, &self.nodes);
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = gout.iter().map(|g| g * c).collect();
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::MulElem(a, b) => {
                if self.needs(*a) {
                    let da: Vec<f64> = gout
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(g, y)| g * y)
                        .collect();
                    accum(grads, *a, &da, &self.nodes);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = gout
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, x)| g * x)
                        .collect();
                    accum(grads, *b, &db, &self.nodes);
                }
            }
            Op::Sin(x) => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| g * v.cos())
                    .collect();
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::Gelu(x) => {
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, &v)| g * gelu_grad_scalar(v))
                    .collect();
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::Softmax(x, axis) => {
                let shape = self.shape(id_var(id)).to_vec();
                let y = self.nodes[id].value.data();
                let mut dx = vec![0.0; y.len()];
                for_each_lane(&shape, *axis, |lane| {
                    let mut dot = 0.0;
                    for &i in lane {
                        dot += gout[i] * y[i];
                    }
                    for &i in lane {
                        dx[i] = y[i] * (gout[i] - dot);
                    }
                });
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xs = self.shape(*x).to_vec();
                let d = *xs.last().unwrap();
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; xv.len()];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for (r, chunk) in xv.chunks_exact(d).enumerate() {
                    let mean = chunk.iter().sum::<f64>() / d as f64;
                    let var =
                        chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let grow = &gout[r * d..(r + 1) * d];
                    let mut t_mean = 0.0;
                    let mut tx_mean = 0.0;
                    for j in 0..d {
                        let xh = (chunk[j] - mean) * inv;
                        let t = grow[j] * gv[j];
                        t_mean += t;
                        tx_mean += t * xh;
                        dg[j] += grow[j] * xh;
                        db[j] += grow[j];
                    }
                    t_mean /= d as f64;
                    tx_mean /= d as f64;
                    for j in 0..d {
                        let xh = (chunk[j] - mean) * inv;
                        dx[r * d + j] = (grow[j] * gv[j] - t_mean - xh * tx_mean) * inv;
                    }
                }
                accum(grads, *x, &dx, &self.nodes);
                accum(grads, *gain, &dg, &self.nodes);
                accum(grads, *bias, &db, &self.nodes);
            }
            Op::Conv1d { x, kernel, stride, padding } => {
                let (l, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let ks = self.shape(*kernel);
                let (k, d_out) = (ks[0], ks[2]);
                let l_out = self.shape(id_var(id))[0];
                let xv = self.value(*x).data();
                let kv = self.value(*kernel).data();
                let mut dx = vec![0.0; l * d];
                let mut dk = vec![0.0; k * d * d_out];
                for t in 0..l_out {
                    for j in 0..k {
                        let src = t * stride + j;
                        if src < *padding || src >= padding + l {
                            continue;
                        }
                        let u = src - padding;
                        for c in 0..d {
                            let koff = (j * d + c) * d_out;
                            let mut acc = 0.0;
                            for o in 0..d_out {
                                let g = gout[t * d_out + o];
                                acc += g * kv[koff + o];
                                dk[koff + o] += g * xv[u * d + c];
                            }
                            dx[u * d + c] += acc;
                        }
                    }
                }
                accum(grads, *x, &dx, &self.nodes);
                accum(grads, *kernel, &dk, &self.nodes);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                let dx = vec![gout[0]; n];
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::ConcatRows(parts) => {
                let c = self.shape(id_var(id))[1];
                let mut row0 = 0;
                for &p in parts {
                    let r = self.shape(p)[0];
                    let dx = &gout[row0 * c..(row0 + r) * c];
                    accum(grads, p, dx, &self.nodes);
                    row0 += r;
                }
            }
            Op::ConcatCols(parts) => {
                let out_shape = self.shape(id_var(id));
                let (r, total) = (out_shape[0], out_shape[1]);
                let mut col0 = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c..(i + 1) * c]
                            .copy_from_slice(&gout[i * total + col0..i * total + col0 + c]);
                    }
                    accum(grads, p, &dx, &self.nodes);
                    col0 += c;
                }
            }
            Op::SliceRows { x, start, end } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut dx = vec![0.0; r * c];
                dx[start * c..end * c].copy_from_slice(gout);
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::SliceCols { x, start, end } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let w = end - start;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + end].copy_from_slice(&gout[i * w..(i + 1) * w]);
                }
                accum(grads, *x, &dx, &self.nodes);
            }
            Op::PadRows { x } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                accum(grads, *x, &gout[..r * c], &self.nodes);
            }
            Op::Reshape(x) => {
                accum(grads, *x, gout, &self.nodes);
            }
            Op::Embed { table, ids } => {
                let (v, d) = (self.shape(*table)[0], self.shape(*table)[1]);
                let mut dt = vec![0.0; v * d];
                for (t, &idx) in ids.iter().enumerate() {
                    let row = idx as usize;
                    for j in 0..d {
                        dt[row * d + j] += gout[t * d + j];
                    }
                }
                accum(grads, *table, &dt, &self.nodes);
            }
            Op::CrossEntropy { logits, labels } => {
                let b = labels.len();
                let lv = self.value(*logits).data();
                let mut dl = vec![0.0; b * 2];
                let g = gout[0] / b as f64;
                for (row, &label) in labels.iter().enumerate() {
                    let z0 = lv[row * 2];
                    let z1 = lv[row * 2 + 1];
                    let mx = z0.max(z1);
                    let e0 = (z0 - mx).exp();
                    let e1 = (z1 - mx).exp();
                    let p0 = e0 / (e0 + e1);
                    let p1 = 1.0 - p0;
                    dl[row * 2] = g * (p0 - if label == 0 { 1.0 } else { 0.0 });
                    dl[row * 2 + 1] = g * (p1 - if label == 1 { 1.0 } else { 0.0 });
                }
                accum(grads, *logits, &dl, &self.nodes);
            }
        }
        Ok(())
    }
}

fn id_var(id: usize) -> Var {
    Var(id)
}

fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * A * x * x)
}

/// Visit each 1-D lane along `axis`, passing flat indices of the lane.
pub(crate) fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut lane = vec![0usize; axis_len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            for (a, slot) in lane.iter_mut().enumerate() {
                *slot = base + a * inner;
            }
            f(&lane);
        }
    }
}
