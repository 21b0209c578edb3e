//! Attention primitives and sinusoidal positional encodings.
//!
//! Shared by the modality encoders, the fusion stage, and the masked
//! decoder. Masking is additive: disallowed scores receive a large
//! negative constant before the softmax.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

/// Additive score for a masked-out position.
pub const MASK_OFF: f64 = -1e30;

/// Boolean attend/ignore matrix; `true` means the query may attend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n_q: usize,
    n_k: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    /// Build from row-major flags. Every query row must keep at least one
    /// visible key, otherwise the masked softmax is undefined.
    pub fn new(n_q: usize, n_k: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != n_q * n_k {
            return Err(Error::Dim(format!(
                "mask: {} flags for {n_q}x{n_k}",
                allow.len()
            )));
        }
        for q in 0..n_q {
            if !allow[q * n_k..(q + 1) * n_k].iter().any(|&a| a) {
                return Err(Error::Contract(format!(
                    "mask: query row {q} has no visible keys"
                )));
            }
        }
        Ok(AttentionMask { n_q, n_k, allow })
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_k(&self) -> usize {
        self.n_k
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.n_k + k]
    }

    /// Additive bias tensor: 0 where visible, [`MASK_OFF`] where masked.
    fn to_additive(&self) -> Tensor {
        let data = self
            .allow
            .iter()
            .map(|&a| if a { 0.0 } else { MASK_OFF })
            .collect();
        Tensor::from_parts(vec![self.n_q, self.n_k], data)
    }
}

/// Lower-triangular mask: position `i` sees positions `j <= i`.
pub fn causal_mask(n: usize) -> Result<AttentionMask> {
    if n == 0 {
        return Err(Error::Config("causal_mask: n must be >= 1".into()));
    }
    let mut allow = vec![false; n * n];
    for i in 0..n {
        for j in 0..=i {
            allow[i * n + j] = true;
        }
    }
    AttentionMask::new(n, n, allow)
}

/// `softmax(Q K^T / sqrt(d_k)) V` with optional masking.
///
/// Every output row is a convex combination of `V` rows.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let qs = g.value(q).shape().to_vec();
    let ks = g.value(k).shape().to_vec();
    let vs = g.value(v).shape().to_vec();
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::Dim("attention: Q, K, V must be rank-2".into()));
    }
    if qs[1] != ks[1] {
        return Err(Error::Dim(format!(
            "attention: Q width {} != K width {}",
            qs[1], ks[1]
        )));
    }
    if ks[0] != vs[0] {
        return Err(Error::Dim(format!(
            "attention: K rows {} != V rows {}",
            ks[0], vs[0]
        )));
    }
    if let Some(m) = mask {
        if m.n_q() != qs[0] || m.n_k() != ks[0] {
            return Err(Error::Dim(format!(
                "attention: mask {}x{} for {}x{} scores",
                m.n_q(),
                m.n_k(),
                qs[0],
                ks[0]
            )));
        }
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (qs[1] as f64).sqrt());
    let biased = match mask {
        Some(m) => {
            let bias = g.input(m.to_additive());
            g.add(scaled, bias)?
        }
        None => scaled,
    };
    let weights = g.softmax(biased, 1)?;
    g.matmul(weights, v)
}

/// Projection weights for one multi-head attention block, bound on a graph.
///
/// The per-head projections are stored as full `d_model x d_model` matrices
/// (and `W^O` as `d_model x d_model`); head `i` uses the `i`-th column block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionHeads {
    pub heads: usize,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

/// `Concat(head_1, ..., head_h) W^O` over per-head scaled dot attention.
pub fn multi_head_attention(
    g: &mut Graph,
    x_q: Var,
    x_k: Var,
    x_v: Var,
    params: &AttentionHeads,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let d_model = g.value(x_q).ncols();
    let h = params.heads;
    if h == 0 || !d_model.is_multiple_of(h) {
        return Err(Error::Config(format!(
            "multi_head_attention: d_model {d_model} not divisible by {h} heads"
        )));
    }
    for (name, w) in [
        ("W_Q", params.w_q),
        ("W_K", params.w_k),
        ("W_V", params.w_v),
        ("W_O", params.w_o),
    ] {
        if g.value(w).shape() != [d_model, d_model] {
            return Err(Error::Dim(format!(
                "multi_head_attention: {name} is {:?}, expected [{d_model}, {d_model}]",
                g.value(w).shape()
            )));
        }
    }
    let d_head = d_model / h;
    let q_all = g.matmul(x_q, params.w_q)?;
    let k_all = g.matmul(x_k, params.w_k)?;
    let v_all = g.matmul(x_v, params.w_v)?;
    let mut heads = Vec::with_capacity(h);
    for i in 0..h {
        let (lo, hi) = (i * d_head, (i + 1) * d_head);
        let qi = g.slice_cols(q_all, lo, hi)?;
        let ki = g.slice_cols(k_all, lo, hi)?;
        let vi = g.slice_cols(v_all, lo, hi)?;
        heads.push(scaled_dot_attention(g, qi, ki, vi, mask)?);
    }
    let cat = g.concat_cols(&heads)?;
    g.matmul(cat, params.w_o)
}

/// Sinusoidal position table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(max_pos: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional_encoding: d_model {d_model} must be even"
        )));
    }
    let mut data = vec![0.0; max_pos * d_model];
    for pos in 0..max_pos {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_parts(vec![max_pos, d_model], data))
}

/// Add the first `n` positional-encoding rows to `x` (`n x d_model`).
pub fn add_positional_encoding(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Dim("add_positional_encoding: rank-2 input required".into()));
    }
    let pe = positional_encoding(shape[0], shape[1])?;
    let pe_var = g.input(pe);
    g.add(x, pe_var)
}
