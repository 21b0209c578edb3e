//! The full forward pass: modality encoders, length compression, attention
//! fusion against the embedding matrix, sequence assembly, and the
//! causal-masked decoder with a binary head.

use crate::attention::{
    add_positional_encoding, causal_mask, multi_head_attention, scaled_dot_attention,
    AttentionHeads,
};
use crate::error::{Error, Result};
use crate::model::config::{Modality, ModelConfig};
use crate::model::features::ModalityFeatures;
use crate::model::params::{BoundParams, ParameterStore};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

/// Which modality feature streams are zeroed before the forward pass.
///
/// Zeroing keeps the architecture and parameter count fixed, so ablation
/// comparisons isolate information content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub zero_video: bool,
    pub zero_audio: bool,
    pub zero_text: bool,
}

impl Ablation {
    pub const NONE: Ablation =
        Ablation { zero_video: false, zero_audio: false, zero_text: false };

    /// Keep only the audio stream.
    pub fn audio_only() -> Ablation {
        Ablation { zero_video: true, zero_audio: false, zero_text: true }
    }

    /// Keep only the video stream.
    pub fn video_only() -> Ablation {
        Ablation { zero_video: false, zero_audio: true, zero_text: true }
    }

    pub fn tag(&self) -> &'static str {
        match (self.zero_video, self.zero_audio, self.zero_text) {
            (false, false, false) => "full",
            (true, false, true) => "audio-only",
            (false, true, true) => "video-only",
            _ => "custom",
        }
    }
}

fn heads_at(g: &Graph, bp: &BoundParams, prefix: &str, heads: usize) -> Result<AttentionHeads> {
    let _ = g;
    Ok(AttentionHeads {
        heads,
        w_q: bp.get(&format!("{prefix}.attn.wq"))?,
        w_k: bp.get(&format!("{prefix}.attn.wk"))?,
        w_v: bp.get(&format!("{prefix}.attn.wv"))?,
        w_o: bp.get(&format!("{prefix}.attn.wo"))?,
    })
}

const LN_EPS: f64 = 1e-5;

/// One pre-norm block: `x + Attn(LN(x))`, then `x + FF(LN(x))`.
fn transformer_block(
    g: &mut Graph,
    x: Var,
    prefix: &str,
    heads: usize,
    bp: &BoundParams,
    mask: Option<&crate::attention::AttentionMask>,
) -> Result<Var> {
    let ln1_g = bp.get(&format!("{prefix}.ln1.gain"))?;
    let ln1_b = bp.get(&format!("{prefix}.ln1.bias"))?;
    let normed = g.layer_norm(x, ln1_g, ln1_b, LN_EPS)?;
    let attn_params = heads_at(g, bp, prefix, heads)?;
    let attn = multi_head_attention(g, normed, normed, normed, &attn_params, mask)?;
    let x = g.add(x, attn)?;

    let ln2_g = bp.get(&format!("{prefix}.ln2.gain"))?;
    let ln2_b = bp.get(&format!("{prefix}.ln2.bias"))?;
    let normed = g.layer_norm(x, ln2_g, ln2_b, LN_EPS)?;
    let w1 = bp.get(&format!("{prefix}.ff.w1"))?;
    let b1 = bp.get(&format!("{prefix}.ff.b1"))?;
    let hidden = g.linear(normed, w1, b1)?;
    let act = g.gelu(hidden);
    let w2 = bp.get(&format!("{prefix}.ff.w2"))?;
    let b2 = bp.get(&format!("{prefix}.ff.b2"))?;
    let ff = g.linear(act, w2, b2)?;
    g.add(x, ff)
}

/// Stack of unmasked pre-norm blocks, no positional encoding.
pub(crate) fn encoder_stack(
    g: &mut Graph,
    mut x: Var,
    prefix: &str,
    n_layers: usize,
    heads: usize,
    bp: &BoundParams,
) -> Result<Var> {
    for layer in 0..n_layers {
        x = transformer_block(g, x, &format!("{prefix}.{layer}"), heads, bp, None)?;
    }
    Ok(x)
}

/// Per-modality transformer encoder with positional encodings added at the
/// input; length-preserving. For text, `x` is the embedded token sequence.
pub fn encode_modality(
    g: &mut Graph,
    x: Var,
    modality: Modality,
    bp: &BoundParams,
    config: &ModelConfig,
) -> Result<Var> {
    let width = config.modality_width(modality);
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 2 || shape[1] != width {
        return Err(Error::Config(format!(
            "{} encoder expects width {width}, got shape {shape:?}",
            modality.tag()
        )));
    }
    let x = add_positional_encoding(g, x)?;
    encoder_stack(
        g,
        x,
        &format!("enc.{}", modality.tag()),
        config.n_enc_layers,
        config.heads,
        bp,
    )
}

/// Conv1D length compression to exactly `l_prime` rows, then a linear
/// projection to width `d_e`.
///
/// The stride equals the kernel size (non-overlapping windows); the conv
/// output is truncated or right-padded with zero rows to hit `l_prime`
/// exactly before the projection.
pub fn compress_project(
    g: &mut Graph,
    h: Var,
    modality: Modality,
    bp: &BoundParams,
    config: &ModelConfig,
) -> Result<Var> {
    let l = g.value(h).nrows();
    let k = config.compress_stride(modality);
    if l < k {
        return Err(Error::Input(format!(
            "{} sequence of length {l} is shorter than compression kernel {k}",
            modality.tag()
        )));
    }
    let kernel = bp.get(&format!("comp.{}.conv.kernel", modality.tag()))?;
    let conv = g.conv1d(h, kernel, k, 0)?;
    let rows = g.value(conv).nrows();
    let sized = if rows > config.l_prime {
        g.slice_rows(conv, 0, config.l_prime)?
    } else {
        g.pad_rows(conv, config.l_prime)?
    };
    let w = bp.get(&format!("comp.{}.proj.w", modality.tag()))?;
    let b = bp.get(&format!("comp.{}.proj.b", modality.tag()))?;
    g.linear(sized, w, b)
}

/// Fuse a compressed modality representation with the embedding space:
/// attention with `Q = h'` and `K = V = E`.
///
/// The attention is parameter-free, so every output row is a convex
/// combination of embedding rows (per column block when `fusion_heads > 1`).
pub fn fuse_modality(g: &mut Graph, h_prime: Var, e: Var, fusion_heads: usize) -> Result<Var> {
    let hs = g.value(h_prime).shape().to_vec();
    let es = g.value(e).shape().to_vec();
    if es.len() != 2 || es[0] == 0 {
        return Err(Error::Config(format!("fusion: embedding matrix {es:?} is empty")));
    }
    if hs.len() != 2 || hs[1] != es[1] {
        return Err(Error::Dim(format!(
            "fusion: widths disagree, h' {hs:?} vs E {es:?}"
        )));
    }
    let d = hs[1];
    if fusion_heads == 0 || !d.is_multiple_of(fusion_heads) {
        return Err(Error::Config(format!(
            "fusion: width {d} not divisible by fusion_heads {fusion_heads}"
        )));
    }
    if fusion_heads == 1 {
        return scaled_dot_attention(g, h_prime, e, e, None);
    }
    let slice = d / fusion_heads;
    let mut parts = Vec::with_capacity(fusion_heads);
    for i in 0..fusion_heads {
        let (lo, hi) = (i * slice, (i + 1) * slice);
        let q = g.slice_cols(h_prime, lo, hi)?;
        let kv = g.slice_cols(e, lo, hi)?;
        parts.push(scaled_dot_attention(g, q, kv, kv, None)?);
    }
    g.concat_cols(&parts)
}

/// Concatenate fused modality rows and token embeddings along the length
/// axis, in the order video, audio, text, embeddings.
pub fn assemble_sequence(
    g: &mut Graph,
    h_video: Var,
    h_audio: Var,
    h_text: Var,
    token_embeddings: Var,
    config: &ModelConfig,
) -> Result<Var> {
    for (name, v) in [("video", h_video), ("audio", h_audio), ("text", h_text)] {
        let s = g.value(v).shape();
        if s != [config.l_prime, config.d_e] {
            return Err(Error::Dim(format!(
                "assemble: fused {name} has shape {s:?}, expected [{}, {}]",
                config.l_prime, config.d_e
            )));
        }
    }
    let t = g.value(token_embeddings).nrows();
    let total = 3 * config.l_prime + t;
    if total > config.max_total_len {
        return Err(Error::Input(format!(
            "assembled length {total} exceeds sequence cap {}",
            config.max_total_len
        )));
    }
    g.concat_rows(&[h_video, h_audio, h_text, token_embeddings])
}

/// Causal-masked decoder over the assembled sequence; the final position's
/// hidden state feeds the binary classification head.
pub fn decode_classify(
    g: &mut Graph,
    x: Var,
    bp: &BoundParams,
    config: &ModelConfig,
) -> Result<Var> {
    let n = g.value(x).nrows();
    if n == 0 {
        return Err(Error::Dim("decode: empty sequence".into()));
    }
    let mut x = add_positional_encoding(g, x)?;
    let mask = causal_mask(n)?;
    for layer in 0..config.n_dec_layers {
        x = transformer_block(g, x, &format!("dec.{layer}"), config.heads, bp, Some(&mask))?;
    }
    let last = g.slice_rows(x, n - 1, n)?;
    let w = bp.get("head.w")?;
    let b = bp.get("head.b")?;
    let logits = g.linear(last, w, b)?;
    g.reshape(logits, vec![2])
}

/// Full pipeline on an existing graph with bound parameters.
pub fn forward_on(
    g: &mut Graph,
    bp: &BoundParams,
    sample: &ModalityFeatures,
    config: &ModelConfig,
    ablation: Ablation,
) -> Result<Var> {
    sample.validate(config)?;
    let e = bp.get("embed.e")?;

    let video_t = if ablation.zero_video {
        Tensor::zeros(sample.video.shape().to_vec())
    } else {
        sample.video.clone()
    };
    let audio_t = if ablation.zero_audio {
        Tensor::zeros(sample.audio.shape().to_vec())
    } else {
        sample.audio.clone()
    };
    let video = g.input(video_t);
    let audio = g.input(audio_t);
    let mut emb = g.embed(e, &sample.text_tokens)?;
    if ablation.zero_text {
        emb = g.scale(emb, 0.0);
    }

    let h_v = encode_modality(g, video, Modality::Video, bp, config)?;
    let h_a = encode_modality(g, audio, Modality::Audio, bp, config)?;
    let h_t = encode_modality(g, emb, Modality::Text, bp, config)?;

    let hp_v = compress_project(g, h_v, Modality::Video, bp, config)?;
    let hp_a = compress_project(g, h_a, Modality::Audio, bp, config)?;
    let hp_t = compress_project(g, h_t, Modality::Text, bp, config)?;

    let ha_v = fuse_modality(g, hp_v, e, config.fusion_heads)?;
    let ha_a = fuse_modality(g, hp_a, e, config.fusion_heads)?;
    let ha_t = fuse_modality(g, hp_t, e, config.fusion_heads)?;

    let seq = assemble_sequence(g, ha_v, ha_a, ha_t, emb, config)?;
    decode_classify(g, seq, bp, config)
}

/// One-shot forward: binds parameters on a fresh graph and returns the two
/// logits. Deterministic given `(sample, params)`.
pub fn forward(
    config: &ModelConfig,
    params: &ParameterStore,
    sample: &ModalityFeatures,
    ablation: Ablation,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let bp = params.bind(&mut g)?;
    let logits = forward_on(&mut g, &bp, sample, config, ablation)?;
    Ok(g.value(logits).clone())
}

/// Full-model gradient verification: the mean cross-entropy of one fluent
/// and one stuttered random sample, with every parameter coordinate checked
/// against central finite differences (`h = 1e-5`).
///
/// Returns the maximum relative error. Inputs are fixed-seed, so the result
/// is reproducible.
pub fn full_model_grad_check(config: &ModelConfig) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    config.validate()?;
    let params = ParameterStore::init(config, 10)?;

    let make_sample = |seed: u64, label: u8| -> Result<ModalityFeatures> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |l: usize, d: usize| -> Tensor {
            let data = (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::from_parts(vec![l, d], data)
        };
        let video = fill(config.l_v, config.d_v);
        let audio = fill(config.l_a, config.d_a);
        let text_tokens = (0..config.l_t)
            .map(|_| rng.random_range(0..config.vocab as u32))
            .collect();
        Ok(ModalityFeatures { video, audio, text_tokens, label })
    };
    let fluent = make_sample(110, 0)?;
    let stuttered = make_sample(210, 1)?;

    crate::numerics::check::finite_diff_check(
        |g, vars| {
            let bp = BoundParams::from_vars(vars.clone());
            let l0 = forward_on(g, &bp, &fluent, config, Ablation::NONE)?;
            let l1 = forward_on(g, &bp, &stuttered, config, Ablation::NONE)?;
            let r0 = g.reshape(l0, vec![1, 2])?;
            let r1 = g.reshape(l1, vec![1, 2])?;
            let both = g.concat_rows(&[r0, r1])?;
            g.cross_entropy(both, &[0, 1])
        },
        params.tensors(),
        1e-5,
    )
}

/// Softmax of a two-logit tensor.
pub fn logits_to_probs(logits: &Tensor) -> Result<[f64; 2]> {
    if logits.len() != 2 {
        return Err(Error::Contract(format!(
            "expected 2 logits, got shape {:?}",
            logits.shape()
        )));
    }
    let (z0, z1) = (logits.data()[0], logits.data()[1]);
    let mx = z0.max(z1);
    let e0 = (z0 - mx).exp();
    let e1 = (z1 - mx).exp();
    let sum = e0 + e1;
    Ok([e0 / sum, e1 / sum])
}

/// Argmax class: 1 (stuttered) when its logit is strictly larger.
pub fn predict(logits: &Tensor) -> Result<u8> {
    let p = logits_to_probs(logits)?;
    Ok(u8::from(p[1] > p[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::positional_encoding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    fn toy_sample(config: &ModelConfig, seed: u64, label: u8) -> ModalityFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let video = rand_tensor(&mut rng, vec![config.l_v, config.d_v]);
        let audio = rand_tensor(&mut rng, vec![config.l_a, config.d_a]);
        let text_tokens = (0..config.l_t)
            .map(|_| rng.random_range(0..config.vocab as u32))
            .collect();
        ModalityFeatures { video, audio, text_tokens, label }
    }

    #[test]
    fn shape_pipeline_matches_contract() {
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 1).unwrap();
        let sample = toy_sample(&config, 2, 1);

        let mut g = Graph::new();
        let bp = store.bind(&mut g).unwrap();
        let e = bp.get("embed.e").unwrap();
        let video = g.input(sample.video.clone());
        let h_v = encode_modality(&mut g, video, Modality::Video, &bp, &config).unwrap();
        assert_eq!(g.value(h_v).shape(), [config.l_v, config.d_v]);
        let hp_v = compress_project(&mut g, h_v, Modality::Video, &bp, &config).unwrap();
        assert_eq!(g.value(hp_v).shape(), [config.l_prime, config.d_e]);
        let ha_v = fuse_modality(&mut g, hp_v, e, config.fusion_heads).unwrap();
        assert_eq!(g.value(ha_v).shape(), [config.l_prime, config.d_e]);

        let logits = forward_on(&mut g, &bp, &sample, &config, Ablation::NONE).unwrap();
        assert_eq!(g.value(logits).shape(), [2]);
    }

    #[test]
    fn zero_layer_encoder_is_identity_on_pe_added_input() {
        let config = ModelConfig { n_enc_layers: 0, ..ModelConfig::toy() };
        let store = ParameterStore::init(&config, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x_t = rand_tensor(&mut rng, vec![5, config.d_v]);

        let mut g = Graph::new();
        let bp = store.bind(&mut g).unwrap();
        let x = g.input(x_t.clone());
        let out = encode_modality(&mut g, x, Modality::Video, &bp, &config).unwrap();

        let pe = positional_encoding(5, config.d_v).unwrap();
        for i in 0..5 {
            for j in 0..config.d_v {
                assert_eq!(g.value(out).at2(i, j), x_t.at2(i, j) + pe.at2(i, j));
            }
        }
    }

    #[test]
    fn encoder_without_positions_is_permutation_equivariant() {
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x_t = rand_tensor(&mut rng, vec![5, config.d_v]);
        let perm = [3usize, 0, 4, 1, 2];

        let run = |input: Tensor| {
            let mut g = Graph::new();
            let bp = store.bind(&mut g).unwrap();
            let x = g.input(input);
            let out = encoder_stack(&mut g, x, "enc.video", config.n_enc_layers, config.heads, &bp)
                .unwrap();
            g.value(out).clone()
        };

        let base = run(x_t.clone());
        let permuted_in =
            Tensor::from_rows(&perm.iter().map(|&i| x_t.row(i).to_vec()).collect::<Vec<_>>())
                .unwrap();
        let permuted_out = run(permuted_in);
        for (new_row, &old_row) in perm.iter().enumerate() {
            for j in 0..config.d_v {
                let diff = (permuted_out.at2(new_row, j) - base.at2(old_row, j)).abs();
                assert!(diff < 1e-12, "row {new_row} col {j} diff {diff}");
            }
        }
    }

    #[test]
    fn identity_compression_passes_input_through() {
        // A sample of length l_prime under stride 1 / kernel 1; identity
        // kernel and identity projection reduce the stage to a copy.
        let config = ModelConfig {
            l_v: 4,
            l_a: 4,
            l_t: 4,
            l_prime: 3,
            d_t: 4,
            d_e: 4,
            d_v: 4,
            d_a: 4,
            heads: 2,
            vocab: 5,
            d_ff: 8,
            ..ModelConfig::toy()
        };
        config.validate().unwrap();
        let mut store = ParameterStore::init(&config, 1).unwrap();
        let d = config.d_v;
        {
            let kernel = store.get_mut("comp.video.conv.kernel").unwrap();
            assert_eq!(kernel.shape(), [1, d, d]);
            for i in 0..d {
                for j in 0..d {
                    kernel.data_mut()[i * d + j] = f64::from(u8::from(i == j));
                }
            }
        }
        {
            let w = store.get_mut("comp.video.proj.w").unwrap();
            for i in 0..d {
                for j in 0..d {
                    w.data_mut()[i * d + j] = f64::from(u8::from(i == j));
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x_t = rand_tensor(&mut rng, vec![3, d]);
        let mut g = Graph::new();
        let bp = store.bind(&mut g).unwrap();
        let x = g.input(x_t.clone());
        let out = compress_project(&mut g, x, Modality::Video, &bp, &config).unwrap();
        assert_eq!(g.value(out).data(), x_t.data());
    }

    #[test]
    fn compress_rejects_input_shorter_than_kernel() {
        let config = ModelConfig::default(); // video stride/kernel = 2
        let store = ParameterStore::init(&config, 1).unwrap();
        let mut g = Graph::new();
        let bp = store.bind(&mut g).unwrap();
        let x = g.input(Tensor::zeros(vec![1, config.d_v]));
        match compress_project(&mut g, x, Modality::Video, &bp, &config) {
            Err(Error::Input(_)) => {}
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn single_row_embedding_dominates_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let e_t = rand_tensor(&mut rng, vec![1, 6]);
        let h_t = rand_tensor(&mut rng, vec![4, 6]);
        let mut g = Graph::new();
        let e = g.input(e_t.clone());
        let h = g.input(h_t);
        let fused = fuse_modality(&mut g, h, e, 1).unwrap();
        for i in 0..4 {
            assert_eq!(g.value(fused).row(i), e_t.row(0));
        }
    }

    #[test]
    fn fusion_rejects_empty_embedding_matrix() {
        let mut g = Graph::new();
        let e = g.input(Tensor::zeros(vec![0, 4]));
        let h = g.input(Tensor::zeros(vec![2, 4]));
        assert!(matches!(fuse_modality(&mut g, h, e, 1), Err(Error::Config(_))));
    }

    #[test]
    fn fusion_output_stays_in_embedding_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for heads in [1usize, 2] {
            let e_t = rand_tensor(&mut rng, vec![7, 8]);
            let h_t = rand_tensor(&mut rng, vec![3, 8]);
            let mut g = Graph::new();
            let e = g.input(e_t.clone());
            let h = g.input(h_t);
            let fused = fuse_modality(&mut g, h, e, heads).unwrap();
            for j in 0..8 {
                let lo = (0..7).map(|r| e_t.at2(r, j)).fold(f64::INFINITY, f64::min);
                let hi = (0..7).map(|r| e_t.at2(r, j)).fold(f64::NEG_INFINITY, f64::max);
                for i in 0..3 {
                    let y = g.value(fused).at2(i, j);
                    assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn fusion_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let v = 4;
        let d = 6;
        let e_t = rand_tensor(&mut rng, vec![v, d]);
        let h_t = rand_tensor(&mut rng, vec![2, d]);

        let mut expect = vec![vec![0.0; d]; 2];
        for i in 0..2 {
            let scores: Vec<f64> = (0..v)
                .map(|r| {
                    (0..d).map(|c| h_t.at2(i, c) * e_t.at2(r, c)).sum::<f64>()
                        / (d as f64).sqrt()
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for r in 0..v {
                for c in 0..d {
                    expect[i][c] += exps[r] / sum * e_t.at2(r, c);
                }
            }
        }

        let mut g = Graph::new();
        let e = g.input(e_t);
        let h = g.input(h_t);
        let fused = fuse_modality(&mut g, h, e, 1).unwrap();
        for i in 0..2 {
            for c in 0..d {
                assert!((g.value(fused).at2(i, c) - expect[i][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assemble_orders_and_counts_rows() {
        let config = ModelConfig { l_prime: 4, ..ModelConfig::toy() };
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let d = config.d_e;
        let hv_t = rand_tensor(&mut rng, vec![4, d]);
        let ha_t = rand_tensor(&mut rng, vec![4, d]);
        let ht_t = rand_tensor(&mut rng, vec![4, d]);
        let e_t = rand_tensor(&mut rng, vec![config.vocab, d]);
        let tokens = [3u32, 1, 4, 1, 5, 9];

        let mut g = Graph::new();
        let e = g.input(e_t.clone());
        let hv = g.input(hv_t.clone());
        let ha = g.input(ha_t);
        let ht = g.input(ht_t);
        let emb = g.embed(e, &tokens).unwrap();
        let seq = assemble_sequence(&mut g, hv, ha, ht, emb, &config).unwrap();

        assert_eq!(g.value(seq).shape(), [18, d]);
        for i in 0..4 {
            assert_eq!(g.value(seq).row(i), hv_t.row(i));
        }
        for (t, &tok) in tokens.iter().enumerate() {
            assert_eq!(g.value(seq).row(12 + t), e_t.row(tok as usize));
        }
    }

    #[test]
    fn assemble_rejects_sequences_over_the_cap() {
        let config = ModelConfig { max_total_len: 14, l_t: 5, ..ModelConfig::toy() };
        let mut g = Graph::new();
        let d = config.d_e;
        let part = g.input(Tensor::zeros(vec![config.l_prime, d]));
        let e = g.input(Tensor::ones(vec![config.vocab, d]));
        let emb = g.embed(e, &[0, 1, 2, 3, 4, 5]).unwrap();
        match assemble_sequence(&mut g, part, part, part, emb, &config) {
            Err(Error::Input(msg)) => assert!(msg.contains("14"), "message was: {msg}"),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn decoder_produces_two_normalized_logits() {
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 5).unwrap();
        let sample = toy_sample(&config, 6, 0);
        let logits = forward(&config, &store, &sample, Ablation::NONE).unwrap();
        assert_eq!(logits.shape(), [2]);
        let probs = logits_to_probs(&logits).unwrap();
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_position_can_reach_the_readout() {
        // Causal mask lets the final position see all j <= N-1, so a bump at
        // any input position must be able to move the logits.
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 7).unwrap();
        let sample = toy_sample(&config, 8, 0);
        let base = forward(&config, &store, &sample, Ablation::NONE).unwrap();

        for pos in [0usize, 2, 5] {
            let mut bumped = sample.clone();
            let d = config.d_v;
            for j in 0..d {
                bumped.video.data_mut()[pos * d + j] += 1.0;
            }
            let after = forward(&config, &store, &bumped, Ablation::NONE).unwrap();
            assert_ne!(base.data(), after.data(), "bump at video row {pos} had no effect");
        }
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 11).unwrap();
        let sample = toy_sample(&config, 12, 1);
        let a = forward(&config, &store, &sample, Ablation::NONE).unwrap();
        let b = forward(&config, &store, &sample, Ablation::NONE).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn prediction_invariant_under_logit_shift() {
        let logits = Tensor::new(vec![2], vec![0.3, -0.2]).unwrap();
        let shifted = Tensor::new(vec![2], vec![0.3 + 5.0, -0.2 + 5.0]).unwrap();
        assert_eq!(predict(&logits).unwrap(), predict(&shifted).unwrap());
    }

    #[test]
    fn random_model_on_balanced_data_is_near_chance() {
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 17).unwrap();
        let n = 200;
        let mut correct = 0;
        for i in 0..n {
            let label = (i % 2) as u8;
            let sample = toy_sample(&config, 1000 + i as u64, label);
            let logits = forward(&config, &store, &sample, Ablation::NONE).unwrap();
            if predict(&logits).unwrap() == label {
                correct += 1;
            }
        }
        let acc = correct as f64 / n as f64;
        assert!((0.4..=0.6).contains(&acc), "accuracy {acc} not near chance");
    }

    #[test]
    fn swapping_modality_slots_changes_logits() {
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 19).unwrap();
        let sample = toy_sample(&config, 20, 1);

        let run = |swap: bool| {
            let mut g = Graph::new();
            let bp = store.bind(&mut g).unwrap();
            let e = bp.get("embed.e").unwrap();
            let video = g.input(sample.video.clone());
            let audio = g.input(sample.audio.clone());
            let emb = g.embed(e, &sample.text_tokens).unwrap();
            let h_v = encode_modality(&mut g, video, Modality::Video, &bp, &config).unwrap();
            let h_a = encode_modality(&mut g, audio, Modality::Audio, &bp, &config).unwrap();
            let h_t = encode_modality(&mut g, emb, Modality::Text, &bp, &config).unwrap();
            let hp_v = compress_project(&mut g, h_v, Modality::Video, &bp, &config).unwrap();
            let hp_a = compress_project(&mut g, h_a, Modality::Audio, &bp, &config).unwrap();
            let hp_t = compress_project(&mut g, h_t, Modality::Text, &bp, &config).unwrap();
            let ha_v = fuse_modality(&mut g, hp_v, e, config.fusion_heads).unwrap();
            let ha_a = fuse_modality(&mut g, hp_a, e, config.fusion_heads).unwrap();
            let ha_t = fuse_modality(&mut g, hp_t, e, config.fusion_heads).unwrap();
            let (first, second) = if swap { (ha_a, ha_v) } else { (ha_v, ha_a) };
            let seq = assemble_sequence(&mut g, first, second, ha_t, emb, &config).unwrap();
            let logits = decode_classify(&mut g, seq, &bp, &config).unwrap();
            g.value(logits).clone()
        };

        assert_ne!(run(false).data(), run(true).data());
    }

    #[test]
    fn save_load_forward_is_bitwise_identical() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 23).unwrap();
        let sample = toy_sample(&config, 24, 0);
        let before = forward(&config, &store, &sample, Ablation::NONE).unwrap();
        store.save(&path).unwrap();
        let loaded = ParameterStore::load(&path).unwrap();
        let after = forward(&config, &loaded, &sample, Ablation::NONE).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn ablation_zeroes_kill_modality_influence() {
        let config = ModelConfig::toy();
        let store = ParameterStore::init(&config, 29).unwrap();
        let mut a = toy_sample(&config, 30, 1);
        let b = {
            let mut s = a.clone();
            // Change only the video channel.
            for v in s.video.data_mut() {
                *v = -*v + 0.3;
            }
            s
        };
        let ablation = Ablation::audio_only();
        let la = forward(&config, &store, &a, ablation).unwrap();
        let lb = forward(&config, &store, &b, ablation).unwrap();
        assert_eq!(la.data(), lb.data());

        // But audio changes still matter.
        for v in a.audio.data_mut() {
            *v += 0.5;
        }
        let lc = forward(&config, &store, &a, ablation).unwrap();
        assert_ne!(la.data(), lc.data());
    }
}
