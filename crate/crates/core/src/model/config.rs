//! Architecture dimensions and the canonical parameter layout they induce.

use crate::error::{Error, Result};

/// Which input stream an operation applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Video,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Audio, Modality::Text];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

/// All architecture dimensions.
///
/// `d_t` must equal `d_e`: the text encoder consumes embedded tokens, and
/// token embeddings are rows of the `vocab x d_e` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Raw per-frame feature widths.
    pub d_v: usize,
    pub d_a: usize,
    pub d_t: usize,
    /// Maximum per-modality sequence lengths.
    pub l_v: usize,
    pub l_a: usize,
    pub l_t: usize,
    /// Compressed length shared by the three modalities.
    pub l_prime: usize,
    /// Embedding / model width.
    pub d_e: usize,
    /// Vocabulary size.
    pub vocab: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    /// Heads for encoder/decoder self-attention.
    pub heads: usize,
    /// Heads for the parameter-free fusion attention.
    pub fusion_heads: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Cap on the assembled sequence length.
    pub max_total_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_v: 8,
            d_a: 8,
            d_t: 16,
            l_v: 12,
            l_a: 12,
            l_t: 9,
            l_prime: 6,
            d_e: 16,
            vocab: 8,
            n_enc_layers: 1,
            n_dec_layers: 2,
            heads: 4,
            fusion_heads: 1,
            d_ff: 128,
            max_total_len: 512,
        }
    }
}

impl ModelConfig {
    /// Small configuration sized for whole-model gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            d_v: 4,
            d_a: 4,
            d_t: 8,
            l_v: 6,
            l_a: 6,
            l_t: 5,
            l_prime: 3,
            d_e: 8,
            vocab: 11,
            n_enc_layers: 1,
            n_dec_layers: 1,
            heads: 2,
            fusion_heads: 1,
            d_ff: 16,
            max_total_len: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_v", self.d_v),
            ("d_a", self.d_a),
            ("d_t", self.d_t),
            ("l_v", self.l_v),
            ("l_a", self.l_a),
            ("l_t", self.l_t),
            ("l_prime", self.l_prime),
            ("d_e", self.d_e),
            ("vocab", self.vocab),
            ("heads", self.heads),
            ("fusion_heads", self.fusion_heads),
            ("d_ff", self.d_ff),
            ("max_total_len", self.max_total_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.l_prime >= self.l_v.min(self.l_a).min(self.l_t) {
            return Err(Error::Config(format!(
                "l_prime {} must be smaller than every modality length (min {})",
                self.l_prime,
                self.l_v.min(self.l_a).min(self.l_t)
            )));
        }
        if 3 * self.l_prime + self.l_t > self.max_total_len {
            return Err(Error::Config(format!(
                "assembled length 3*{} + {} exceeds cap {}",
                self.l_prime, self.l_t, self.max_total_len
            )));
        }
        if self.d_t != self.d_e {
            return Err(Error::Config(format!(
                "d_t {} must equal d_e {} (text encoder consumes token embeddings)",
                self.d_t, self.d_e
            )));
        }
        for (name, d) in [("d_v", self.d_v), ("d_a", self.d_a), ("d_e", self.d_e)] {
            if d % 2 != 0 {
                return Err(Error::Config(format!(
                    "{name} = {d} must be even for sin/cos position pairs"
                )));
            }
            if d % self.heads != 0 {
                return Err(Error::Config(format!(
                    "{name} = {d} must be divisible by heads = {}",
                    self.heads
                )));
            }
        }
        if !self.d_e.is_multiple_of(self.fusion_heads) {
            return Err(Error::Config(format!(
                "d_e = {} must be divisible by fusion_heads = {}",
                self.d_e, self.fusion_heads
            )));
        }
        Ok(())
    }

    /// Encoder width for a modality (text runs at embedding width).
    pub fn modality_width(&self, m: Modality) -> usize {
        match m {
            Modality::Video => self.d_v,
            Modality::Audio => self.d_a,
            Modality::Text => self.d_e,
        }
    }

    /// Configured maximum length for a modality.
    pub fn modality_len(&self, m: Modality) -> usize {
        match m {
            Modality::Video => self.l_v,
            Modality::Audio => self.l_a,
            Modality::Text => self.l_t,
        }
    }

    /// Compression stride (= kernel size): non-overlapping windows sized so
    /// a full-length input lands on at least `l_prime` rows.
    pub fn compress_stride(&self, m: Modality) -> usize {
        (self.modality_len(m) / self.l_prime).max(1)
    }
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `+/- sqrt(6 / (fan_in + fan_out))`.
    Uniform { fan_in: usize, fan_out: usize },
    Zero,
    One,
}

/// Declared parameter: stable path, shape, initialization rule.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn push_block(specs: &mut Vec<ParamSpec>, prefix: &str, width: usize, d_ff: usize) {
    let mat = |path: String, r: usize, c: usize| ParamSpec {
        path,
        shape: vec![r, c],
        init: Init::Uniform { fan_in: r, fan_out: c },
    };
    let vecp = |path: String, n: usize, init: Init| ParamSpec { path, shape: vec![n], init };
    specs.push(vecp(format!("{prefix}.ln1.gain"), width, Init::One));
    specs.push(vecp(format!("{prefix}.ln1.bias"), width, Init::Zero));
    for w in ["wq", "wk", "wv", "wo"] {
        specs.push(mat(format!("{prefix}.attn.{w}"), width, width));
    }
    specs.push(vecp(format!("{prefix}.ln2.gain"), width, Init::One));
    specs.push(vecp(format!("{prefix}.ln2.bias"), width, Init::Zero));
    specs.push(mat(format!("{prefix}.ff.w1"), width, d_ff));
    specs.push(vecp(format!("{prefix}.ff.b1"), d_ff, Init::Zero));
    specs.push(mat(format!("{prefix}.ff.w2"), d_ff, width));
    specs.push(vecp(format!("{prefix}.ff.b2"), width, Init::Zero));
}

impl ModelConfig {
    /// Every learnable parameter, in canonical declaration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        specs.push(ParamSpec {
            path: "embed.e".into(),
            shape: vec![self.vocab, self.d_e],
            init: Init::Uniform { fan_in: self.vocab, fan_out: self.d_e },
        });
        for m in Modality::ALL {
            let width = self.modality_width(m);
            for layer in 0..self.n_enc_layers {
                push_block(&mut specs, &format!("enc.{}.{layer}", m.tag()), width, self.d_ff);
            }
            let k = self.compress_stride(m);
            specs.push(ParamSpec {
                path: format!("comp.{}.conv.kernel", m.tag()),
                shape: vec![k, width, width],
                init: Init::Uniform { fan_in: k * width, fan_out: k * width },
            });
            specs.push(ParamSpec {
                path: format!("comp.{}.proj.w", m.tag()),
                shape: vec![width, self.d_e],
                init: Init::Uniform { fan_in: width, fan_out: self.d_e },
            });
            specs.push(ParamSpec {
                path: format!("comp.{}.proj.b", m.tag()),
                shape: vec![self.d_e],
                init: Init::Zero,
            });
        }
        for layer in 0..self.n_dec_layers {
            push_block(&mut specs, &format!("dec.{layer}"), self.d_e, self.d_ff);
        }
        specs.push(ParamSpec {
            path: "head.w".into(),
            shape: vec![self.d_e, 2],
            init: Init::Uniform { fan_in: self.d_e, fan_out: 2 },
        });
        specs.push(ParamSpec {
            path: "head.b".into(),
            shape: vec![2],
            init: Init::Zero,
        });
        specs
    }
}
