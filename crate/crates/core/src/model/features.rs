//! One sample's raw per-modality sequences plus its binary label.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::numerics::tensor::Tensor;

/// Raw video/audio feature sequences, transcript tokens, and label
/// (1 = stuttered).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub video: Tensor,
    pub audio: Tensor,
    pub text_tokens: Vec<u32>,
    pub label: u8,
}

impl ModalityFeatures {
    /// Check lengths, widths, token range, and label against a config.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Input(format!("label {} outside {{0, 1}}", self.label)));
        }
        for (name, t, max_len, width) in [
            ("video", &self.video, config.l_v, config.d_v),
            ("audio", &self.audio, config.l_a, config.d_a),
        ] {
            if t.rank() != 2 {
                return Err(Error::Input(format!("{name} features must be rank-2")));
            }
            let (l, d) = (t.shape()[0], t.shape()[1]);
            if l == 0 {
                return Err(Error::Input(format!("{name} sequence is empty")));
            }
            if l > max_len {
                return Err(Error::Input(format!(
                    "{name} length {l} exceeds configured maximum {max_len}"
                )));
            }
            if d != width {
                return Err(Error::Input(format!(
                    "{name} width {d} does not match configured {width}"
                )));
            }
        }
        if self.text_tokens.is_empty() {
            return Err(Error::Input("token sequence is empty".into()));
        }
        if self.text_tokens.len() > config.l_t {
            return Err(Error::Input(format!(
                "token count {} exceeds configured maximum {}",
                self.text_tokens.len(),
                config.l_t
            )));
        }
        if let Some(&bad) = self.text_tokens.iter().find(|&&t| t as usize >= config.vocab) {
            return Err(Error::Input(format!(
                "token id {bad} out of range [0, {})",
                config.vocab
            )));
        }
        Ok(())
    }
}
