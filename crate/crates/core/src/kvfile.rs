//! Flat `key = value` config files: one pair per line, `#` comments.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::data::synth::{CueMode, SynthSpec};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::training::TrainConfig;

/// Parsed key/value file with typed accessors and unknown-key detection.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Input(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(KvFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Input(format!("key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    /// Reject keys outside `allowed`.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Input(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }
}

const TRAIN_KEYS: &[&str] = &[
    "peak_lr",
    "warmup_ratio",
    "epochs",
    "batch_size",
    "grad_accum_steps",
    "seed",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

const MODEL_KEYS: &[&str] = &[
    "d_v", "d_a", "d_t", "l_v", "l_a", "l_t", "l_prime", "d_e", "vocab",
    "n_enc_layers", "n_dec_layers", "heads", "fusion_heads", "d_ff", "max_total_len",
];

const SYNTH_KEYS: &[&str] = &[
    "n_samples", "stutter_fraction", "l_v", "l_a", "l_t", "d_v", "d_a", "vocab",
    "seed", "cue_mode",
];

/// Overlay train-config keys from the file onto defaults.
pub fn train_config_from(kv: &KvFile, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(v) = kv.get("peak_lr")? {
        cfg.peak_lr = v;
    }
    if let Some(v) = kv.get("warmup_ratio")? {
        cfg.warmup_ratio = v;
    }
    if let Some(v) = kv.get("epochs")? {
        cfg.epochs = v;
    }
    if let Some(v) = kv.get("batch_size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = kv.get("grad_accum_steps")? {
        cfg.grad_accum_steps = v;
    }
    if let Some(v) = kv.get("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = kv.get("adam_beta1")? {
        cfg.adam_beta1 = v;
    }
    if let Some(v) = kv.get("adam_beta2")? {
        cfg.adam_beta2 = v;
    }
    if let Some(v) = kv.get("adam_eps")? {
        cfg.adam_eps = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Overlay model-config keys from the file onto defaults.
pub fn model_config_from(kv: &KvFile, base: ModelConfig) -> Result<ModelConfig> {
    let mut cfg = base;
    if let Some(v) = kv.get("d_v")? {
        cfg.d_v = v;
    }
    if let Some(v) = kv.get("d_a")? {
        cfg.d_a = v;
    }
    if let Some(v) = kv.get("d_t")? {
        cfg.d_t = v;
    }
    if let Some(v) = kv.get("l_v")? {
        cfg.l_v = v;
    }
    if let Some(v) = kv.get("l_a")? {
        cfg.l_a = v;
    }
    if let Some(v) = kv.get("l_t")? {
        cfg.l_t = v;
    }
    if let Some(v) = kv.get("l_prime")? {
        cfg.l_prime = v;
    }
    if let Some(v) = kv.get("d_e")? {
        cfg.d_e = v;
    }
    if let Some(v) = kv.get("vocab")? {
        cfg.vocab = v;
    }
    if let Some(v) = kv.get("n_enc_layers")? {
        cfg.n_enc_layers = v;
    }
    if let Some(v) = kv.get("n_dec_layers")? {
        cfg.n_dec_layers = v;
    }
    if let Some(v) = kv.get("heads")? {
        cfg.heads = v;
    }
    if let Some(v) = kv.get("fusion_heads")? {
        cfg.fusion_heads = v;
    }
    if let Some(v) = kv.get("d_ff")? {
        cfg.d_ff = v;
    }
    if let Some(v) = kv.get("max_total_len")? {
        cfg.max_total_len = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Overlay synthesis-spec keys from the file onto defaults.
pub fn synth_spec_from(kv: &KvFile, base: SynthSpec) -> Result<SynthSpec> {
    let mut spec = base;
    if let Some(v) = kv.get("n_samples")? {
        spec.n_samples = v;
    }
    if let Some(v) = kv.get("stutter_fraction")? {
        spec.stutter_fraction = v;
    }
    if let Some(v) = kv.get("l_v")? {
        spec.l_v = v;
    }
    if let Some(v) = kv.get("l_a")? {
        spec.l_a = v;
    }
    if let Some(v) = kv.get("l_t")? {
        spec.l_t = v;
    }
    if let Some(v) = kv.get("d_v")? {
        spec.d_v = v;
    }
    if let Some(v) = kv.get("d_a")? {
        spec.d_a = v;
    }
    if let Some(v) = kv.get("vocab")? {
        spec.vocab = v;
    }
    if let Some(v) = kv.get("seed")? {
        spec.seed = v;
    }
    if let Some(raw) = kv.get::<String>("cue_mode")? {
        spec.cue_mode = CueMode::from_str(&raw)?;
    }
    spec.validate()?;
    Ok(spec)
}

/// Allowed keys for a training+model config file.
pub fn check_train_file_keys(kv: &KvFile) -> Result<()> {
    let allowed: Vec<&str> = TRAIN_KEYS.iter().chain(MODEL_KEYS).copied().collect();
    kv.check_known(&allowed)
}

/// Allowed keys for a synthesis spec file.
pub fn check_synth_file_keys(kv: &KvFile) -> Result<()> {
    kv.check_known(SYNTH_KEYS)
}

/// Render a model config as a kv file (the checkpoint sidecar).
pub fn model_config_to_kv(cfg: &ModelConfig) -> String {
    format!(
        "d_v = {}\nd_a = {}\nd_t = {}\nl_v = {}\nl_a = {}\nl_t = {}\nl_prime = {}\nd_e = {}\nvocab = {}\nn_enc_layers = {}\nn_dec_layers = {}\nheads = {}\nfusion_heads = {}\nd_ff = {}\nmax_total_len = {}\n",
        cfg.d_v, cfg.d_a, cfg.d_t, cfg.l_v, cfg.l_a, cfg.l_t, cfg.l_prime, cfg.d_e,
        cfg.vocab, cfg.n_enc_layers, cfg.n_dec_layers, cfg.heads, cfg.fusion_heads,
        cfg.d_ff, cfg.max_total_len
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let kv = KvFile::parse("# a comment\npeak_lr = 0.001\nepochs = 3  # trailing\n").unwrap();
        let cfg = train_config_from(&kv, TrainConfig::default()).unwrap();
        assert_eq!(cfg.peak_lr, 0.001);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn rejects_unknown_keys() {
        let kv = KvFile::parse("bogus = 1\n").unwrap();
        assert!(check_train_file_keys(&kv).is_err());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvFile::parse("no equals sign here\n").is_err());
    }

    #[test]
    fn model_config_round_trips_through_kv() {
        let cfg = ModelConfig::default();
        let kv = KvFile::parse(&model_config_to_kv(&cfg)).unwrap();
        let parsed = model_config_from(&kv, ModelConfig::toy()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn synth_spec_parses_cue_mode() {
        let kv = KvFile::parse("cue_mode = correlated\nn_samples = 50\n").unwrap();
        let spec = synth_spec_from(&kv, SynthSpec::default()).unwrap();
        assert_eq!(spec.cue_mode, CueMode::Correlated);
        assert_eq!(spec.n_samples, 50);
    }

    #[test]
    fn invalid_values_are_input_errors() {
        let kv = KvFile::parse("epochs = banana\n").unwrap();
        assert!(matches!(
            train_config_from(&kv, TrainConfig::default()),
            Err(Error::Input(_))
        ));
    }
}
