//! Seed-deterministic synthetic sample generation.
//!
//! Fluent samples are smooth AR(1) feature walks with non-repeating token
//! streams. Stuttered samples carry cue signatures per `cue_mode`: audio
//! block repetitions (runs of identical frames), video tremor bursts
//! (high-frequency alternation), and repeated token n-grams.
//!
//! Each sample draws every channel (video, audio, text, cue placement) from
//! its own RNG stream, so disabling cue injection leaves the untouched
//! channels bitwise identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::features::ModalityFeatures;
use crate::numerics::tensor::Tensor;
use crate::training::metrics::MetricsReport;

/// Which modality carries the stutter signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CueMode {
    AudioOnly,
    VideoOnly,
    /// All three modalities carry cues, at independent offsets.
    Both,
    /// Cues share one temporal offset; video always carries the cue, audio
    /// and text only on every second stuttered sample, so part of the
    /// signature is visible to the video stream alone.
    Correlated,
}

impl CueMode {
    pub fn tag(self) -> &'static str {
        match self {
            CueMode::AudioOnly => "audio_only",
            CueMode::VideoOnly => "video_only",
            CueMode::Both => "both",
            CueMode::Correlated => "correlated",
        }
    }
}

impl std::str::FromStr for CueMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio_only" => Ok(CueMode::AudioOnly),
            "video_only" => Ok(CueMode::VideoOnly),
            "both" => Ok(CueMode::Both),
            "correlated" => Ok(CueMode::Correlated),
            other => Err(Error::Config(format!(
                "unknown cue_mode {other:?} (expected audio_only|video_only|both|correlated)"
            ))),
        }
    }
}

/// Generation recipe for a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub stutter_fraction: f64,
    pub l_v: usize,
    pub l_a: usize,
    pub l_t: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub vocab: usize,
    pub seed: u64,
    pub cue_mode: CueMode,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_samples: 300,
            stutter_fraction: 0.5,
            l_v: 12,
            l_a: 12,
            l_t: 9,
            d_v: 8,
            d_a: 8,
            vocab: 8,
            seed: 7,
            cue_mode: CueMode::Both,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.stutter_fraction) {
            return Err(Error::Config(format!(
                "stutter_fraction {} outside [0, 1]",
                self.stutter_fraction
            )));
        }
        for (name, v) in [("d_v", self.d_v), ("d_a", self.d_a)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab < 4 {
            return Err(Error::Config(format!(
                "vocab = {} too small (terminal token plus content tokens need >= 4)",
                self.vocab
            )));
        }
        // Cue runs span up to 6 frames / 6 tokens; leave room to place them.
        for (name, l) in [("l_v", self.l_v), ("l_a", self.l_a), ("l_t", self.l_t)] {
            if l < 8 {
                return Err(Error::Config(format!(
                    "{name} = {l} too short to host cue runs (need >= 8)"
                )));
            }
        }
        Ok(())
    }
}

/// A loaded corpus and the vocabulary bound its tokens respect.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: usize,
    pub samples: Vec<ModalityFeatures>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label == 1).count();
        (self.len() - pos, pos)
    }
}

// Channel ids for per-sample RNG streams.
const CH_VIDEO: u64 = 0;
const CH_AUDIO: u64 = 1;
const CH_TEXT: u64 = 2;
const CH_CUE: u64 = 3;

fn stream(seed: u64, sample: u64, channel: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample.to_le_bytes());
    key[16..24].copy_from_slice(&channel.to_le_bytes());
    key[24..32].copy_from_slice(&0x4d4d53445f44u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Smooth AR(1) walk: `x[t] = 0.95 x[t-1] + 0.04 eps`.
fn feature_walk(rng: &mut ChaCha8Rng, len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; len * width];
    for j in 0..width {
        let e: f64 = StandardNormal.sample(rng);
        data[j] = 0.08 * e;
    }
    for t in 1..len {
        for j in 0..width {
            let e: f64 = StandardNormal.sample(rng);
            data[t * width + j] = 0.95 * data[(t - 1) * width + j] + 0.04 * e;
        }
    }
    Tensor::from_parts(vec![len, width], data)
}

/// Token id reserved as the utterance terminator; every transcript ends
/// with it and content tokens avoid it.
pub const TERMINAL_TOKEN: u32 = 0;

/// Fixed-length token stream: content drawn from `[1, vocab)` with no
/// immediate unigram, bigram, or trigram block repeats, closed by the
/// terminal token.
fn fluent_tokens(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    let content = len - 1;
    let mut out: Vec<u32> = Vec::with_capacity(len);
    for k in 0..content {
        let mut tries = 0;
        loop {
            let c = rng.random_range(1..vocab.max(2) as u32);
            let unigram = k >= 1 && c == out[k - 1];
            let bigram = k >= 3 && c == out[k - 2] && out[k - 1] == out[k - 3];
            let trigram = k >= 5
                && c == out[k - 3]
                && out[k - 1] == out[k - 4]
                && out[k - 2] == out[k - 5];
            if !(unigram || bigram || trigram) {
                out.push(c);
                break;
            }
            tries += 1;
            if tries > 100 {
                // Tiny vocabulary; fall back deterministically.
                out.push(1 + (out[k - 1]) % (vocab.max(2) as u32 - 1));
                break;
            }
        }
    }
    out.push(TERMINAL_TOKEN);
    out
}

fn inject_audio_repetition(audio: &mut Tensor, rng: &mut ChaCha8Rng, at: Option<(usize, usize)>) {
    let len = audio.shape()[0];
    let width = audio.shape()[1];
    let (run, offset) = match at {
        Some(ra) => ra,
        None => {
            let run = rng.random_range(3..=6usize).min(len);
            (run, rng.random_range(0..=len - run))
        }
    };
    // The stuck frame is held loud, like a blocked sound: exaggerate the
    // frame at the run start, then repeat it verbatim.
    let held: Vec<f64> = audio.row(offset).iter().map(|&v| 0.5 * v + 4.0).collect();
    for t in offset..offset + run {
        audio.data_mut()[t * width..(t + 1) * width].copy_from_slice(&held);
    }
}

fn inject_video_tremor(video: &mut Tensor, rng: &mut ChaCha8Rng, at: Option<(usize, usize)>) {
    let len = video.shape()[0];
    let width = video.shape()[1];
    let (run, offset) = match at {
        Some(ra) => ra,
        None => {
            let run = rng.random_range(3..=6usize).min(len);
            (run, rng.random_range(0..=len - run))
        }
    };
    // Tremor oscillates every frame along a fixed axis; the burst phase is
    // the only randomness.
    let center: Vec<f64> = video.row(offset).to_vec();
    let phase = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    for (k, t) in (offset..offset + run).enumerate() {
        let flip = phase * if k % 2 == 0 { 1.0 } else { -1.0 };
        for j in 0..width {
            video.data_mut()[t * width + j] = center[j] + flip * 5.0;
        }
    }
}

fn inject_token_repeat(tokens: &mut [u32], rng: &mut ChaCha8Rng, offset: Option<usize>) {
    let len = tokens.len();
    // Repeat a bigram or trigram twice more: span = n * 3.
    let n = if len >= 9 && rng.random_bool(0.5) { 3 } else { 2 };
    let span = n * 3;
    let offset = match offset {
        Some(o) => o.min(len - span),
        None => rng.random_range(0..=len - span),
    };
    for copy in 1..3 {
        for j in 0..n {
            tokens[offset + copy * n + j] = tokens[offset + j];
        }
    }
}

/// Generate a corpus; `inject` toggles cue insertion (used to verify that
/// untouched channels are bitwise independent of the cues).
pub fn generate_with_injection(spec: &SynthSpec, inject: bool) -> Result<Dataset> {
    spec.validate()?;
    let n_stutter = (spec.n_samples as f64 * spec.stutter_fraction).round() as usize;
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let mut video_rng = stream(spec.seed, i as u64, CH_VIDEO);
        let mut audio_rng = stream(spec.seed, i as u64, CH_AUDIO);
        let mut text_rng = stream(spec.seed, i as u64, CH_TEXT);
        let mut cue_rng = stream(spec.seed, i as u64, CH_CUE);

        // Fixed sequence lengths: every sample occupies the same slots after
        // compression and assembly, so positional structure carries no
        // label-independent variation.
        let len_v = spec.l_v;
        let len_a = spec.l_a;
        let len_t = spec.l_t;

        let mut video = feature_walk(&mut video_rng, len_v, spec.d_v);
        let mut audio = feature_walk(&mut audio_rng, len_a, spec.d_a);
        let mut tokens = fluent_tokens(&mut text_rng, len_t, spec.vocab);

        let label = u8::from(i < n_stutter);
        if label == 1 && inject {
            match spec.cue_mode {
                CueMode::AudioOnly => inject_audio_repetition(&mut audio, &mut cue_rng, None),
                CueMode::VideoOnly => inject_video_tremor(&mut video, &mut cue_rng, None),
                CueMode::Both => {
                    inject_audio_repetition(&mut audio, &mut cue_rng, None);
                    inject_video_tremor(&mut video, &mut cue_rng, None);
                    inject_token_repeat(&mut tokens[..len_t - 1], &mut cue_rng, None);
                }
                CueMode::Correlated => {
                    let frac: f64 = cue_rng.random_range(0.05..0.70);
                    let run = cue_rng.random_range(3..=6usize);
                    let off_v = (frac * (len_v - run) as f64).floor() as usize;
                    inject_video_tremor(&mut video, &mut cue_rng, Some((run, off_v)));
                    if i % 2 == 0 {
                        let off_a = (frac * (len_a - run) as f64).floor() as usize;
                        inject_audio_repetition(&mut audio, &mut cue_rng, Some((run, off_a)));
                        let off_t = (frac * (len_t - 1) as f64).floor() as usize;
                        inject_token_repeat(&mut tokens[..len_t - 1], &mut cue_rng, Some(off_t));
                    }
                }
            }
        }
        samples.push(ModalityFeatures { video, audio, text_tokens: tokens, label });
    }
    Ok(Dataset { vocab: spec.vocab, samples })
}

/// Generate the corpus described by `spec`; byte-identical per seed.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    generate_with_injection(spec, true)
}

/// Length of the longest run of consecutive identical rows.
pub fn max_identical_run(t: &Tensor) -> usize {
    let rows = t.nrows();
    if rows == 0 {
        return 0;
    }
    let mut best = 1;
    let mut current = 1;
    for i in 1..rows {
        if t.row(i) == t.row(i - 1) {
            current += 1;
            best = best.max(current);
        } else {
            current = 1;
        }
    }
    best
}

/// Rule-based oracle: stuttered iff the audio stream holds a run of at
/// least three identical frames.
pub fn detector_predict(sample: &ModalityFeatures) -> u8 {
    u8::from(max_identical_run(&sample.audio) >= 3)
}

/// Oracle metrics over a whole dataset.
pub fn detector_report(dataset: &Dataset) -> MetricsReport {
    let mut report = MetricsReport::default();
    for s in &dataset.samples {
        report.record(s.label, detector_predict(s));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec { n_samples: 20, ..SynthSpec::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn label_counts_are_exact() {
        let spec = SynthSpec { n_samples: 100, stutter_fraction: 0.5, ..SynthSpec::default() };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.label_counts(), (50, 50));

        let spec = SynthSpec { n_samples: 10, stutter_fraction: 0.3, ..SynthSpec::default() };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.label_counts(), (7, 3));
    }

    #[test]
    fn detector_separates_audio_cued_modes() {
        for mode in [CueMode::AudioOnly, CueMode::Both] {
            let spec = SynthSpec { n_samples: 100, cue_mode: mode, ..SynthSpec::default() };
            let ds = generate(&spec).unwrap();
            let report = detector_report(&ds);
            assert!(
                report.f1() >= 0.99,
                "detector f1 {} on {:?}",
                report.f1(),
                mode
            );
        }
    }

    #[test]
    fn fluent_samples_have_no_detectable_runs() {
        let spec = SynthSpec { n_samples: 60, cue_mode: CueMode::Both, ..SynthSpec::default() };
        let ds = generate(&spec).unwrap();
        for s in ds.samples.iter().filter(|s| s.label == 0) {
            assert!(max_identical_run(&s.audio) < 3);
            assert_eq!(detector_predict(s), 0);
        }
        for s in ds.samples.iter().filter(|s| s.label == 1) {
            assert!(max_identical_run(&s.audio) >= 3);
        }
    }

    #[test]
    fn video_only_cues_leave_audio_bitwise_untouched() {
        let spec = SynthSpec { n_samples: 40, cue_mode: CueMode::VideoOnly, ..SynthSpec::default() };
        let with = generate_with_injection(&spec, true).unwrap();
        let without = generate_with_injection(&spec, false).unwrap();
        let mut video_changed = 0;
        for (a, b) in with.samples.iter().zip(&without.samples) {
            assert_eq!(a.audio, b.audio);
            assert_eq!(a.text_tokens, b.text_tokens);
            if a.video != b.video {
                video_changed += 1;
            }
        }
        assert_eq!(video_changed, 20, "every stuttered sample gets a tremor");
    }

    #[test]
    fn correlated_mode_keeps_some_cues_video_only() {
        let spec = SynthSpec { n_samples: 40, cue_mode: CueMode::Correlated, ..SynthSpec::default() };
        let ds = generate(&spec).unwrap();
        let stuttered: Vec<_> = ds.samples.iter().filter(|s| s.label == 1).collect();
        assert_eq!(stuttered.len(), 20);
        let audio_carrying = stuttered.iter().filter(|s| detector_predict(s) == 1).count();
        assert_eq!(audio_carrying, 10, "half the stuttered samples carry the audio cue");
        // Every fluent sample stays clean.
        for s in ds.samples.iter().filter(|s| s.label == 0) {
            assert_eq!(detector_predict(s), 0);
        }
    }

    #[test]
    fn fluent_token_streams_avoid_block_repeats() {
        let spec = SynthSpec { n_samples: 30, ..SynthSpec::default() };
        let ds = generate_with_injection(&spec, false).unwrap();
        for s in &ds.samples {
            let t = &s.text_tokens;
            for k in 1..t.len() {
                assert_ne!(t[k], t[k - 1], "unigram run in {t:?}");
            }
            for k in 3..t.len() {
                assert!(
                    !(t[k] == t[k - 2] && t[k - 1] == t[k - 3]),
                    "bigram block repeat in {t:?}"
                );
            }
        }
    }

    #[test]
    fn zero_samples_is_a_config_error() {
        let spec = SynthSpec { n_samples: 0, ..SynthSpec::default() };
        assert!(generate(&spec).is_err());
    }
}
