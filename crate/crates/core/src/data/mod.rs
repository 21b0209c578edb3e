//! Synthetic multi-modal disfluency corpus and bit-exact dataset I/O.

pub mod fileio;
pub mod manifest;
pub mod split;
pub mod synth;

pub use fileio::{read_dataset, write_dataset};
pub use manifest::{ManifestEntry, Split};
pub use split::{split, split_tags};
pub use synth::{detector_predict, detector_report, generate, CueMode, Dataset, SynthSpec};
